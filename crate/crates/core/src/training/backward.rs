//! Reverse-mode pass over the fixed layer graph.
//!
//! Gradients are accumulated into a [`Parameters`]-shaped buffer in which
//! every softmax-parameterized tensor (leaf logits, leaf/internal/root weight
//! logits) holds the gradient w.r.t. the *normalized* log-table, while neural
//! tensors hold gradients w.r.t. the raw parameters. [`finalize`] maps the
//! former back through the softmax. The map is linear, so it runs once per
//! batch after all per-sample contributions have been summed.

use crate::model::{root_input, Model, Parameters, Prepared, SumParams, Trace};
use crate::model::LeafMode;
use crate::numerics::{
    convolve_partition_backward, log_softmax_backward, weighted_log_sum,
    weighted_log_sum_backward,
};
use crate::structure::PartitionLayout;

use crate::model::forward::{kernel_of, preceding_sum};

/// Accumulates `upstream * d log_density / d params` for one traced sample.
pub fn backward_sample(prep: &Prepared<'_>, values: &[u8], trace: &Trace, upstream: f64, acc: &mut Parameters) {
    if upstream == 0.0 {
        return;
    }
    let model = prep.model;
    let s = &model.structure;
    let nc = s.num_components;
    let nd = s.num_leaf_components;
    let v_count = s.num_variables;
    let class = trace.class;
    let num_layers = s.num_layers();
    let floor = model.options.input_floor;

    // root sum
    let root_in = root_input(&trace.stages);
    let mut grad = vec![0.0; root_in.len()];
    weighted_log_sum_backward(
        root_in,
        &prep.root_logw[class * nc..(class + 1) * nc],
        trace.log_density,
        upstream,
        &mut grad,
        &mut acc.root_weights.data[class * nc..(class + 1) * nc],
    );

    for l in (1..num_layers).rev() {
        let layout = &s.layers[l];
        let stage = &trace.stages[l];
        // `grad` is w.r.t. the sum output, or the product output at the root layer
        let grad_product = if l < num_layers - 1 {
            let mut gp = vec![0.0; stage.product.len()];
            match (&model.params.layers[l - 1], &mut acc.layers[l - 1]) {
                (SumParams::Plain { .. }, SumParams::Plain { logits }) => mixture_backward(
                    &stage.product,
                    &prep.layer_logw[l - 1],
                    &stage.output,
                    &grad,
                    nc,
                    &mut gp,
                    &mut logits.data,
                ),
                (SumParams::Quotient { .. }, SumParams::Quotient { logits }) => quotient_backward(
                    &stage.product,
                    layout,
                    &prep.layer_logw[l - 1],
                    &grad,
                    nc,
                    &mut gp,
                    &mut logits.data,
                ),
                (params @ SumParams::Neural { .. }, acc_layer @ SumParams::Neural { .. }) => {
                    neural_backward(
                        &stage.product,
                        layout,
                        params,
                        &stage.weights,
                        &stage.hidden,
                        &stage.output,
                        &grad,
                        nc,
                        floor,
                        &mut gp,
                        acc_layer,
                    )
                }
                _ => unreachable!("gradient buffer does not mirror the model"),
            }
            gp
        } else {
            grad
        };
        let mut below = vec![0.0; s.layers[l - 1].num_partitions() * nc];
        for (p, ch) in layout.children.iter().enumerate() {
            let g = &grad_product[p * nc..(p + 1) * nc];
            for child in [Some(ch.first()), ch.second()].into_iter().flatten() {
                for (b, x) in below[child * nc..(child + 1) * nc].iter_mut().zip(g) {
                    *b += x;
                }
            }
        }
        grad = below;
    }

    // leaf sum
    let lw_base = class * v_count * nc * nd;
    let mut grad_raw = vec![0.0; v_count * nd];
    let leaf_out = &trace.stages[0].output;
    for v in 0..v_count {
        let raw = &trace.leaf_raw[v * nd..(v + 1) * nd];
        for c in 0..nc {
            let off = lw_base + (v * nc + c) * nd;
            weighted_log_sum_backward(
                raw,
                &prep.leaf_logw[off..off + nd],
                leaf_out[v * nc + c],
                grad[v * nc + c],
                &mut grad_raw[v * nd..(v + 1) * nd],
                &mut acc.leaf_weights.data[off..off + nd],
            );
        }
    }

    if model.options.leaf_mode == LeafMode::Categorical {
        let k = model.options.num_categories;
        let base = class * v_count * nd * k;
        for v in 0..v_count {
            if trace.marginalized.get(v).copied().unwrap_or(false) {
                continue;
            }
            let x = values[v] as usize;
            for d in 0..nd {
                acc.leaf_logits.data[base + (v * nd + d) * k + x] += grad_raw[v * nd + d];
            }
        }
    }
}

fn mixture_backward(
    input: &[f64],
    logw: &[f64],
    output: &[f64],
    grad_out: &[f64],
    nc: usize,
    grad_in: &mut [f64],
    grad_logw: &mut [f64],
) {
    for p in 0..grad_in.len() / nc {
        let x = &input[p * nc..(p + 1) * nc];
        for c in 0..nc {
            let off = (p * nc + c) * nc;
            weighted_log_sum_backward(
                x,
                &logw[off..off + nc],
                output[p * nc + c],
                grad_out[p * nc + c],
                &mut grad_in[p * nc..(p + 1) * nc],
                &mut grad_logw[off..off + nc],
            );
        }
    }
}

fn quotient_backward(
    input: &[f64],
    layout: &PartitionLayout,
    logw: &[f64],
    grad_out: &[f64],
    nc: usize,
    grad_in: &mut [f64],
    grad_logw: &mut [f64],
) {
    let mut s = vec![0.0; nc];
    let mut joint = vec![0.0; nc];
    let mut d_joint = vec![0.0; nc];
    let mut d_s = vec![0.0; nc];
    for p in 0..layout.num_partitions() {
        let x = &input[p * nc..(p + 1) * nc];
        preceding_sum(input, nc, layout, p, &mut s);
        for c in 0..nc {
            joint[c] = x[c] + s[c];
        }
        d_joint.iter_mut().for_each(|v| *v = 0.0);
        d_s.iter_mut().for_each(|v| *v = 0.0);
        let has_deps = !layout.dependencies[p].is_empty();
        for c in 0..nc {
            let g = grad_out[p * nc + c];
            let off = (p * nc + c) * nc;
            let w = &logw[off..off + nc];
            let num = weighted_log_sum(&joint, w);
            weighted_log_sum_backward(&joint, w, num, g, &mut d_joint, &mut grad_logw[off..off + nc]);
            if has_deps {
                let den = weighted_log_sum(&s, w);
                weighted_log_sum_backward(&s, w, den, -g, &mut d_s, &mut grad_logw[off..off + nc]);
            }
        }
        for c in 0..nc {
            grad_in[p * nc + c] += d_joint[c];
            d_s[c] += d_joint[c];
        }
        for d in &layout.dependencies[p] {
            for c in 0..nc {
                grad_in[d.partition * nc + c] += d_s[c];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn neural_backward(
    input: &[f64],
    layout: &PartitionLayout,
    params: &SumParams,
    weights: &[f64],
    hidden: &[f64],
    output: &[f64],
    grad_out: &[f64],
    nc: usize,
    floor: f64,
    grad_in: &mut [f64],
    acc: &mut SumParams,
) {
    let SumParams::Neural {
        taps: d_taps,
        bias: d_bias,
        hidden: d_hidden,
    } = acc
    else {
        unreachable!()
    };
    let (kernel, head) = kernel_of(params, layout, nc);
    let nn = nc * nc;
    let mut d_logw = vec![0.0; nn];
    let mut d_logits = vec![0.0; nn];
    let hsize = kernel.out_channels;
    let mut d_h = vec![0.0; if head.is_some() { hsize } else { 0 }];
    for p in 0..layout.num_partitions() {
        let x = &input[p * nc..(p + 1) * nc];
        let w = &weights[p * nn..(p + 1) * nn];
        d_logw.iter_mut().for_each(|v| *v = 0.0);
        let mut any = false;
        for c in 0..nc {
            let g = grad_out[p * nc + c];
            if g != 0.0 {
                any = true;
            }
            weighted_log_sum_backward(
                x,
                &w[c * nc..(c + 1) * nc],
                output[p * nc + c],
                g,
                &mut grad_in[p * nc..(p + 1) * nc],
                &mut d_logw[c * nc..(c + 1) * nc],
            );
        }
        if !any {
            continue;
        }
        d_logits.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..nc {
            log_softmax_backward(
                &w[c * nc..(c + 1) * nc],
                &d_logw[c * nc..(c + 1) * nc],
                &mut d_logits[c * nc..(c + 1) * nc],
            );
        }
        let deps = &layout.dependencies[p];
        match (head, d_hidden.as_mut()) {
            (None, _) => convolve_partition_backward(
                input,
                nc,
                deps,
                &kernel,
                p,
                floor,
                &d_logits,
                &mut d_taps.data,
                &mut d_bias.data,
                grad_in,
            ),
            (Some((head_w, _)), Some(dh)) => {
                let h = &hidden[p * hsize..(p + 1) * hsize];
                for (db, g) in d_bias.data[p * nn..(p + 1) * nn].iter_mut().zip(&d_logits) {
                    *db += g;
                }
                d_h.iter_mut().for_each(|v| *v = 0.0);
                for (o, &g) in d_logits.iter().enumerate() {
                    let row = &head_w[o * hsize..(o + 1) * hsize];
                    let drow = &mut dh.head.data[o * hsize..(o + 1) * hsize];
                    for j in 0..hsize {
                        drow[j] += g * h[j];
                        d_h[j] += g * row[j];
                    }
                }
                for (dv, hv) in d_h.iter_mut().zip(h) {
                    *dv *= 1.0 - hv * hv;
                }
                convolve_partition_backward(
                    input,
                    nc,
                    deps,
                    &kernel,
                    p,
                    floor,
                    &d_h,
                    &mut d_taps.data,
                    &mut dh.hidden_bias.data,
                    grad_in,
                );
            }
            (Some(_), None) => unreachable!("gradient buffer does not mirror the model"),
        }
    }
}

/// Maps accumulated gradients w.r.t. normalized log-tables onto the raw
/// logits (`d z_j = g_j - softmax_j * sum_i g_i` per normalized row).
pub fn finalize(model: &Model, prep: &Prepared<'_>, mut acc: Parameters) -> Parameters {
    let bypass = model.normalization_bypassed();
    let s = &model.structure;
    let k = *model.params.leaf_logits.shape.last().unwrap();
    through_softmax(&mut acc.leaf_logits.data, &prep.leaf_logp, k);
    if !bypass {
        through_softmax(&mut acc.leaf_weights.data, &prep.leaf_logw, s.num_leaf_components);
        through_softmax(&mut acc.root_weights.data, &prep.root_logw, s.num_components);
        for (layer, logw) in acc.layers.iter_mut().zip(&prep.layer_logw) {
            if let SumParams::Plain { logits } | SumParams::Quotient { logits } = layer {
                through_softmax(&mut logits.data, logw, s.num_components);
            }
        }
    }
    acc
}

fn through_softmax(grad: &mut [f64], log_probs: &[f64], row: usize) {
    if row == 0 {
        return;
    }
    let mut out = vec![0.0; row];
    for (g, lp) in grad.chunks_exact_mut(row).zip(log_probs.chunks_exact(row)) {
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        log_softmax_backward(lp, g, &mut out);
        g.copy_from_slice(&out);
    }
}
