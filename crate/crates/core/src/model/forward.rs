use crate::error::{PncError, Result};
use crate::numerics::{
    convolve_partition, log_softmax_into, weighted_log_sum, HalfKernel, LayerBuffer,
};
use crate::structure::{validate_query, Children, PartitionLayout};

use super::{LeafMode, Model, SumParams};

/// Normalized log-weight tables for one parameter setting. Building it costs
/// one pass over the parameters; evaluating samples against it is then cheap.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub model: &'a Model,
    /// `[classes, V, N_D, K]` log-probabilities (categorical leaves only).
    pub leaf_logp: Vec<f64>,
    /// `[classes, V, N_C, N_D]`.
    pub leaf_logw: Vec<f64>,
    /// Per internal layer `[P, N_C, N_C]` for plain and quotient layers,
    /// empty for neural layers (their weights depend on the input).
    pub layer_logw: Vec<Vec<f64>>,
    /// `[classes, N_C]`.
    pub root_logw: Vec<f64>,
}

/// Values cached by one forward evaluation, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub class: usize,
    /// Marginalization mask used for this evaluation (empty = full evidence).
    pub marginalized: Vec<bool>,
    /// `[V, N_D]` leaf values after `init`.
    pub leaf_raw: Vec<f64>,
    pub stages: Vec<Stage>,
    pub log_density: f64,
}

/// Values of one layer: product output (empty for the leaf layer), sum output
/// (empty for the root layer) and, for neural layers, the per-partition
/// log-weights `[P, N_C, N_C]` plus hidden activations of a depth-2 network.
#[derive(Debug, Clone, Default)]
pub struct Stage {
    pub product: Vec<f64>,
    pub output: Vec<f64>,
    pub weights: Vec<f64>,
    pub hidden: Vec<f64>,
}

fn normalize_rows(logits: &[f64], row: usize, bypass: bool) -> Vec<f64> {
    if bypass || row == 0 {
        return logits.to_vec();
    }
    let mut out = vec![0.0; logits.len()];
    for (o, z) in out.chunks_exact_mut(row).zip(logits.chunks_exact(row)) {
        log_softmax_into(z, o);
    }
    out
}

impl<'a> Prepared<'a> {
    pub fn new(model: &'a Model) -> Self {
        let s = &model.structure;
        let bypass = model.normalization_bypassed();
        let p = &model.params;
        let k = *p.leaf_logits.shape.last().unwrap();
        let layer_logw = p
            .layers
            .iter()
            .map(|layer| match layer {
                SumParams::Plain { logits } | SumParams::Quotient { logits } => {
                    normalize_rows(&logits.data, s.num_components, bypass)
                }
                SumParams::Neural { .. } => Vec::new(),
            })
            .collect();
        Prepared {
            model,
            leaf_logp: normalize_rows(&p.leaf_logits.data, k, false),
            leaf_logw: normalize_rows(&p.leaf_weights.data, s.num_leaf_components, bypass),
            layer_logw,
            root_logw: normalize_rows(&p.root_weights.data, s.num_components, bypass),
        }
    }

    /// Leaf values after `init`: `log f(x_v)` for evidence, 0 for marginalized.
    pub fn leaf_values(&self, values: &[u8], marginalized: Option<&[bool]>, class: usize) -> Vec<f64> {
        let m = self.model;
        let v_count = m.num_variables();
        let nd = m.structure.num_leaf_components;
        let mut raw = vec![0.0; v_count * nd];
        match m.options.leaf_mode {
            LeafMode::Categorical => {
                let k = m.options.num_categories;
                let base = class * v_count * nd * k;
                for v in 0..v_count {
                    if marginalized.is_some_and(|mask| mask[v]) {
                        continue;
                    }
                    let x = values[v] as usize;
                    for d in 0..nd {
                        raw[v * nd + d] = self.leaf_logp[base + (v * nd + d) * k + x];
                    }
                }
            }
            LeafMode::TwoInput => {
                for v in 0..v_count {
                    if marginalized.is_some_and(|mask| mask[v]) {
                        continue;
                    }
                    let x = values[v] as f64 / 255.0;
                    raw[v * 2] = x.ln();
                    raw[v * 2 + 1] = (1.0 - x).ln();
                }
            }
        }
        raw
    }

    /// Full layer-wise evaluation with every intermediate value retained.
    pub fn trace(&self, values: &[u8], marginalized: Option<&[bool]>, class: usize) -> Trace {
        let m = self.model;
        let s = &m.structure;
        let nc = s.num_components;
        let nd = s.num_leaf_components;
        let v_count = s.num_variables;
        let floor = m.options.input_floor;

        let leaf_raw = self.leaf_values(values, marginalized, class);
        let mut leaf_out = vec![0.0; v_count * nc];
        let leaf_w = &self.leaf_logw[class * v_count * nc * nd..(class + 1) * v_count * nc * nd];
        mixture_into(&leaf_raw, nd, leaf_w, nc, &mut leaf_out);

        let num_layers = s.num_layers();
        let mut stages = Vec::with_capacity(num_layers);
        stages.push(Stage {
            output: leaf_out,
            ..Default::default()
        });
        for l in 1..num_layers {
            let layout = &s.layers[l];
            let mut stage = Stage::default();
            product_into(&stages[l - 1].output, nc, &layout.children, &mut stage.product);
            if l < num_layers - 1 {
                let mut out = vec![0.0; layout.num_partitions() * nc];
                match &m.params.layers[l - 1] {
                    SumParams::Plain { .. } => {
                        mixture_into(&stage.product, nc, &self.layer_logw[l - 1], nc, &mut out)
                    }
                    SumParams::Quotient { .. } => {
                        quotient_into(&stage.product, nc, layout, &self.layer_logw[l - 1], &mut out)
                    }
                    params @ SumParams::Neural { .. } => neural_into(
                        &stage.product,
                        nc,
                        layout,
                        params,
                        floor,
                        &mut out,
                        &mut stage.weights,
                        &mut stage.hidden,
                    ),
                }
                stage.output = out;
            }
            stages.push(stage);
        }
        let root_in = root_input(&stages);
        let root_w = &self.root_logw[class * nc..(class + 1) * nc];
        let log_density = weighted_log_sum(root_in, root_w);
        Trace {
            class,
            marginalized: marginalized.map(|m| m.to_vec()).unwrap_or_default(),
            leaf_raw,
            stages,
            log_density,
        }
    }

    pub fn log_density(&self, values: &[u8], marginalized: Option<&[bool]>, class: usize) -> f64 {
        self.trace(values, marginalized, class).log_density
    }
}

/// The buffer consumed by the root sum: last product output, or the leaf sum
/// output when the circuit has a single layer.
pub fn root_input(stages: &[Stage]) -> &[f64] {
    if stages.len() == 1 {
        &stages[0].output
    } else {
        &stages.last().unwrap().product
    }
}

pub(crate) fn product_into(input: &[f64], nc: usize, children: &[Children], out: &mut Vec<f64>) {
    out.clear();
    out.reserve(children.len() * nc);
    for ch in children {
        let a = &input[ch.first() * nc..(ch.first() + 1) * nc];
        match ch.second() {
            Some(b) => {
                let b = &input[b * nc..(b + 1) * nc];
                out.extend(a.iter().zip(b).map(|(x, y)| x + y));
            }
            None => out.extend_from_slice(a),
        }
    }
}

/// `out[p, c] = log sum_c' exp(logw[p, c, c'] + input[p, c'])`.
pub(crate) fn mixture_into(input: &[f64], n_in: usize, logw: &[f64], n_out: usize, out: &mut [f64]) {
    let parts = out.len() / n_out;
    for p in 0..parts {
        let x = &input[p * n_in..(p + 1) * n_in];
        for c in 0..n_out {
            let w = &logw[(p * n_out + c) * n_in..(p * n_out + c + 1) * n_in];
            out[p * n_out + c] = weighted_log_sum(x, w);
        }
    }
}

/// Sum of the component values of the preceding partitions, per component.
pub(crate) fn preceding_sum(input: &[f64], nc: usize, layout: &PartitionLayout, p: usize, s: &mut [f64]) {
    s.iter_mut().for_each(|v| *v = 0.0);
    for d in &layout.dependencies[p] {
        for (acc, x) in s.iter_mut().zip(&input[d.partition * nc..(d.partition + 1) * nc]) {
            *acc += x;
        }
    }
}

pub(crate) fn quotient_into(
    input: &[f64],
    nc: usize,
    layout: &PartitionLayout,
    logw: &[f64],
    out: &mut [f64],
) {
    let mut s = vec![0.0; nc];
    let mut joint = vec![0.0; nc];
    for p in 0..layout.num_partitions() {
        let x = &input[p * nc..(p + 1) * nc];
        if layout.dependencies[p].is_empty() {
            for c in 0..nc {
                out[p * nc + c] = weighted_log_sum(x, &logw[(p * nc + c) * nc..(p * nc + c + 1) * nc]);
            }
            continue;
        }
        preceding_sum(input, nc, layout, p, &mut s);
        for c in 0..nc {
            joint[c] = x[c] + s[c];
        }
        for c in 0..nc {
            let w = &logw[(p * nc + c) * nc..(p * nc + c + 1) * nc];
            out[p * nc + c] = weighted_log_sum(&joint, w) - weighted_log_sum(&s, w);
        }
    }
}

pub(crate) fn kernel_of<'p>(
    params: &'p SumParams,
    layout: &PartitionLayout,
    nc: usize,
) -> (HalfKernel<'p>, Option<(&'p [f64], &'p [f64])>) {
    let SumParams::Neural { taps, bias, hidden } = params else {
        panic!("kernel_of on a non-neural layer");
    };
    match hidden {
        None => (
            HalfKernel {
                taps: &taps.data,
                bias: &bias.data,
                num_taps: layout.num_taps,
                out_channels: nc * nc,
                in_channels: nc,
            },
            None,
        ),
        Some(h) => (
            HalfKernel {
                taps: &taps.data,
                bias: &h.hidden_bias.data,
                num_taps: layout.num_taps,
                out_channels: h.hidden_bias.shape[1],
                in_channels: nc,
            },
            Some((&h.head.data, &bias.data)),
        ),
    }
}

/// Neural sum layer; fills `weights` with `[P, N_C, N_C]` log-weights and,
/// for depth 2, `hidden` with `[P, H]` tanh activations.
#[allow(clippy::too_many_arguments)]
pub(crate) fn neural_into(
    input: &[f64],
    nc: usize,
    layout: &PartitionLayout,
    params: &SumParams,
    floor: f64,
    out: &mut [f64],
    weights: &mut Vec<f64>,
    hidden: &mut Vec<f64>,
) {
    let parts = layout.num_partitions();
    let (kernel, head) = kernel_of(params, layout, nc);
    let nn = nc * nc;
    weights.clear();
    weights.resize(parts * nn, 0.0);
    let mut logits = vec![0.0; nn];
    match head {
        None => hidden.clear(),
        Some(_) => {
            hidden.clear();
            hidden.resize(parts * kernel.out_channels, 0.0);
        }
    }
    for p in 0..parts {
        let deps = &layout.dependencies[p];
        match head {
            None => convolve_partition(input, nc, deps, &kernel, p, floor, &mut logits),
            Some((head_w, head_b)) => {
                let hsize = kernel.out_channels;
                let h = &mut hidden[p * hsize..(p + 1) * hsize];
                convolve_partition(input, nc, deps, &kernel, p, floor, h);
                h.iter_mut().for_each(|v| *v = v.tanh());
                logits.copy_from_slice(&head_b[p * nn..(p + 1) * nn]);
                for (o, row) in logits.iter_mut().zip(head_w.chunks_exact(hsize)) {
                    *o += row.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let w = &mut weights[p * nn..(p + 1) * nn];
        for (wrow, zrow) in w.chunks_exact_mut(nc).zip(logits.chunks_exact(nc)) {
            log_softmax_into(zrow, wrow);
        }
        let x = &input[p * nc..(p + 1) * nc];
        for c in 0..nc {
            out[p * nc + c] = weighted_log_sum(x, &w[c * nc..(c + 1) * nc]);
        }
    }
}

/// `init`: leaf values `[V, N_D]` for an evidence assignment, log 1 = 0 for
/// marginalized variables.
pub fn init_leaves(
    model: &Model,
    values: &[u8],
    marginalized: &[bool],
    class: usize,
) -> Result<LayerBuffer> {
    model.check_assignment(values)?;
    check_mask(model, marginalized)?;
    check_class(model, class)?;
    let raw = Prepared::new(model).leaf_values(values, Some(marginalized), class);
    Ok(LayerBuffer::new(
        raw,
        model.structure.num_leaf_components,
        model.structure.leaf_grid(),
    ))
}

/// Pairs partitions of `buffer` according to `layout_out.children`.
pub fn product_layer(buffer: &LayerBuffer, layout_out: &PartitionLayout) -> LayerBuffer {
    let mut out = Vec::new();
    product_into(&buffer.values, buffer.num_components, &layout_out.children, &mut out);
    LayerBuffer::new(out, buffer.num_components, layout_out.grid)
}

/// Plain sum layer with weight logits `[P, N_out, N_in]`.
pub fn plain_sum_layer(buffer: &LayerBuffer, weight_logits: &[f64]) -> LayerBuffer {
    let n_in = buffer.num_components;
    let n_out = weight_logits.len() / (buffer.num_partitions * n_in);
    let logw = normalize_rows(weight_logits, n_in, false);
    let mut out = vec![0.0; buffer.num_partitions * n_out];
    mixture_into(&buffer.values, n_in, &logw, n_out, &mut out);
    LayerBuffer::new(out, n_out, buffer.grid)
}

/// Neural sum layer over the product output `buffer` of the same layer.
pub fn neural_sum_layer(
    buffer: &LayerBuffer,
    layout: &PartitionLayout,
    params: &SumParams,
    floor: f64,
) -> LayerBuffer {
    let nc = buffer.num_components;
    let mut out = vec![0.0; buffer.values.len()];
    let (mut w, mut h) = (Vec::new(), Vec::new());
    neural_into(&buffer.values, nc, layout, params, floor, &mut out, &mut w, &mut h);
    LayerBuffer::new(out, nc, buffer.grid)
}

/// Conditional mixing operator with weight logits `[P, N_C, N_C]`.
pub fn quotient_sum_layer(
    buffer: &LayerBuffer,
    weight_logits: &[f64],
    layout: &PartitionLayout,
) -> LayerBuffer {
    let nc = buffer.num_components;
    let logw = normalize_rows(weight_logits, nc, false);
    let mut out = vec![0.0; buffer.values.len()];
    quotient_into(&buffer.values, nc, layout, &logw, &mut out);
    LayerBuffer::new(out, nc, buffer.grid)
}

fn check_mask(model: &Model, marginalized: &[bool]) -> Result<()> {
    if marginalized.len() != model.num_variables() {
        return Err(PncError::Input(format!(
            "marginalization mask has {} entries, model has {} variables",
            marginalized.len(),
            model.num_variables()
        )));
    }
    Ok(())
}

pub(crate) fn check_class(model: &Model, class: usize) -> Result<()> {
    if class >= model.num_classes() {
        return Err(PncError::Input(format!(
            "class {class} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Evaluates `log p(x_o)` with the variables in `marginalized` summed out.
/// Values at marginalized positions are ignored.
pub fn forward(model: &Model, values: &[u8], marginalized: &[bool], class: usize) -> Result<f64> {
    check_mask(model, marginalized)?;
    check_class(model, class)?;
    validate_query(&model.structure, marginalized)?;
    if values.len() != model.num_variables() {
        return Err(PncError::Input(format!(
            "assignment has {} values, model has {} variables",
            values.len(),
            model.num_variables()
        )));
    }
    let evidence: Vec<u8> = values
        .iter()
        .zip(marginalized)
        .map(|(&x, &m)| if m { 0 } else { x })
        .collect();
    model.check_assignment(&evidence)?;
    Ok(Prepared::new(model).log_density(values, Some(marginalized), class))
}
