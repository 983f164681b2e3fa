//! Log-space kernels shared by the forward and backward passes.
//!
//! Every forward kernel has a backward counterpart that takes the cached
//! forward output together with the upstream gradient.

use crate::structure::{Dependency, GridShape};

/// Floor applied to `-inf` (and anything below it) before values enter a
/// weight network.
pub const DEFAULT_INPUT_FLOOR: f64 = -100.0;

/// Per-layer value grid of log-probabilities, `[partition, component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBuffer {
    pub values: Vec<f64>,
    pub num_partitions: usize,
    pub num_components: usize,
    pub grid: GridShape,
}

impl LayerBuffer {
    pub fn new(values: Vec<f64>, num_components: usize, grid: GridShape) -> Self {
        let num_partitions = grid.len();
        assert_eq!(values.len(), num_partitions * num_components);
        LayerBuffer {
            values,
            num_partitions,
            num_components,
            grid,
        }
    }

    pub fn filled(value: f64, num_components: usize, grid: GridShape) -> Self {
        Self::new(vec![value; grid.len() * num_components], num_components, grid)
    }

    pub fn partition(&self, p: usize) -> &[f64] {
        &self.values[p * self.num_components..(p + 1) * self.num_components]
    }

    pub fn get(&self, p: usize, c: usize) -> f64 {
        self.values[p * self.num_components + c]
    }
}

/// `log sum exp(terms)` with max-shift. All `-inf` input yields `-inf`.
///
/// Panics on an empty slice.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    assert!(!terms.is_empty(), "log_sum_exp of an empty slice");
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// Gradient of [`log_sum_exp`]: `softmax(terms)`, zero when every term is `-inf`.
pub fn log_sum_exp_backward(terms: &[f64], result: f64, upstream: f64, grad: &mut [f64]) {
    assert_eq!(terms.len(), grad.len());
    if result == f64::NEG_INFINITY {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return;
    }
    for (g, &t) in grad.iter_mut().zip(terms) {
        *g = upstream * (t - result).exp();
    }
}

/// `log sum_i exp(log_w_i + log_v_i)`.
pub fn weighted_log_sum(log_values: &[f64], log_weights: &[f64]) -> f64 {
    assert_eq!(
        log_values.len(),
        log_weights.len(),
        "weighted_log_sum length mismatch"
    );
    assert!(!log_values.is_empty(), "weighted_log_sum of empty input");
    let mut max = f64::NEG_INFINITY;
    for (v, w) in log_values.iter().zip(log_weights) {
        max = max.max(v + w);
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut sum = 0.0;
    for (v, w) in log_values.iter().zip(log_weights) {
        sum += (v + w - max).exp();
    }
    max + sum.ln()
}

/// Accumulates the gradient of [`weighted_log_sum`] into `d_values` and
/// `d_weights` (both added to, not overwritten).
pub fn weighted_log_sum_backward(
    log_values: &[f64],
    log_weights: &[f64],
    result: f64,
    upstream: f64,
    d_values: &mut [f64],
    d_weights: &mut [f64],
) {
    if result == f64::NEG_INFINITY || upstream == 0.0 {
        return;
    }
    for i in 0..log_values.len() {
        let r = upstream * (log_values[i] + log_weights[i] - result).exp();
        d_values[i] += r;
        d_weights[i] += r;
    }
}

/// `logits - log_sum_exp(logits)`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_into(logits, &mut out);
    out
}

pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    let norm = log_sum_exp(logits);
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z - norm;
    }
}

/// Backprop through [`log_softmax`]: `d_logits_j += g_j - softmax_j * sum_i g_i`.
pub fn log_softmax_backward(log_probs: &[f64], upstream: &[f64], d_logits: &mut [f64]) {
    let total: f64 = upstream.iter().sum();
    for j in 0..log_probs.len() {
        d_logits[j] += upstream[j] - log_probs[j].exp() * total;
    }
}

/// Masked (half-kernel) convolution weights for one layer.
///
/// `taps` is `[num_taps, out_channels, in_channels]`, `bias` is
/// `[num_partitions, out_channels]`. Which partition sits under which tap is
/// given by the layer's dependency edges, so masked offsets never appear.
#[derive(Debug, Clone, Copy)]
pub struct HalfKernel<'a> {
    pub taps: &'a [f64],
    pub bias: &'a [f64],
    pub num_taps: usize,
    pub out_channels: usize,
    pub in_channels: usize,
}

impl HalfKernel<'_> {
    fn tap(&self, t: usize) -> &[f64] {
        let size = self.out_channels * self.in_channels;
        &self.taps[t * size..(t + 1) * size]
    }
}

#[inline]
fn floored(v: f64, floor: f64) -> f64 {
    if v > floor {
        v
    } else {
        floor
    }
}

/// Pre-softmax logits for a single partition `p`.
pub fn convolve_partition(
    input: &[f64],
    in_channels: usize,
    deps: &[Dependency],
    kernel: &HalfKernel<'_>,
    p: usize,
    floor: f64,
    out: &mut [f64],
) {
    let oc = kernel.out_channels;
    out.copy_from_slice(&kernel.bias[p * oc..(p + 1) * oc]);
    for d in deps {
        let x = &input[d.partition * in_channels..(d.partition + 1) * in_channels];
        let w = kernel.tap(d.tap);
        for (o, row) in out.iter_mut().zip(w.chunks_exact(in_channels)) {
            let mut acc = 0.0;
            for (wi, &xi) in row.iter().zip(x) {
                acc += wi * floored(xi, floor);
            }
            *o += acc;
        }
    }
}

/// Accumulates gradients of [`convolve_partition`] w.r.t. taps, bias and input.
#[allow(clippy::too_many_arguments)]
pub fn convolve_partition_backward(
    input: &[f64],
    in_channels: usize,
    deps: &[Dependency],
    kernel: &HalfKernel<'_>,
    p: usize,
    floor: f64,
    d_logits: &[f64],
    d_taps: &mut [f64],
    d_bias: &mut [f64],
    d_input: &mut [f64],
) {
    let oc = kernel.out_channels;
    for (db, &g) in d_bias[p * oc..(p + 1) * oc].iter_mut().zip(d_logits) {
        *db += g;
    }
    let size = oc * in_channels;
    for d in deps {
        let base = d.partition * in_channels;
        let x = &input[base..base + in_channels];
        let w = kernel.tap(d.tap);
        let dw = &mut d_taps[d.tap * size..(d.tap + 1) * size];
        let dx = &mut d_input[base..base + in_channels];
        for (o, &g) in d_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * in_channels..(o + 1) * in_channels];
            let drow = &mut dw[o * in_channels..(o + 1) * in_channels];
            for i in 0..in_channels {
                drow[i] += g * floored(x[i], floor);
                if x[i] > floor {
                    dx[i] += g * row[i];
                }
            }
        }
    }
}

/// `logits[p] = bias[p] + sum_taps W_tap * floor(buffer[p + offset])` for every
/// partition; out-of-grid taps simply have no dependency edge.
pub fn masked_convolve(
    buffer: &LayerBuffer,
    dependencies: &[Vec<Dependency>],
    kernel: &HalfKernel<'_>,
    floor: f64,
) -> Vec<f64> {
    assert_eq!(kernel.in_channels, buffer.num_components);
    assert_eq!(dependencies.len(), buffer.num_partitions);
    let oc = kernel.out_channels;
    let mut out = vec![0.0; buffer.num_partitions * oc];
    for (p, deps) in dependencies.iter().enumerate() {
        convolve_partition(
            &buffer.values,
            buffer.num_components,
            deps,
            kernel,
            p,
            floor,
            &mut out[p * oc..(p + 1) * oc],
        );
    }
    out
}

/// Gradients of [`masked_convolve`] for upstream `d_logits` (`[P, out]`).
/// Returns `(d_taps, d_bias, d_buffer)`.
pub fn masked_convolve_backward(
    buffer: &LayerBuffer,
    dependencies: &[Vec<Dependency>],
    kernel: &HalfKernel<'_>,
    floor: f64,
    d_logits: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let oc = kernel.out_channels;
    let mut d_taps = vec![0.0; kernel.taps.len()];
    let mut d_bias = vec![0.0; kernel.bias.len()];
    let mut d_buffer = vec![0.0; buffer.values.len()];
    for (p, deps) in dependencies.iter().enumerate() {
        convolve_partition_backward(
            &buffer.values,
            buffer.num_components,
            deps,
            kernel,
            p,
            floor,
            &d_logits[p * oc..(p + 1) * oc],
            &mut d_taps,
            &mut d_bias,
            &mut d_buffer,
        );
    }
    (d_taps, d_bias, d_buffer)
}
