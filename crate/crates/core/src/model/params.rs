use rand::Rng;

/// Dense row-major `f64` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = if bound > 0.0 {
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        } else {
            vec![0.0; n]
        };
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }
}

/// Parameters of one internal sum layer.
#[derive(Debug, Clone, PartialEq)]
pub enum SumParams {
    /// Weight logits `[P, N_C, N_C]`, softmax over the last axis.
    Plain { logits: Tensor },
    /// Weight logits `[P, N_C, N_C]` of the conditional mixing operator.
    Quotient { logits: Tensor },
    /// Weight network. Depth 1: `taps [T, N_C*N_C, N_C]`, `bias [P, N_C*N_C]`.
    /// Depth 2 adds a hidden masked convolution: `taps [T, H, N_C]`,
    /// `hidden_bias [P, H]`, then `head [N_C*N_C, H]` and `bias [P, N_C*N_C]`.
    Neural {
        taps: Tensor,
        bias: Tensor,
        hidden: Option<HiddenParams>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenParams {
    pub hidden_bias: Tensor,
    pub head: Tensor,
}

/// All learnable values of a model. Leaf and root banks carry a leading
/// class axis; internal layers are shared across classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// `[classes, V, N_D, K]`; `K = 0` in two-input leaf mode.
    pub leaf_logits: Tensor,
    /// `[classes, V, N_C, N_D]`.
    pub leaf_weights: Tensor,
    pub layers: Vec<SumParams>,
    /// `[classes, N_C]`.
    pub root_weights: Tensor,
}

impl Parameters {
    /// Tensors with stable names, in checkpoint/optimizer order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("leaf_logits".to_string(), &self.leaf_logits),
            ("leaf_weights".to_string(), &self.leaf_weights),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                SumParams::Plain { logits } => out.push((format!("layer{i}.plain_logits"), logits)),
                SumParams::Quotient { logits } => {
                    out.push((format!("layer{i}.quotient_logits"), logits))
                }
                SumParams::Neural { taps, bias, hidden } => {
                    out.push((format!("layer{i}.taps"), taps));
                    out.push((format!("layer{i}.bias"), bias));
                    if let Some(h) = hidden {
                        out.push((format!("layer{i}.hidden_bias"), &h.hidden_bias));
                        out.push((format!("layer{i}.head"), &h.head));
                    }
                }
            }
        }
        out.push(("root_weights".to_string(), &self.root_weights));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.leaf_logits, &mut self.leaf_weights];
        for layer in &mut self.layers {
            match layer {
                SumParams::Plain { logits } | SumParams::Quotient { logits } => out.push(logits),
                SumParams::Neural { taps, bias, hidden } => {
                    out.push(taps);
                    out.push(bias);
                    if let Some(h) = hidden {
                        out.push(&mut h.hidden_bias);
                        out.push(&mut h.head);
                    }
                }
            }
        }
        out.push(&mut self.root_weights);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, element-wise, in tensor order.
    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Parameter group used when reporting gradient checks.
pub fn group_of(name: &str) -> &str {
    match name.split_once('.') {
        Some((_, kind)) => kind,
        None => name,
    }
}
