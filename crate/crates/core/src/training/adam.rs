use crate::model::Parameters;

use super::TrainConfig;

/// First and second moment estimates mirroring the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Parameters,
    pub second_moment: Parameters,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        OptimizerState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Weight decay, when enabled, is added to
/// the gradient as an L2 term.
pub fn adam_step(params: &mut Parameters, grads: &Parameters, state: &mut OptimizerState, config: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    let m = state.first_moment.tensors_mut();
    let v = state.second_moment.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(m).zip(v) {
        for i in 0..p.data.len() {
            let gi = g.data[i] + wd * p.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelOptions};
    use crate::structure::{build_1d_structure, LayerKind};

    fn params() -> Parameters {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::PlainSum).unwrap();
        Model::randomized(s, ModelOptions::binary(), 3, 1.0).unwrap().params
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = params();
        let before = p.clone();
        let mut state = OptimizerState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut p, &g, &mut state, &TrainConfig::default());
        assert_eq!(p, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_the_sign() {
        let mut p = params();
        let before = p.clone();
        let mut state = OptimizerState::new(&p);
        let mut g = p.zeros_like();
        for (i, x) in g.root_weights.data.iter_mut().enumerate() {
            *x = if i % 2 == 0 { 0.3 } else { -2.0 };
        }
        let cfg = TrainConfig::default();
        adam_step(&mut p, &g, &mut state, &cfg);
        for (i, (a, b)) in p.root_weights.data.iter().zip(&before.root_weights.data).enumerate() {
            let expected = if i % 2 == 0 { -cfg.learning_rate } else { cfg.learning_rate };
            assert!(((a - b) - expected).abs() < 1e-8, "{} vs {}", a - b, expected);
        }
    }
}
