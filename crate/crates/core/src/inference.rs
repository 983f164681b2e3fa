//! Density, ordered marginal, ordered conditional and class-posterior queries.
//!
//! Multi-class models answer class-free queries under a uniform class prior.

use crate::error::{PncError, Result};
use crate::exec::{self, ExecMode};
use crate::model::{forward, Model};
use crate::numerics::log_sum_exp;

fn mix_classes(model: &Model, per_class: impl Fn(usize) -> Result<f64>) -> Result<f64> {
    let k = model.num_classes();
    if k == 1 {
        return per_class(0);
    }
    let lds = (0..k).map(per_class).collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&lds) - (k as f64).ln())
}

/// `log p(x)` for a full assignment.
pub fn log_density(model: &Model, values: &[u8]) -> Result<f64> {
    let none = vec![false; model.num_variables()];
    mix_classes(model, |c| forward(model, values, &none, c))
}

/// `log p(x | y = class)`.
pub fn log_density_given_class(model: &Model, values: &[u8], class: usize) -> Result<f64> {
    forward(model, values, &vec![false; model.num_variables()], class)
}

/// `log p(x_e)` where the variables flagged in `marginalized` are summed out.
/// The marginalized set must be a suffix of the induced order; values at
/// marginalized positions are ignored.
pub fn log_marginal(model: &Model, values: &[u8], marginalized: &[bool]) -> Result<f64> {
    if marginalized.len() == model.num_variables()
        && !marginalized.contains(&false)
        && !model.normalization_bypassed()
    {
        // total mass of a normalized circuit; skips the rounding of a full pass
        return Ok(0.0);
    }
    mix_classes(model, |c| forward(model, values, marginalized, c))
}

pub fn log_marginal_given_class(
    model: &Model,
    values: &[u8],
    marginalized: &[bool],
    class: usize,
) -> Result<f64> {
    forward(model, values, marginalized, class)
}

/// `log p(x_q | x_e)` with `x_m` summed out, where `query` flags `x_q`,
/// `marginalized` flags `x_m` and every other variable is evidence. Requires
/// evidence before query before marginalized in the induced order.
pub fn log_conditional(model: &Model, values: &[u8], query: &[bool], marginalized: &[bool]) -> Result<f64> {
    let n = model.num_variables();
    if query.len() != n || marginalized.len() != n {
        return Err(PncError::Input(format!(
            "query and marginalization masks need {n} entries"
        )));
    }
    if let Some(v) = (0..n).find(|&v| query[v] && marginalized[v]) {
        return Err(PncError::Input(format!(
            "variable {v} is both queried and marginalized"
        )));
    }
    let outer: Vec<bool> = (0..n).map(|v| query[v] || marginalized[v]).collect();
    // validate both masks before evaluating either
    crate::structure::validate_query(&model.structure, marginalized)?;
    crate::structure::validate_query(&model.structure, &outer)?;
    if !query.contains(&true) {
        return Ok(0.0);
    }
    Ok(log_marginal(model, values, marginalized)? - log_marginal(model, values, &outer)?)
}

/// Per-class log-densities of a full assignment.
pub fn class_log_densities(model: &Model, values: &[u8]) -> Result<Vec<f64>> {
    let none = vec![false; model.num_variables()];
    (0..model.num_classes())
        .map(|c| forward(model, values, &none, c))
        .collect()
}

/// `p(y | x)` under a uniform class prior.
pub fn class_posterior(model: &Model, values: &[u8]) -> Result<Vec<f64>> {
    if model.num_classes() < 2 {
        return Err(PncError::Unsupported(
            "class posterior of a model with a single class".into(),
        ));
    }
    Ok(posterior_from_log_densities(&class_log_densities(model, values)?))
}

pub fn posterior_from_log_densities(lds: &[f64]) -> Vec<f64> {
    let total = log_sum_exp(lds);
    lds.iter().map(|l| (l - total).exp()).collect()
}

/// Mean NLL in nats converted to bits per dimension.
pub fn bits_per_dimension(mean_nll_nats: f64, num_dims: usize) -> f64 {
    mean_nll_nats / (std::f64::consts::LN_2 * num_dims as f64)
}

/// `log p(x)` for many full assignments, in input order.
pub fn log_densities(model: &Model, samples: &[&[u8]], mode: ExecMode) -> Result<Vec<f64>> {
    for s in samples {
        model.check_assignment(s)?;
    }
    let prep = model.prepare();
    let k = model.num_classes();
    Ok(exec::map(samples, mode, |s| {
        let lds: Vec<f64> = (0..k).map(|c| prep.log_density(s, None, c)).collect();
        if k == 1 {
            lds[0]
        } else {
            log_sum_exp(&lds) - (k as f64).ln()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelOptions;
    use crate::structure::{build_1d_structure, build_2d_structure, LayerKind};

    fn uniform_binary(n: usize) -> Model {
        let s = build_1d_structure(n, 2, 2, 1, LayerKind::Neural).unwrap();
        let mut m = Model::new(s, ModelOptions::binary(), 0).unwrap();
        m.params.leaf_logits.data.iter_mut().for_each(|v| *v = 0.0);
        m
    }

    #[test]
    fn uniform_binary_density() {
        let m = uniform_binary(8);
        for x in [[0u8; 8], [1, 0, 1, 1, 0, 0, 1, 0]] {
            let ld = log_density(&m, &x).unwrap();
            assert!((ld - (1.0f64 / 256.0).ln()).abs() < 1e-12);
        }
        let one = uniform_binary(1);
        assert!((log_density(&one, &[1]).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn trivial_marginals() {
        let s = build_2d_structure(3, 3, 3, 3, LayerKind::Quotient).unwrap();
        let m = Model::randomized(s, ModelOptions::binary(), 4, 1.0).unwrap();
        let x = [1u8, 0, 1, 1, 1, 0, 0, 0, 1];
        assert_eq!(log_marginal(&m, &x, &[true; 9]).unwrap(), 0.0);
        assert_eq!(
            log_marginal(&m, &x, &[false; 9]).unwrap(),
            log_density(&m, &x).unwrap()
        );
        let q = [false; 9];
        let marg = m.structure.variable_order.suffix_mask(4);
        assert_eq!(log_conditional(&m, &x, &q, &marg).unwrap(), 0.0);
    }

    #[test]
    fn conditionals_normalize_on_a_chain() {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::Neural).unwrap();
        let m = Model::randomized(s, ModelOptions::binary(), 9, 1.5).unwrap();
        let order = m.structure.variable_order.clone();
        let second = order.var_at(1);
        let mut query = vec![false; 4];
        query[second] = true;
        let marg = order.suffix_mask(2);
        let total: f64 = (0..2u8)
            .map(|v| {
                let mut x = [1u8; 4];
                x[second] = v;
                log_conditional(&m, &x, &query, &marg).unwrap().exp()
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_order_conditional_is_rejected() {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::Neural).unwrap();
        let m = Model::randomized(s, ModelOptions::binary(), 9, 1.5).unwrap();
        let order = &m.structure.variable_order;
        let mut query = vec![false; 4];
        query[order.var_at(0)] = true;
        let err = log_conditional(&m, &[0; 4], &query, &[false; 4]).unwrap_err();
        assert!(matches!(err, PncError::OrderViolation { .. }));
    }

    #[test]
    fn posterior_arithmetic() {
        let p = posterior_from_log_densities(&[9f64.ln() - 3.0, -3.0]);
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] - 0.1).abs() < 1e-12);
        let m = uniform_binary(4);
        assert!(matches!(
            class_posterior(&m, &[0; 4]),
            Err(PncError::Unsupported(_))
        ));
    }

    #[test]
    fn identical_class_banks_give_a_uniform_posterior() {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::PlainSum).unwrap();
        let mut m = Model::randomized(s, ModelOptions::binary().with_classes(3), 1, 1.0).unwrap();
        let leaf = m.params.leaf_logits.data.len() / 3;
        let lw = m.params.leaf_weights.data.len() / 3;
        let rw = m.params.root_weights.data.len() / 3;
        for c in 1..3 {
            m.params.leaf_logits.data.copy_within(0..leaf, c * leaf);
            m.params.leaf_weights.data.copy_within(0..lw, c * lw);
            m.params.root_weights.data.copy_within(0..rw, c * rw);
        }
        let p = class_posterior(&m, &[1, 0, 0, 1]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bpd_examples() {
        assert_eq!(bits_per_dimension(std::f64::consts::LN_2, 1), 1.0);
        assert_eq!(bits_per_dimension(0.0, 784), 0.0);
        assert!((bits_per_dimension(472.863, 784) - 0.87).abs() < 0.005);
    }
}
