//! Brute-force references for tiny circuits.
//!
//! Tables are filled by evaluating the engine at full evidence only; every
//! marginal, conditional and posterior below is computed by explicit
//! summation so that the engine's marginalization path is never reused.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PncError, Result};
use crate::exec::{self, ExecMode};
use crate::inference;
use crate::model::{LeafMode, Model};
use crate::numerics::log_sum_exp;
use crate::training::{check_gradients, Objective, Sample};

/// Largest joint the oracle will enumerate.
pub const MAX_TABLE_ENTRIES: usize = 1 << 20;

/// `log p(x)` for every assignment; variable 0 is the most significant digit.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub cardinalities: Vec<usize>,
    pub log_mass: Vec<f64>,
}

impl JointTable {
    pub fn len(&self) -> usize {
        self.log_mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_mass.is_empty()
    }

    pub fn assignment(&self, index: usize) -> Vec<u8> {
        let mut out = vec![0u8; self.cardinalities.len()];
        let mut rest = index;
        for (v, &k) in self.cardinalities.iter().enumerate().rev() {
            out[v] = (rest % k) as u8;
            rest /= k;
        }
        out
    }

    pub fn index_of(&self, values: &[u8]) -> usize {
        values
            .iter()
            .zip(&self.cardinalities)
            .fold(0, |acc, (&x, &k)| acc * k + x as usize)
    }

    pub fn total(&self) -> f64 {
        log_sum_exp(&self.log_mass)
    }
}

/// Evaluates `log p(x | class)` at every assignment of a categorical model.
pub fn enumerate_joint(model: &Model, class: usize) -> Result<JointTable> {
    if model.options.leaf_mode != LeafMode::Categorical {
        return Err(PncError::Unsupported(
            "joint enumeration needs categorical leaves".into(),
        ));
    }
    if class >= model.num_classes() {
        return Err(PncError::Input(format!("class {class} out of range")));
    }
    let n = model.num_variables();
    let k = model.options.num_categories;
    let size = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(k).filter(|&s| s <= MAX_TABLE_ENTRIES));
    let size = size.ok_or_else(|| {
        PncError::Unsupported(format!(
            "joint over {n} variables with {k} values exceeds {MAX_TABLE_ENTRIES} entries"
        ))
    })?;
    let mut table = JointTable {
        cardinalities: vec![k; n],
        log_mass: Vec::new(),
    };
    let prep = model.prepare();
    let indices: Vec<usize> = (0..size).collect();
    table.log_mass = exec::map(&indices, ExecMode::Parallel, |&i| {
        prep.log_density(&table.assignment(i), None, class)
    });
    Ok(table)
}

/// `log sum` over the assignments that agree with `values` on every variable
/// not flagged in `marginalized`. Any subset is allowed.
pub fn oracle_marginal(table: &JointTable, values: &[u8], marginalized: &[bool]) -> f64 {
    let terms: Vec<f64> = (0..table.len())
        .filter(|&i| {
            let a = table.assignment(i);
            (0..a.len()).all(|v| marginalized[v] || a[v] == values[v])
        })
        .map(|i| table.log_mass[i])
        .collect();
    log_sum_exp(&terms)
}

/// `log p(x_q | x_e)` with the flagged marginalized variables summed out.
pub fn oracle_conditional(table: &JointTable, values: &[u8], query: &[bool], marginalized: &[bool]) -> f64 {
    let outer: Vec<bool> = query.iter().zip(marginalized).map(|(a, b)| *a || *b).collect();
    oracle_marginal(table, values, marginalized) - oracle_marginal(table, values, &outer)
}

/// Class posterior from per-class tables (uniform prior).
pub fn oracle_posterior(tables: &[JointTable], values: &[u8]) -> Vec<f64> {
    let lds: Vec<f64> = tables.iter().map(|t| t.log_mass[t.index_of(values)]).collect();
    let total = log_sum_exp(&lds);
    lds.iter().map(|l| (l - total).exp()).collect()
}

/// Outcome of one validation property.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub seed: u64,
    pub name: &'static str,
    pub passed: bool,
    pub max_error: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} check={} result={} max_err={:.3e}",
            self.seed,
            self.name,
            if self.passed { "pass" } else { "fail" },
            self.max_error
        )
    }
}

pub const LOG_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

/// Runs the normalization, marginal, conditional, posterior and gradient
/// properties against `model`. `seed` drives the random queries.
pub fn validation_suite(model: &Model, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = model.num_classes();
    let n = model.num_variables();
    let tables = (0..k)
        .map(|c| enumerate_joint(model, c))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    let mut record = |name, err: f64, tol: f64| {
        out.push(CheckResult {
            seed,
            name,
            passed: err < tol,
            max_error: err,
        })
    };

    let norm = tables.iter().map(|t| t.total().abs()).fold(0.0, f64::max);
    record("normalization", norm, LOG_TOLERANCE);

    let order = model.structure.variable_order.clone();
    let random_values = |rng: &mut ChaCha8Rng| -> Vec<u8> {
        (0..n).map(|_| rng.gen_range(0..model.options.num_categories) as u8).collect()
    };
    let mut marg_err = 0.0f64;
    let mut cond_err = 0.0f64;
    for _ in 0..16 {
        let values = random_values(&mut rng);
        let first = rng.gen_range(0..=n);
        let marg = order.suffix_mask(first);
        let class = rng.gen_range(0..k);
        let engine = inference::log_marginal_given_class(model, &values, &marg, class)?;
        marg_err = marg_err.max(log_gap(engine, oracle_marginal(&tables[class], &values, &marg)));

        let query_end = rng.gen_range(first..=n);
        let query: Vec<bool> = (0..n)
            .map(|v| (first..query_end).contains(&order.rank(v)))
            .collect();
        let rest = order.suffix_mask(query_end);
        let engine = inference::log_marginal_given_class(model, &values, &rest, class)?
            - inference::log_marginal_given_class(model, &values, &marg, class)?;
        cond_err = cond_err.max(log_gap(
            engine,
            oracle_conditional(&tables[class], &values, &query, &rest),
        ));
    }
    record("marginal", marg_err, LOG_TOLERANCE);
    record("conditional", cond_err, LOG_TOLERANCE);

    if k > 1 {
        let mut err = 0.0f64;
        for _ in 0..16 {
            let values = random_values(&mut rng);
            let engine = inference::class_posterior(model, &values)?;
            let oracle = oracle_posterior(&tables, &values);
            let sum_gap = (engine.iter().sum::<f64>() - 1.0).abs();
            let entry_gap = engine
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            err = err.max(sum_gap).max(entry_gap);
        }
        record("posterior", err, LOG_TOLERANCE);
    }

    let a = random_values(&mut rng);
    let b = random_values(&mut rng);
    let label = |rng: &mut ChaCha8Rng| (k > 1).then(|| rng.gen_range(0..k));
    let samples = [
        Sample {
            values: &a,
            label: label(&mut rng),
        },
        Sample {
            values: &b,
            label: label(&mut rng),
        },
    ];
    let report = check_gradients(model, &samples, Objective::Nll)?;
    record("gradient", report.max_relative_error(), GRADIENT_TOLERANCE);
    Ok(out)
}

/// Absolute gap in log space; two equal infinities count as agreement.
pub fn log_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelOptions;
    use crate::structure::{build_1d_structure, build_2d_structure, LayerKind};

    #[test]
    fn single_variable_table_is_the_leaf() {
        let s = build_1d_structure(1, 1, 1, 0, LayerKind::PlainSum).unwrap();
        let mut m = Model::new(s, ModelOptions::binary(), 0).unwrap();
        m.params.leaf_logits.data = vec![0.3f64.ln(), 0.7f64.ln()];
        let t = enumerate_joint(&m, 0).unwrap();
        assert!((t.log_mass[0] - 0.3f64.ln()).abs() < 1e-12);
        assert!((t.log_mass[1] - 0.7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_table() {
        let s = build_1d_structure(8, 2, 2, 2, LayerKind::Neural).unwrap();
        let mut m = Model::new(s, ModelOptions::binary(), 0).unwrap();
        m.params.leaf_logits.data.iter_mut().for_each(|v| *v = 0.0);
        let t = enumerate_joint(&m, 0).unwrap();
        assert_eq!(t.len(), 256);
        for lp in &t.log_mass {
            assert!((lp - (1.0f64 / 256.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_oracle_marginals() {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::Quotient).unwrap();
        let m = Model::randomized(s, ModelOptions::binary(), 2, 1.0).unwrap();
        let t = enumerate_joint(&m, 0).unwrap();
        let x = [1u8, 0, 0, 1];
        assert!(oracle_marginal(&t, &x, &[true; 4]).abs() < 1e-12);
        assert_eq!(oracle_marginal(&t, &x, &[false; 4]), t.log_mass[t.index_of(&x)]);
        assert_eq!(t.assignment(t.index_of(&x)), x);
    }

    #[test]
    fn oversized_models_are_rejected() {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::PlainSum).unwrap();
        let m = Model::new(s, ModelOptions::default(), 0).unwrap();
        assert!(matches!(enumerate_joint(&m, 0), Err(PncError::Unsupported(_))));
    }

    #[test]
    fn fig7_lower_half_marginal_matches_brute_force() {
        let s = build_2d_structure(4, 4, 2, 2, LayerKind::Neural).unwrap();
        let m = Model::randomized(s, ModelOptions::binary(), 11, 1.0).unwrap();
        let t = enumerate_joint(&m, 0).unwrap();
        let marg = m.structure.variable_order.suffix_mask(8);
        let x: Vec<u8> = (0..16).map(|i| (i * 7 % 3 == 0) as u8).collect();
        let engine = inference::log_marginal(&m, &x, &marg).unwrap();
        assert!((engine - oracle_marginal(&t, &x, &marg)).abs() < 1e-9);
    }

    #[test]
    fn suite_passes_and_negative_control_fails() {
        let s = build_1d_structure(6, 2, 2, 2, LayerKind::Neural).unwrap();
        let mut m = Model::randomized(s, ModelOptions::binary().with_classes(2), 5, 1.0).unwrap();
        let report = validation_suite(&m, 1).unwrap();
        assert!(report.iter().all(|c| c.passed), "{report:?}");
        m.bypass_normalization_for_testing();
        let report = validation_suite(&m, 1).unwrap();
        assert!(!report.iter().find(|c| c.name == "normalization").unwrap().passed);
    }
}
