//! Objectives, exact gradients, Adam and the epoch loop.

mod adam;
pub mod backward;
mod gradcheck;

pub use adam::{adam_step, OptimizerState};
pub use backward::{backward_sample, finalize};
pub use gradcheck::{check_gradients, GradCheckReport, GroupError, FD_STEP};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{split_indices, Dataset};
use crate::error::{PncError, Result};
use crate::exec::{chunked_fold, ExecMode};
use crate::inference::bits_per_dimension;
use crate::model::{Model, Parameters, Prepared, Trace};
use crate::numerics::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Mean `-log p(x)`; with several classes and a label, `-log p(x | y)`.
    #[default]
    Nll,
    /// Mean `-log p(y | x)` under a uniform class prior.
    CrossEntropy,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Nll => "nll",
            Objective::CrossEntropy => "cross_entropy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nll" => Some(Objective::Nll),
            "cross_entropy" => Some(Objective::CrossEntropy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub objective: Objective,
    pub seed: u64,
    pub val_fraction: f64,
    /// L2 coefficient; 0 disables it.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 50,
            epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            objective: Objective::Nll,
            seed: 0,
            val_fraction: 0.1,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PncError::Input(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub values: &'a [u8],
    pub label: Option<usize>,
}

impl Dataset {
    pub fn samples(&self) -> Vec<Sample<'_>> {
        self.samples_at(&(0..self.len()).collect::<Vec<_>>())
    }

    pub fn samples_at(&self, indices: &[usize]) -> Vec<Sample<'_>> {
        indices
            .iter()
            .map(|&i| Sample {
                values: self.sample(i),
                label: self.label(i),
            })
            .collect()
    }
}

/// Aggregate metrics over a set of samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean objective value.
    pub loss: f64,
    /// Mean negative log-likelihood in nats (uniform class prior for
    /// unlabelled multi-class evaluation).
    pub nll: f64,
    pub bpd: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One line of the metric trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub metrics: Metrics,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} split={} nll={:.6} bpd={:.6} acc=",
            self.epoch,
            self.split.as_str(),
            self.metrics.nll,
            self.metrics.bpd
        )?;
        match self.metrics.accuracy {
            Some(a) => write!(f, "{a:.6}"),
            None => write!(f, "na"),
        }
    }
}

/// Per-sample forward results.
struct SampleEval {
    traces: Vec<Trace>,
    /// Upstream gradient of the per-sample loss w.r.t. each trace's log-density.
    upstream: Vec<f64>,
    loss: f64,
    nll: f64,
    correct: Option<bool>,
}

/// Labels are ignored by single-class models.
fn check_samples(model: &Model, samples: &[Sample<'_>], objective: Objective) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        model
            .check_assignment(s.values)
            .map_err(|e| PncError::Input(format!("sample {i}: {e}")))?;
        match s.label {
            Some(y) if model.num_classes() > 1 && y >= model.num_classes() => {
                return Err(PncError::Input(format!(
                    "sample {i}: label {y} out of range for {} classes",
                    model.num_classes()
                )))
            }
            None if objective == Objective::CrossEntropy => {
                return Err(PncError::Input(
                    "the cross_entropy objective needs labels".into(),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

fn eval_sample(prep: &Prepared<'_>, sample: &Sample<'_>, objective: Objective, with_traces: bool) -> SampleEval {
    let k = prep.model.num_classes();
    let traces: Vec<Trace> = (0..k).map(|c| prep.trace(sample.values, None, c)).collect();
    let lds: Vec<f64> = traces.iter().map(|t| t.log_density).collect();
    let mut eval = if k == 1 {
        SampleEval {
            traces: Vec::new(),
            upstream: vec![-1.0],
            loss: -lds[0],
            nll: -lds[0],
            correct: None,
        }
    } else {
        let total = log_sum_exp(&lds);
        let marginal_nll = -(total - (k as f64).ln());
        let posterior: Vec<f64> = lds.iter().map(|l| (l - total).exp()).collect();
        let predicted = argmax(&lds);
        let correct = sample.label.map(|y| predicted == y);
        match (objective, sample.label) {
            (Objective::Nll, Some(y)) => {
                let mut upstream = vec![0.0; k];
                upstream[y] = -1.0;
                SampleEval {
                    traces: Vec::new(),
                    upstream,
                    loss: -lds[y],
                    nll: -lds[y],
                    correct,
                }
            }
            (Objective::Nll, None) => SampleEval {
                traces: Vec::new(),
                upstream: posterior.iter().map(|p| -p).collect(),
                loss: marginal_nll,
                nll: marginal_nll,
                correct,
            },
            (Objective::CrossEntropy, y) => {
                let y = y.expect("labels checked before evaluation");
                let upstream = posterior
                    .iter()
                    .enumerate()
                    .map(|(c, p)| -(if c == y { 1.0 } else { 0.0 } - p))
                    .collect();
                SampleEval {
                    traces: Vec::new(),
                    upstream,
                    loss: -(lds[y] - total),
                    nll: marginal_nll,
                    correct,
                }
            }
        }
    };
    if with_traces {
        eval.traces = traces;
    }
    eval
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct Partial {
    loss: f64,
    nll: f64,
    correct: usize,
    labeled: usize,
    grads: Option<Parameters>,
}

impl Partial {
    fn merge(&mut self, other: Partial) {
        self.loss += other.loss;
        self.nll += other.nll;
        self.correct += other.correct;
        self.labeled += other.labeled;
        if let (Some(a), Some(b)) = (self.grads.as_mut(), other.grads.as_ref()) {
            a.add_assign(b);
        }
    }

    fn metrics(&self, n: usize, dims: usize) -> Metrics {
        let n = n as f64;
        Metrics {
            loss: self.loss / n,
            nll: self.nll / n,
            bpd: bits_per_dimension(self.nll / n, dims),
            accuracy: (self.labeled > 0).then(|| self.correct as f64 / self.labeled as f64),
        }
    }
}

fn run(
    model: &Model,
    prep: &Prepared<'_>,
    samples: &[Sample<'_>],
    objective: Objective,
    mode: ExecMode,
    with_grads: bool,
) -> Partial {
    let scale = 1.0 / samples.len() as f64;
    let init = || Partial {
        loss: 0.0,
        nll: 0.0,
        correct: 0,
        labeled: 0,
        grads: with_grads.then(|| model.params.zeros_like()),
    };
    chunked_fold(
        samples,
        mode,
        init,
        |acc, sample| {
            let eval = eval_sample(prep, sample, objective, with_grads);
            acc.loss += eval.loss;
            acc.nll += eval.nll;
            if let Some(c) = eval.correct {
                acc.labeled += 1;
                acc.correct += c as usize;
            }
            if let Some(g) = acc.grads.as_mut() {
                for (trace, up) in eval.traces.iter().zip(&eval.upstream) {
                    backward_sample(prep, sample.values, trace, up * scale, g);
                }
            }
        },
        Partial::merge,
    )
}

/// Mean loss over `samples` and its exact gradient w.r.t. every parameter.
pub fn loss_and_gradients(
    model: &Model,
    samples: &[Sample<'_>],
    objective: Objective,
    mode: ExecMode,
) -> Result<(Metrics, Parameters)> {
    if samples.is_empty() {
        return Err(PncError::Input("empty batch".into()));
    }
    check_samples(model, samples, objective)?;
    let prep = model.prepare();
    let partial = run(model, &prep, samples, objective, mode, true);
    let metrics = partial.metrics(samples.len(), model.num_variables());
    let grads = finalize(model, &prep, partial.grads.expect("gradients requested"));
    Ok((metrics, grads))
}

/// Metrics without gradients.
pub fn evaluate(model: &Model, samples: &[Sample<'_>], objective: Objective, mode: ExecMode) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(PncError::Input("nothing to evaluate".into()));
    }
    check_samples(model, samples, objective)?;
    let prep = model.prepare();
    Ok(run(model, &prep, samples, objective, mode, false).metrics(samples.len(), model.num_variables()))
}

/// Mean loss only; used by finite-difference checks.
pub fn loss(model: &Model, samples: &[Sample<'_>], objective: Objective) -> Result<f64> {
    Ok(evaluate(model, samples, objective, ExecMode::Sequential)?.loss)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation objective (the initial model when
    /// no epoch ran).
    pub model: Model,
    /// Optimizer state captured together with `model`.
    pub optimizer: OptimizerState,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Trains with a seeded train/validation split, reshuffling the training
/// indices every epoch. Train metrics are running means over the epoch's
/// batches; validation metrics are computed after the epoch. The model with
/// the lowest validation objective is returned.
pub fn train(
    model: Model,
    dataset: &Dataset,
    config: &TrainConfig,
    mode: ExecMode,
    mut on_record: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(PncError::Input("empty dataset".into()));
    }
    let all = dataset.samples();
    check_samples(&model, &all, config.objective)?;
    let optimizer = OptimizerState::new(&model.params);
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            optimizer,
            trace: Vec::new(),
            best_epoch: None,
        });
    }
    let (mut train_idx, val_idx) = split_indices(dataset.len(), config.val_fraction, config.seed)?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(PncError::Input(format!(
            "{} samples are too few for a train/validation split at fraction {}",
            dataset.len(),
            config.val_fraction
        )));
    }
    let val = dataset.samples_at(&val_idx);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut model = model;
    let mut optimizer = optimizer;
    let mut best: Option<(f64, Model, OptimizerState, usize)> = None;
    let mut trace = Vec::new();
    let dims = model.num_variables();
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut running = Partial {
            loss: 0.0,
            nll: 0.0,
            correct: 0,
            labeled: 0,
            grads: None,
        };
        for batch in train_idx.chunks(config.batch_size) {
            let samples = dataset.samples_at(batch);
            let prep = model.prepare();
            let partial = run(&model, &prep, &samples, config.objective, mode, true);
            let mut p = partial;
            let grads = finalize(&model, &prep, p.grads.take().unwrap());
            drop(prep);
            running.merge(p);
            adam_step(&mut model.params, &grads, &mut optimizer, config);
        }
        let train_metrics = running.metrics(train_idx.len(), dims);
        let val_metrics = evaluate(&model, &val, config.objective, mode)?;
        for record in [
            EpochRecord {
                epoch,
                split: Split::Train,
                metrics: train_metrics,
            },
            EpochRecord {
                epoch,
                split: Split::Val,
                metrics: val_metrics,
            },
        ] {
            on_record(&record);
            trace.push(record);
        }
        if best.as_ref().map_or(true, |(b, ..)| val_metrics.loss < *b) {
            best = Some((val_metrics.loss, model.clone(), optimizer.clone(), epoch));
        }
    }
    let (_, model, optimizer, epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        optimizer,
        trace,
        best_epoch: Some(epoch),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize;
    use crate::model::{ModelOptions, SumParams};
    use crate::oracle::enumerate_joint;
    use crate::structure::{build_1d_structure, build_2d_structure, LayerKind};
    use rand::Rng;

    const FLAVORS: [LayerKind; 3] = [LayerKind::PlainSum, LayerKind::Quotient, LayerKind::Neural];

    fn random_samples(n: usize, count: usize, k: usize, classes: usize, seed: u64) -> Vec<(Vec<u8>, Option<usize>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x = (0..n).map(|_| rng.gen_range(0..k) as u8).collect();
                (x, (classes > 1).then(|| rng.gen_range(0..classes)))
            })
            .collect()
    }

    fn as_samples(raw: &[(Vec<u8>, Option<usize>)]) -> Vec<Sample<'_>> {
        raw.iter()
            .map(|(x, y)| Sample {
                values: x,
                label: *y,
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences_for_every_flavor() {
        for kind in FLAVORS {
            for (n, nc) in [(4, 2), (8, 3)] {
                let s = build_1d_structure(n, nc, nc, 2, kind).unwrap();
                let m = Model::randomized(s, ModelOptions::binary(), n as u64, 1.0).unwrap();
                let raw = random_samples(n, 3, 2, 1, 7);
                let report = check_gradients(&m, &as_samples(&raw), Objective::Nll).unwrap();
                assert!(report.passes(1e-5), "{kind:?} n={n}: {report:?}");
            }
        }
    }

    #[test]
    fn gradients_match_on_grids_with_categories_and_classes() {
        for kind in FLAVORS {
            let s = build_2d_structure(3, 3, 2, 3, kind).unwrap();
            let opts = ModelOptions {
                num_categories: 3,
                ..ModelOptions::default()
            }
            .with_classes(2);
            let m = Model::randomized(s, opts, 5, 1.0).unwrap();
            let raw = random_samples(9, 2, 3, 2, 8);
            for objective in [Objective::Nll, Objective::CrossEntropy] {
                let report = check_gradients(&m, &as_samples(&raw), objective).unwrap();
                assert!(report.passes(1e-5), "{kind:?} {objective:?}: {report:?}");
            }
            // unlabelled multi-class likelihood
            let unlabeled: Vec<_> = raw.iter().map(|(x, _)| (x.clone(), None)).collect();
            let report = check_gradients(&m, &as_samples(&unlabeled), Objective::Nll).unwrap();
            assert!(report.passes(1e-5), "{kind:?} unlabelled: {report:?}");
        }
    }

    #[test]
    fn depth_two_weight_network_gradients() {
        let s = build_1d_structure(8, 2, 2, 2, LayerKind::Neural).unwrap();
        let opts = ModelOptions {
            net_depth: 2,
            net_hidden: 3,
            ..ModelOptions::binary()
        };
        let m = Model::randomized(s, opts, 3, 1.0).unwrap();
        let raw = random_samples(8, 3, 2, 1, 1);
        let report = check_gradients(&m, &as_samples(&raw), Objective::Nll).unwrap();
        assert!(report.passes(1e-5), "{report:?}");
        assert!(report.groups.iter().any(|g| g.group == "head"));
    }

    #[test]
    fn two_input_leaf_gradients() {
        let s = build_2d_structure(2, 3, 3, 2, LayerKind::Neural).unwrap();
        let opts = ModelOptions {
            leaf_mode: crate::model::LeafMode::TwoInput,
            ..ModelOptions::default()
        }
        .with_classes(2);
        let m = Model::randomized(s, opts, 2, 1.0).unwrap();
        let raw = vec![
            (vec![0u8, 40, 255, 128, 7, 90], Some(0)),
            (vec![255u8, 255, 3, 0, 0, 200], Some(1)),
        ];
        let report = check_gradients(&m, &as_samples(&raw), Objective::CrossEntropy).unwrap();
        assert!(report.passes(1e-5), "{report:?}");
    }

    #[test]
    fn uniform_model_is_a_stationary_point_for_sum_weights() {
        let s = build_1d_structure(6, 3, 3, 1, LayerKind::Quotient).unwrap();
        let mut m = Model::new(s, ModelOptions::binary(), 0).unwrap();
        m.params.leaf_logits.data.iter_mut().for_each(|v| *v = 0.0);
        let raw = random_samples(6, 5, 2, 1, 4);
        let (metrics, grads) = loss_and_gradients(&m, &as_samples(&raw), Objective::Nll, ExecMode::Sequential).unwrap();
        assert!((metrics.loss - 6.0 * 2f64.ln()).abs() < 1e-12);
        for (name, t) in grads.named() {
            if name != "leaf_logits" {
                assert!(t.data.iter().all(|g| g.abs() < 1e-12), "{name}");
            }
        }
    }

    #[test]
    fn identical_class_banks_give_ln_k_cross_entropy() {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::Neural).unwrap();
        let m = Model::new(s, ModelOptions::binary().with_classes(3), 0).unwrap();
        let mut m = m;
        m.params.leaf_logits.data.iter_mut().for_each(|v| *v = 0.0);
        let raw = random_samples(4, 4, 2, 3, 2);
        let metrics = evaluate(&m, &as_samples(&raw), Objective::CrossEntropy, ExecMode::Sequential).unwrap();
        assert!((metrics.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_labels_are_an_input_error() {
        let s = build_1d_structure(4, 2, 2, 1, LayerKind::Neural).unwrap();
        let m = Model::new(s, ModelOptions::binary().with_classes(2), 0).unwrap();
        let raw = random_samples(4, 2, 2, 1, 2);
        assert!(matches!(
            loss_and_gradients(&m, &as_samples(&raw), Objective::CrossEntropy, ExecMode::Sequential),
            Err(PncError::Input(_))
        ));
    }

    #[test]
    fn parallel_and_sequential_gradients_agree() {
        let s = build_2d_structure(4, 4, 3, 3, LayerKind::Neural).unwrap();
        let m = Model::randomized(s, ModelOptions::binary(), 1, 1.0).unwrap();
        let raw = random_samples(16, 37, 2, 1, 3);
        let samples = as_samples(&raw);
        let (a, ga) = loss_and_gradients(&m, &samples, Objective::Nll, ExecMode::Sequential).unwrap();
        let (b, gb) = loss_and_gradients(&m, &samples, Objective::Nll, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    fn ground_truth(kind: LayerKind) -> Model {
        let s = build_1d_structure(8, 3, 3, 2, kind).unwrap();
        Model::randomized(s, ModelOptions::binary(), 42, 2.0).unwrap()
    }

    #[test]
    fn epochs_zero_returns_the_initial_model() {
        let truth = ground_truth(LayerKind::Neural);
        let data = synthesize(&truth, 20, 1).unwrap();
        let init = Model::new(truth.structure.clone(), truth.options, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(init.clone(), &data, &cfg, ExecMode::Sequential, |_| {}).unwrap();
        assert_eq!(out.model, init);
        assert!(out.trace.is_empty());
        let empty = data.subset(&[]);
        assert!(train(init, &empty, &cfg, ExecMode::Sequential, |_| {}).is_err());
    }

    #[test]
    fn training_is_deterministic_and_keeps_normalization() {
        let truth = ground_truth(LayerKind::Neural);
        let data = synthesize(&truth, 100, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 10,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let run = || {
            let init = Model::new(truth.structure.clone(), truth.options, 3).unwrap();
            train(init, &data, &cfg, ExecMode::Parallel, |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace.len(), 6);
        assert_eq!(a.trace[1].to_string().split(' ').next(), Some("epoch=1"));
        assert!(a.trace[1].to_string().contains("split=val"));
        let total = enumerate_joint(&a.model, 0).unwrap().total();
        assert!(total.abs() < 1e-9);
    }

    #[test]
    fn full_batch_training_lowers_the_loss() {
        let truth = ground_truth(LayerKind::Quotient);
        let data = synthesize(&truth, 200, 9).unwrap();
        let samples = data.samples();
        let mut m = Model::new(truth.structure.clone(), truth.options, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.02,
            ..TrainConfig::default()
        };
        let mut state = OptimizerState::new(&m.params);
        let start = loss(&m, &samples, Objective::Nll).unwrap();
        for _ in 0..100 {
            let (_, g) = loss_and_gradients(&m, &samples, Objective::Nll, ExecMode::Parallel).unwrap();
            adam_step(&mut m.params, &g, &mut state, &cfg);
        }
        let end = loss(&m, &samples, Objective::Nll).unwrap();
        assert!(end < start, "{end} !< {start}");
    }

    #[test]
    fn training_approaches_the_generator_entropy() {
        let truth = ground_truth(LayerKind::Neural);
        let table = enumerate_joint(&truth, 0).unwrap();
        let entropy: f64 = -table.log_mass.iter().map(|l| l.exp() * l).sum::<f64>();
        let data = synthesize(&truth, 400, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 20,
            learning_rate: 0.03,
            ..TrainConfig::default()
        };
        let init = Model::new(truth.structure.clone(), truth.options, 5).unwrap();
        let out = train(init, &data, &cfg, ExecMode::Parallel, |_| {}).unwrap();
        let last_train = out
            .trace
            .iter()
            .rev()
            .find(|r| r.split == Split::Train)
            .unwrap();
        let gap = (last_train.metrics.nll - entropy).abs() / 8.0;
        assert!(gap < 0.05, "train nll {} vs entropy {entropy}", last_train.metrics.nll);
    }

    #[test]
    fn masked_taps_have_no_parameters_when_the_window_is_empty() {
        let s = build_1d_structure(8, 2, 2, 0, LayerKind::Neural).unwrap();
        let m = Model::new(s, ModelOptions::binary(), 0).unwrap();
        for layer in &m.params.layers {
            let SumParams::Neural { taps, .. } = layer else { panic!() };
            assert!(taps.is_empty());
        }
    }
}
