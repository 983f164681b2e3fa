use std::io::{self, BufWriter, Write};
use std::path::Path;

use pnc::data::{load_idx, random_assignments, Dataset};
use pnc::exec::ExecMode;
use pnc::inference::{self, bits_per_dimension};
use pnc::model::Model;
use pnc::oracle::validation_suite;
use pnc::persistence::{load_checkpoint, save_checkpoint, Config};
use pnc::structure::validate_query;
use pnc::training::{argmax, check_gradients, train as run_training, Objective};
use pnc::{PncError, Result};

use crate::query::{parse_mask, read_records};
use crate::{ClassifyArgs, EvalArgs, GradcheckArgs, MarginalArgs, Status, TrainArgs, ValidateArgs};

fn stdout_err(e: io::Error) -> PncError {
    PncError::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

/// Loads images (and labels) and checks them against the model geometry.
fn load_data(images: &Path, labels: Option<&Path>, model: &Model, max_samples: Option<usize>) -> Result<Dataset> {
    let mut data = load_idx(images, labels)?;
    if data.dims() != model.num_variables() {
        return Err(PncError::Input(format!(
            "images are {}x{}, model has {} variables",
            data.height,
            data.width,
            model.num_variables()
        )));
    }
    if let Some(n) = max_samples {
        if n < data.len() {
            data = data.subset(&(0..n).collect::<Vec<_>>());
        }
    }
    if model.num_classes() == 1 {
        data.labels = None;
    }
    Ok(data)
}

pub fn train(args: TrainArgs) -> Result<Status> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    if let Some(p) = &args.images {
        config.images = Some(p.display().to_string());
    }
    if let Some(p) = &args.labels {
        config.labels = Some(p.display().to_string());
    }
    let images = config
        .images
        .clone()
        .ok_or_else(|| PncError::Input("no images given (use --images or the images key)".into()))?;
    let model = Model::new(config.build_structure()?, config.model_options(), config.train.seed)?;
    let data = load_data(
        Path::new(&images),
        config.labels.as_deref().map(Path::new),
        &model,
        config.max_samples,
    )?;
    if config.train.objective == Objective::CrossEntropy && data.labels.is_none() {
        return Err(PncError::Input("the cross_entropy objective needs --labels".into()));
    }
    let mut out = BufWriter::new(io::stdout().lock());
    let mut write_err = None;
    let outcome = run_training(model, &data, &config.train, ExecMode::Parallel, |record| {
        if write_err.is_none() {
            write_err = writeln!(out, "{record}").and_then(|_| out.flush()).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(stdout_err(e));
    }
    save_checkpoint(&args.out, &config, &outcome.model, Some(&outcome.optimizer))?;
    match outcome.best_epoch {
        Some(e) => eprintln!("saved epoch {e} to {}", args.out.display()),
        None => eprintln!("saved initial model to {}", args.out.display()),
    }
    Ok(Status::Ok)
}

pub fn eval(args: EvalArgs) -> Result<Status> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = load_data(&args.images, None, &ck.model, None)?;
    let samples: Vec<&[u8]> = (0..data.len()).map(|i| data.sample(i)).collect();
    let lds = inference::log_densities(&ck.model, &samples, ExecMode::Parallel)?;
    let mut out = BufWriter::new(io::stdout().lock());
    for (i, ld) in lds.iter().enumerate() {
        writeln!(out, "sample={i} logp={ld}").map_err(stdout_err)?;
    }
    if lds.is_empty() {
        writeln!(out, "bpd=na").map_err(stdout_err)?;
    } else {
        let mean_nll = -lds.iter().sum::<f64>() / lds.len() as f64;
        writeln!(out, "bpd={}", bits_per_dimension(mean_nll, ck.model.num_variables())).map_err(stdout_err)?;
    }
    out.flush().map_err(stdout_err)?;
    Ok(Status::Ok)
}

pub fn marginal(args: MarginalArgs) -> Result<Status> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let model = &ck.model;
    let mask = parse_mask(&args.marginalize, &model.structure.variable_order)?;
    validate_query(&model.structure, &mask)?;
    let records = read_records(&args.evidence_file, model.num_variables())?;
    let mut values = Vec::with_capacity(records.len());
    for r in &records {
        values.push(inference::log_marginal(model, r, &mask)?);
    }
    let mut out = BufWriter::new(io::stdout().lock());
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "record={i} logp={v}").map_err(stdout_err)?;
    }
    out.flush().map_err(stdout_err)?;
    Ok(Status::Ok)
}

pub fn classify(args: ClassifyArgs) -> Result<Status> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let model = &ck.model;
    if model.num_classes() < 2 {
        return Err(PncError::Unsupported(
            "classify needs a model with several classes".into(),
        ));
    }
    let data = load_data(&args.images, args.labels.as_deref(), model, None)?;
    let mut out = BufWriter::new(io::stdout().lock());
    let mut correct = 0usize;
    for i in 0..data.len() {
        let post = inference::class_posterior(model, data.sample(i))?;
        let class = argmax(&post);
        if data.label(i) == Some(class) {
            correct += 1;
        }
        let list: Vec<String> = post.iter().map(|p| p.to_string()).collect();
        writeln!(out, "sample={i} class={class} posterior={}", list.join(",")).map_err(stdout_err)?;
    }
    if data.labels.is_some() {
        let acc = if data.is_empty() {
            "na".to_string()
        } else {
            (correct as f64 / data.len() as f64).to_string()
        };
        writeln!(out, "accuracy={acc}").map_err(stdout_err)?;
    }
    out.flush().map_err(stdout_err)?;
    Ok(Status::Ok)
}

/// The checkpointed model, or a randomized model built from a config.
fn model_for(checkpoint: Option<&Path>, config: Option<&Path>, seed: u64) -> Result<Model> {
    match checkpoint {
        Some(p) => Ok(load_checkpoint(p)?.model),
        None => {
            let cfg = load_config(config)?;
            Model::randomized(cfg.build_structure()?, cfg.model_options(), seed, 1.0)
        }
    }
}

pub fn validate(args: ValidateArgs) -> Result<Status> {
    let mut out = BufWriter::new(io::stdout().lock());
    let mut failed = false;
    let base = match &args.checkpoint {
        Some(p) => Some(load_checkpoint(p)?.model),
        None => None,
    };
    for seed in 0..args.seeds {
        let mut model = match &base {
            Some(m) => m.clone(),
            None => model_for(None, args.config.as_deref(), seed)?,
        };
        if args.corrupt_normalization {
            model.bypass_normalization_for_testing();
        }
        for check in validation_suite(&model, seed)? {
            failed |= !check.passed;
            writeln!(out, "{check}").map_err(stdout_err)?;
        }
    }
    out.flush().map_err(stdout_err)?;
    Ok(if failed { Status::ChecksFailed } else { Status::Ok })
}

pub fn gradcheck(args: GradcheckArgs) -> Result<Status> {
    let model = model_for(args.checkpoint.as_deref(), args.config.as_deref(), args.seed)?;
    if args.samples == 0 {
        return Err(PncError::Input("--samples must be >= 1".into()));
    }
    let data = random_assignments(&model, args.samples, args.seed);
    let report = check_gradients(&model, &data.samples(), Objective::Nll)?;
    let mut out = BufWriter::new(io::stdout().lock());
    for g in &report.groups {
        writeln!(
            out,
            "group={} params={} max_rel_err={:.3e}",
            g.group, g.count, g.max_relative_error
        )
        .map_err(stdout_err)?;
    }
    let pass = report.passes(args.tolerance);
    writeln!(
        out,
        "max_rel_err={:.3e} result={}",
        report.max_relative_error(),
        if pass { "pass" } else { "fail" }
    )
    .map_err(stdout_err)?;
    out.flush().map_err(stdout_err)?;
    Ok(if pass { Status::Ok } else { Status::ChecksFailed })
}
