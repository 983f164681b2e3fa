//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero when any of them fails.
//!
//! Criteria 6 and 8 train on the synthetic digit fixture. Point
//! `PNC_MNIST_DIR` at a directory holding `train-images-idx3-ubyte[.gz]` and
//! `train-labels-idx1-ubyte[.gz]` to run them on MNIST instead.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use pnc::data::{encode_idx_images, encode_idx_labels, load_idx, split_indices, synthetic_digits, Dataset};
use pnc::exec::ExecMode;
use pnc::inference::{self, bits_per_dimension};
use pnc::model::{quotient_sum_layer, Model, ModelOptions, SumParams};
use pnc::numerics::LayerBuffer;
use pnc::oracle::{enumerate_joint, log_gap, oracle_conditional, oracle_marginal};
use pnc::structure::{build_1d_structure, build_2d_structure, LayerKind};
use pnc::training::{argmax, check_gradients, evaluate, train, Objective, Sample, TrainConfig};
use pnc::PncError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FLAVORS: [LayerKind; 3] = [LayerKind::PlainSum, LayerKind::Quotient, LayerKind::Neural];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn population() -> Vec<Model> {
    let mut models = Vec::new();
    for kind in FLAVORS {
        for seed in 0..20 {
            let s = build_1d_structure(8, 3, 3, 1, kind).unwrap();
            models.push(Model::randomized(s, ModelOptions::binary(), seed, 1.5).unwrap());
        }
    }
    models
}

fn normalization() -> Outcome {
    let mut worst = 0.0f64;
    for m in population() {
        worst = worst.max(enumerate_joint(&m, 0).unwrap().total().abs());
    }
    outcome(worst < 1e-9, format!("60 models, max |log Z| = {worst:.2e}"))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut marg_err, mut cond_err) = (0.0f64, 0.0f64);
    let mut splits = 0;
    for m in population() {
        let table = enumerate_joint(&m, 0).unwrap();
        let order = m.structure.variable_order.clone();
        for _ in 0..50 {
            let x: Vec<u8> = (0..8).map(|_| rng.gen_range(0..2)).collect();
            let first = rng.gen_range(0..=8);
            let marg = order.suffix_mask(first);
            let engine = inference::log_marginal(&m, &x, &marg).unwrap();
            marg_err = marg_err.max(log_gap(engine, oracle_marginal(&table, &x, &marg)));

            let end = rng.gen_range(first..=8);
            let query: Vec<bool> = (0..8).map(|v| (first..end).contains(&order.rank(v))).collect();
            let rest = order.suffix_mask(end);
            let engine = inference::log_conditional(&m, &x, &query, &rest).unwrap();
            cond_err = cond_err.max(log_gap(engine, oracle_conditional(&table, &x, &query, &rest)));
            splits += 1;
        }
    }
    outcome(
        marg_err < 1e-9 && cond_err < 1e-9,
        format!("{splits} splits, marginal err {marg_err:.2e}, conditional err {cond_err:.2e}"),
    )
}

fn degeneration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut evals = 0;
    for seed in 0..10 {
        let s = build_2d_structure(3, 3, 3, 2, LayerKind::Neural).unwrap();
        let opts = ModelOptions {
            num_categories: 3,
            ..ModelOptions::default()
        };
        let mut neural = Model::randomized(s, opts, seed, 1.5).unwrap();
        let mut params = neural.params.clone();
        for layer in params.layers.iter_mut() {
            let SumParams::Neural { bias, .. } = layer else { unreachable!() };
            let mut logits = bias.clone();
            let p = logits.shape[0];
            logits.shape = vec![p, 3, 3];
            *layer = SumParams::Plain { logits };
        }
        for layer in neural.params.layers.iter_mut() {
            let SumParams::Neural { taps, .. } = layer else { unreachable!() };
            taps.data.iter_mut().for_each(|t| *t = 0.0);
        }
        let plain_structure = build_2d_structure(3, 3, 3, 2, LayerKind::PlainSum).unwrap();
        let plain = Model::from_parameters(plain_structure, opts, params).unwrap();
        let order = neural.structure.variable_order.clone();
        for _ in 0..100 {
            let x: Vec<u8> = (0..9).map(|_| rng.gen_range(0..3)).collect();
            let marg = order.suffix_mask(rng.gen_range(0..=9));
            let a = inference::log_marginal(&neural, &x, &marg).unwrap();
            // any marginal of a plain circuit is tractable, whatever its order
            let b = plain.prepare().log_density(&x, Some(&marg), 0);
            worst = worst.max(log_gap(a, b));
            evals += 1;
        }
    }
    outcome(worst < 1e-12, format!("{evals} evaluations, max gap {worst:.2e}"))
}

/// `log( sum_i w_ci x_i s_i / sum_i w_ci s_i )` in linear space, where `s` is
/// the product of the preceding partitions' values.
fn direct_quotient(input: &[f64], nc: usize, deps: &[usize], logits: &[f64], p: usize) -> Vec<f64> {
    let x: Vec<f64> = input[p * nc..(p + 1) * nc].iter().map(|v| v.exp()).collect();
    let mut s = vec![1.0; nc];
    for &d in deps {
        for i in 0..nc {
            s[i] *= input[d * nc + i].exp();
        }
    }
    (0..nc)
        .map(|c| {
            let z = &logits[(p * nc + c) * nc..(p * nc + c + 1) * nc];
            let total: f64 = z.iter().map(|v| v.exp()).sum();
            let w: Vec<f64> = z.iter().map(|v| v.exp() / total).collect();
            let num: f64 = (0..nc).map(|i| w[i] * x[i] * s[i]).sum();
            let den: f64 = (0..nc).map(|i| w[i] * s[i]).sum();
            (num / den).ln()
        })
        .collect()
}

fn quotient_embedding() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = build_2d_structure(6, 6, 4, 4, LayerKind::Quotient).unwrap();
        let m = Model::randomized(s, ModelOptions::binary(), seed, 1.5).unwrap();
        for (i, l) in m.structure.internal_layers().enumerate() {
            let layout = &m.structure.layers[l];
            let SumParams::Quotient { logits } = &m.params.layers[i] else { unreachable!() };
            let nc = 4;
            let values: Vec<f64> = (0..layout.num_partitions() * nc)
                .map(|_| rng.gen_range(-4.0..0.0))
                .collect();
            let buffer = LayerBuffer::new(values.clone(), nc, layout.grid);
            let out = quotient_sum_layer(&buffer, &logits.data, layout);
            for p in 0..layout.num_partitions() {
                let deps: Vec<usize> = layout.dependencies[p].iter().map(|d| d.partition).collect();
                let want = direct_quotient(&values, nc, &deps, &logits.data, p);
                for c in 0..nc {
                    worst = worst.max((out.get(p, c) - want[c]).abs());
                    checked += 1;
                }
            }
        }
    }
    outcome(worst < 1e-10, format!("{checked} unit outputs, max gap {worst:.2e}"))
}

fn gradients() -> Outcome {
    let mut worst = 0.0f64;
    for n in [4, 8] {
        for kind in FLAVORS {
            let s = build_1d_structure(n, 3, 2, 2, kind).unwrap();
            let m = Model::randomized(s, ModelOptions::binary().with_classes(2), n as u64, 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let xs: Vec<Vec<u8>> = (0..3).map(|_| (0..n).map(|_| rng.gen_range(0..2)).collect()).collect();
            for objective in [Objective::Nll, Objective::CrossEntropy] {
                let samples: Vec<Sample> = xs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| Sample {
                        values: x,
                        label: Some(i % 2),
                    })
                    .collect();
                let report = check_gradients(&m, &samples, objective).unwrap();
                worst = worst.max(report.max_relative_error());
            }
        }
    }
    outcome(worst < 1e-5, format!("N in {{4, 8}}, 3 flavors, max rel err {worst:.2e}"))
}

fn mnist_dir() -> Option<PathBuf> {
    std::env::var_os("PNC_MNIST_DIR").map(PathBuf::from)
}

fn find(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

fn mnist(dir: &Path) -> Dataset {
    load_idx(
        &find(dir, "train-images-idx3-ubyte"),
        Some(&find(dir, "train-labels-idx1-ubyte")),
    )
    .expect("PNC_MNIST_DIR does not hold readable MNIST training files")
}

fn ordering() -> Outcome {
    let (data, nc, source) = match mnist_dir() {
        Some(dir) => {
            let all = mnist(&dir);
            (all.subset(&(0..1000).collect::<Vec<_>>()), 12, "mnist")
        }
        None => (synthetic_digits(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9], 100, 16, 1), 8, "synthetic 16x16"),
    };
    let mut means = Vec::new();
    for kind in [LayerKind::Neural, LayerKind::Quotient, LayerKind::PlainSum] {
        let mut total = 0.0;
        for seed in 0..3 {
            let s = build_2d_structure(data.height, data.width, nc, nc, kind).unwrap();
            let m = Model::new(s, ModelOptions::default(), seed).unwrap();
            let cfg = TrainConfig {
                learning_rate: 0.05,
                epochs: 5,
                seed,
                ..TrainConfig::default()
            };
            let out = train(m, &data, &cfg, ExecMode::Parallel, |_| {}).unwrap();
            let best = out
                .trace
                .iter()
                .filter(|r| r.split == pnc::training::Split::Val)
                .map(|r| r.metrics.bpd)
                .fold(f64::INFINITY, f64::min);
            total += best;
        }
        means.push(total / 3.0);
    }
    outcome(
        means[0] < means[1] && means[1] < means[2],
        format!(
            "{source}, mean val bpd neural {:.4} < quotient {:.4} < plain {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

fn bpd_arithmetic() -> Outcome {
    let bpd = bits_per_dimension(472.863, 784);
    outcome((bpd - 0.87).abs() <= 0.005, format!("472.863 nats over 784 dims = {bpd:.4} bpd"))
}

fn discriminative() -> Outcome {
    let data = match mnist_dir() {
        Some(dir) => {
            let two = mnist(&dir).filter_classes(&[0, 1]).unwrap();
            let mut idx = Vec::new();
            for class in 0..2usize {
                idx.extend((0..two.len()).filter(|&i| two.label(i) == Some(class)).take(500));
            }
            idx.sort_unstable();
            two.subset(&idx)
        }
        None => synthetic_digits(&[0, 1], 500, 16, 2),
    };
    let s = build_2d_structure(data.height, data.width, 8, 8, LayerKind::Neural).unwrap();
    let m = Model::new(s, ModelOptions::default().with_classes(2), 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 10,
        ..TrainConfig::default()
    };
    let out = train(m, &data, &cfg, ExecMode::Parallel, |_| {}).unwrap();
    let (train_idx, _) = split_indices(data.len(), cfg.val_fraction, cfg.seed).unwrap();
    let samples = data.samples_at(&train_idx);
    let acc = evaluate(&out.model, &samples, Objective::Nll, ExecMode::Parallel)
        .unwrap()
        .accuracy
        .unwrap();
    let mut sum_gap = 0.0f64;
    let mut agree = true;
    for s in &samples {
        let post = inference::class_posterior(&out.model, s.values).unwrap();
        sum_gap = sum_gap.max((post.iter().sum::<f64>() - 1.0).abs());
        agree &= post.len() == 2 && argmax(&post) < 2;
    }
    outcome(
        acc > 0.95 && sum_gap < 1e-12 && agree,
        format!(
            "{} training samples, train accuracy {:.4}, max |sum p(y|x) - 1| = {sum_gap:.2e}",
            samples.len(),
            acc
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = synthetic_digits(&[0, 1, 2], 20, 8, 5);
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    std::fs::write(&images, encode_idx_images(8, 8, &data.images)).unwrap();
    std::fs::write(&labels, encode_idx_labels(data.labels.as_ref().unwrap())).unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        "height = 8\nwidth = 8\ncomponents = 3\nnum_classes = 3\nepochs = 3\nbatch_size = 10\nlearning_rate = 0.05\nseed = 7\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let result = Command::new(env!("CARGO_BIN_EXE_pnc"))
            .arg("train")
            .arg("--config")
            .arg(&config)
            .arg("--images")
            .arg(&images)
            .arg("--labels")
            .arg(&labels)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
        (result.stdout, std::fs::read(out).unwrap())
    };
    let (trace_a, ck_a) = run("a.ckpt");
    let (trace_b, ck_b) = run("b.ckpt");
    let lines = trace_a.iter().filter(|&&b| b == b'\n').count();
    outcome(
        trace_a == trace_b && ck_a == ck_b && lines == 6,
        format!(
            "{lines} trace lines, traces identical: {}, checkpoints identical: {} ({} bytes)",
            trace_a == trace_b,
            ck_a == ck_b,
            ck_a.len()
        ),
    )
}

fn idx_conformance() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 37 % 256) as u8).collect();
    let labels = [9u8, 0, 4];
    let img_bytes = encode_idx_images(4, 5, &pixels);
    let lab_bytes = encode_idx_labels(&labels);
    let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
    std::fs::write(&ip, &img_bytes).unwrap();
    std::fs::write(&lp, &lab_bytes).unwrap();
    let loaded = load_idx(&ip, Some(&lp)).unwrap();
    let round_trip = loaded.images == pixels
        && loaded.labels.as_deref() == Some(&labels[..])
        && (loaded.num_samples, loaded.height, loaded.width) == (3, 4, 5)
        && encode_idx_images(4, 5, &loaded.images) == img_bytes;

    let is_format = |bytes: &[u8], images: bool| {
        let p = dir.path().join("bad");
        std::fs::write(&p, bytes).unwrap();
        let err = if images {
            load_idx(&p, None).unwrap_err()
        } else {
            load_idx(&ip, Some(&p)).unwrap_err()
        };
        matches!(err, PncError::Format { .. })
    };
    let mut wrong_magic = img_bytes.clone();
    wrong_magic[3] = 0x01;
    let rejections = [
        is_format(&wrong_magic, true),
        is_format(&lab_bytes, true),
        is_format(&img_bytes[..img_bytes.len() - 1], true),
        is_format(&img_bytes[..7], true),
        is_format(&lab_bytes[..lab_bytes.len() - 1], false),
        is_format(&img_bytes, false),
    ];
    let rejected = rejections.iter().filter(|&&r| r).count();
    outcome(
        round_trip && rejected == rejections.len(),
        format!("round trip exact: {round_trip}, malformed rejected as format errors: {rejected}/{}", rejections.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("normalization", normalization),
        ("oracle equivalence", oracle_equivalence),
        ("zero-kernel degeneration", degeneration),
        ("quotient layer", quotient_embedding),
        ("gradient exactness", gradients),
        ("flavor ordering", ordering),
        ("bpd arithmetic", bpd_arithmetic),
        ("discriminative", discriminative),
        ("train determinism", determinism),
        ("idx conformance", idx_conformance),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if filter.as_deref().is_some_and(|f| !name.contains(f) && f != id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.passed);
        println!(
            "criterion {id:>2} {name}: {} ({}; {:.1}s)",
            if o.passed { "pass" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
