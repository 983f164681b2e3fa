//! Batch loss and gradients, sequential fold versus the rayon fold.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pnc::data::synthetic_digits;
use pnc::exec::ExecMode;
use pnc::model::{Model, ModelOptions};
use pnc::structure::{build_2d_structure, LayerKind};
use pnc::training::{loss_and_gradients, Objective};

fn batch_gradients(c: &mut Criterion) {
    let data = synthetic_digits(&[0, 1, 2, 3], 16, 12, 0);
    let samples = data.samples();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for kind in [LayerKind::PlainSum, LayerKind::Neural] {
        let s = build_2d_structure(12, 12, 6, 6, kind).unwrap();
        let model = Model::new(s, ModelOptions::default(), 0).unwrap();
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let id = BenchmarkId::new(kind.as_str(), format!("{mode:?}").to_lowercase());
            group.bench_function(id, |b| {
                b.iter(|| loss_and_gradients(&model, &samples, Objective::Nll, mode).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batch_gradients);
criterion_main!(benches);
