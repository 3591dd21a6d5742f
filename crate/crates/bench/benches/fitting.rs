use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nma_bench::{contrasts, dataset};
use nma_core::bootstrap::{self, replicate_rng};
use nma_core::diagnostics::{self, TemporaryReference};
use nma_core::{Method, Model};

fn fit_model(c: &mut Criterion) {
    let ds = dataset();
    let data = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    c.bench_function("reml_fit_26_trials", |b| {
        b.iter(|| model.fit(black_box(&data), Method::Reml).unwrap())
    });
    c.bench_function("ml_fit_26_trials", |b| {
        b.iter(|| model.fit(black_box(&data), Method::Ml).unwrap())
    });
}

fn leave_one_out(c: &mut Criterion) {
    let ds = dataset();
    let data = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    let fit = model.fit(&data, Method::Reml).unwrap();
    c.bench_function("loo_measures_serial", |b| {
        b.iter(|| {
            diagnostics::loo_measures(&model, &data, &fit, TemporaryReference::LowestIndex, false)
                .unwrap()
        })
    });
}

fn bootstrap_replicate(c: &mut Criterion) {
    let ds = dataset();
    let data = contrasts(&ds);
    let model = Model::new(ds.treatments.p());
    let fit = model.fit(&data, Method::Reml).unwrap();
    c.bench_function("bootstrap_loo_replicate", |b| {
        let mut index = 0u64;
        b.iter(|| {
            let mut rng = replicate_rng(1, 1, index);
            index += 1;
            let sample = bootstrap::resample_dataset(&data, &fit, &mut rng).unwrap();
            let refit = model.fit(&sample, Method::Reml).unwrap();
            diagnostics::loo_measures(&model, &sample, &refit, TemporaryReference::LowestIndex, false)
                .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = fit_model, leave_one_out, bootstrap_replicate
}
criterion_main!(benches);
