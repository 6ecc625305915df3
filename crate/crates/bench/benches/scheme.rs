//! Benchmarks of the three hot paths: one node of the staged prediction
//! chain, a full closed-loop run, and the sampled constants estimation.

use std::collections::VecDeque;
use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use predfb_core::{
    advance_prediction_chain, build_planar, estimate_scheme_constants, run_scenario, PlanarParams,
    SamplerConfig, ScenarioConfig,
};

/// One chain advance at the defaults of the planar scenario: three stages
/// of a quarter-delay each at the standard integration step, so one call
/// integrates 300 field evaluations and rotates three rings.
fn chain_advance(c: &mut Criterion) {
    let inst = build_planar(&PlanarParams::default()).expect("planar instance");
    let stages = 3;
    let m_steps = 100;
    let h = 0.0025;
    let z = vec![0.8, -0.3];
    let rings: Vec<VecDeque<Vec<f64>>> = (0..stages)
        .map(|_| (0..m_steps).map(|_| z.clone()).collect())
        .collect();
    let current_cell = stages * m_steps;
    let u_cells = vec![vec![0.1]; current_cell + 1];

    c.bench_function("chain_advance", |b| {
        b.iter_batched(
            || rings.clone(),
            |mut rings| {
                black_box(advance_prediction_chain(
                    &inst,
                    black_box(&z),
                    &mut rings,
                    &u_cells,
                    current_cell,
                    m_steps,
                    h,
                ))
            },
            BatchSize::SmallInput,
        )
    });
}

const CLOSED_LOOP: &str = r#"
[system]
name = "planar"

[scheme]
stages = 3
sampling_period = 0.05
step = 0.0025
horizon = 20.0

[initial]
x0 = [1.0, 0.5]
"#;

/// A short but complete closed-loop run: 8000 integration nodes with the
/// observer, the prediction chain, and the sampled measurement path, plus
/// the standard metrics pass.
fn closed_loop(c: &mut Criterion) {
    let config = ScenarioConfig::from_toml_str(CLOSED_LOOP).expect("scenario");
    let mut group = c.benchmark_group("closed_loop");
    group
        .sample_size(10)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(8));
    group.bench_function("planar_horizon_20", |b| {
        b.iter(|| run_scenario(black_box(&config)).expect("run"))
    });
    group.finish();
}

/// The sampled supremum estimation behind certification, at a reduced
/// budget so one iteration stays in the tens of milliseconds.
fn constants_estimation(c: &mut Criterion) {
    let inst = build_planar(&PlanarParams::default()).expect("planar instance");
    let cfg = SamplerConfig {
        samples: 512,
        max_doublings: 1,
        ..SamplerConfig::default()
    };
    let delta = 0.25;
    let mut group = c.benchmark_group("constants_estimation");
    group
        .sample_size(10)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(8));
    group.bench_function("planar_512_samples", |b| {
        b.iter(|| estimate_scheme_constants(black_box(&inst), delta, &cfg).expect("constants"))
    });
    group.finish();
}

criterion_group!(benches, chain_advance, closed_loop, constants_estimation);
criterion_main!(benches);
