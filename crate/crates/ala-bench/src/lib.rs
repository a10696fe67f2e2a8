//! Shared fixtures for the benchmark targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ala_core::data::{synth_generate, Dataset, SynthSpec};
use ala_core::TrainConfig;

/// Noisy single-configuration dataset: a 5x5 workload grid with 10 batch
/// sizes and 2 replicates (500 rows), mirroring the CLI test fixture.
pub fn benchmark_dataset() -> Dataset {
    let spec = SynthSpec {
        bb_values: vec![1, 2, 4, 8, 12, 16, 24, 32, 48, 64],
        noise_rel: 0.02,
        replicates: 2,
        ..SynthSpec::default()
    };
    synth_generate(&spec, 42).expect("fixture generation").0
}

/// One noiseless `(bb, thpt)` group suitable for curve fitting.
pub fn fit_group_fixture() -> Vec<(f64, f64)> {
    let truth = ala_core::ExpParams {
        a: 50.0,
        b: 0.1,
        c: 100.0,
    };
    [1.0, 2.0, 4.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0]
        .iter()
        .map(|&bb| (bb, ala_core::expmodel::eval_throughput(truth, bb)))
        .collect()
}

/// Random regression problem for the boosting engine.
pub fn gbt_fixture(rows: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..rows)
        .map(|_| {
            (0..7)
                .map(|_| rng.gen_range(0.0..10.0))
                .collect::<Vec<f64>>()
        })
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| r[0].sin() * 5.0 + r[1] * 0.3 + r[2].sqrt())
        .collect();
    (x, y)
}

/// Training configuration sized for the annealing inner loop.
pub fn light_train_config() -> TrainConfig {
    TrainConfig {
        n_trees: 50,
        max_depth: 3,
        ..TrainConfig::default()
    }
}
