//! Shared fixtures for the criterion benchmarks.

use hsphr::scenario::{Scenario, ScenarioSpec};
use hsphr::{Complex64, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Noiseless scenario on a `(size + 2·frame)²` grid.
pub fn scenario(channels: usize, experiments: usize, size: usize, frame: usize) -> Scenario {
    let mut spec = ScenarioSpec::new(channels, experiments, size);
    spec.object.frame = frame;
    Scenario::build(spec).expect("benchmark scenario")
}

/// Default solver settings with the warmup already over, so every timed
/// iteration runs the full update.
pub fn solver_config(sc: &Scenario, filtered: bool) -> SolverConfig {
    let mut cfg = sc.solver_config().expect("solver config");
    cfg.warmup = 0;
    cfg.iterations = usize::MAX;
    if !filtered {
        cfg = cfg.ablated();
        cfg.dual = hsphr::DualUpdate::Immediate;
    }
    cfg
}

/// Pixel-wise SPO inputs: `count` vectors of length `k`, one `z` each.
pub fn spo_inputs(count: usize, k: usize, seed: u64) -> (Vec<Complex64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..count * k)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let z = (0..count).map(|_| rng.random_range(0.1..4.0)).collect();
    (v, z)
}
