//! Shared fixtures for the criterion benchmarks in `benches/`.

use sgld_core::data::draw_dataset;
use sgld_core::{Dataset, Labels, LogisticRidgeLoss, QuadraticLoss, SgldConfig, UniformBall};

pub const SEED: u64 = 11;

/// Safe-regime quadratic configuration in dimension `dim`.
pub fn quadratic_config(dim: usize, n: usize, steps: usize) -> SgldConfig {
    SgldConfig {
        eta: 0.01,
        beta: 4.0,
        batch_size: 10.min(n),
        n,
        steps,
        dim,
        init_var: 1.0,
        seed: SEED,
        strict_mode: true,
        lsi: Default::default(),
    }
}

pub fn quadratic(dim: usize) -> QuadraticLoss {
    QuadraticLoss::new(1.0, 1.0, dim).expect("valid quadratic")
}

pub fn logistic(dim: usize) -> LogisticRidgeLoss {
    LogisticRidgeLoss::new(1.0, 1.0, dim).expect("valid logistic")
}

/// Dataset 0 of size `n` from the unit ball.
pub fn dataset(dim: usize, n: usize, labels: Labels) -> Dataset {
    let mu = UniformBall::new(dim, 1.0, labels).expect("valid ball");
    draw_dataset(&mu, n, SEED, 0)
}
