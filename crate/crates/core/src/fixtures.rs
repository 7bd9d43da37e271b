//! Small reference networks used by tests, examples and the acceptance suite.
//!
//! * `F1`: a hand-written 2-2-1 network.
//! * `F2`: 2-10-10-4 with seeded random weights, a stand-in for a four-way
//!   parking-lot classifier on `[0, 2]^2`.
//! * `F3`: 3-4-2 with seeded random weights, for three-dimensional checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Hyperrectangle;
use crate::model::{Layer, Network, OutputConstraint, OutputSpec};

/// Seed that generates the `F2` weights.
pub const F2_SEED: u64 = 1688;

/// Seed that generates the `F3` weights.
pub const F3_SEED: u64 = 31;

/// `y = ReLU(x1 - x2) - ReLU(x1 + x2 - 1) + 0.25`.
pub fn f1() -> Network {
    Network::new(
        2,
        vec![
            Layer::from_rows(&[vec![1.0, -1.0], vec![1.0, 1.0]], &[0.0, -1.0], true)
                .expect("valid layer"),
            Layer::from_rows(&[vec![1.0, -1.0]], &[0.25], false).expect("valid layer"),
        ],
    )
    .expect("valid network")
}

/// Spec `y >= 0` for `F1`.
pub fn f1_spec() -> OutputSpec {
    OutputSpec::new(vec![OutputConstraint {
        c: vec![1.0],
        d: 0.0,
    }])
    .expect("valid spec")
}

pub fn f1_region() -> Hyperrectangle {
    Hyperrectangle::unit(2)
}

/// Random ReLU network with the given layer widths (first entry is the input).
pub fn random_network(widths: &[usize], seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = widths.len() - 1;
    let layers = (0..n)
        .map(|k| {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let scale = (6.0 / fan_in as f64).sqrt();
            let rows: Vec<Vec<f64>> = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| rng.gen_range(-scale..scale)).collect())
                .collect();
            let bias: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Layer::from_rows(&rows, &bias, k + 1 < n).expect("valid layer")
        })
        .collect();
    Network::new(widths[0], layers).expect("valid network")
}

pub fn f2() -> Network {
    random_network(&[2, 10, 10, 4], F2_SEED)
}

pub fn f2_region() -> Hyperrectangle {
    Hyperrectangle::new(vec![0.0, 0.0], vec![2.0, 2.0]).expect("valid box")
}

/// The four one-vs-rest specs `y_k >= y_i` for all `i != k`.
pub fn f2_specs() -> Vec<OutputSpec> {
    (0..4)
        .map(|k| OutputSpec::one_vs_rest(4, k).expect("valid spec"))
        .collect()
}

pub fn f3() -> Network {
    random_network(&[3, 4, 2], F3_SEED)
}

pub fn f3_region() -> Hyperrectangle {
    Hyperrectangle::new(vec![-1.0; 3], vec![1.0; 3]).expect("valid box")
}

/// `y_1 >= y_2` for `F3`.
pub fn f3_spec() -> OutputSpec {
    OutputSpec::one_vs_rest(2, 0).expect("valid spec")
}

/// Identity map on `R^d` (a single linear layer).
pub fn identity(d: usize) -> Network {
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    Network::new(
        d,
        vec![Layer::from_rows(&rows, &vec![0.0; d], false).expect("valid layer")],
    )
    .expect("valid network")
}

/// Spec `x1 - x2 >= 0` on a two-output network.
pub fn diagonal_spec() -> OutputSpec {
    OutputSpec::new(vec![OutputConstraint {
        c: vec![1.0, -1.0],
        d: 0.0,
    }])
    .expect("valid spec")
}
