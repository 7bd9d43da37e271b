//! Finite-difference check of the surrogate-loss gradient.

use preimage::approximator::surrogate_loss;
use preimage::fixtures;
use preimage::lirpa::{intermediate_bounds, AlphaAssignment, AlphaInit};
use preimage::{Hyperrectangle, Network, OutputSpec, SeededSampler};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn cases() -> Vec<(Network, OutputSpec, Hyperrectangle)> {
    let mut v = vec![
        (fixtures::f1(), fixtures::f1_spec(), fixtures::f1_region()),
        (fixtures::f3(), fixtures::f3_spec(), fixtures::f3_region()),
    ];
    for s in fixtures::f2_specs() {
        v.push((fixtures::f2(), s, fixtures::f2_region()));
    }
    v
}

/// Worst relative error over one random (fixture, sub-region, alpha) triple,
/// or `None` if the sub-region has no unstable neuron.
fn check(seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = cases();
    let (net, spec, region) = &all[seed as usize % all.len()];
    let spec_net = net.append_spec_rows(spec).unwrap();
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..region.dim())
        .map(|i| {
            let w = region.width(i);
            let a = rng.gen_range(0.0..0.5);
            let b = rng.gen_range(0.5..1.0);
            (region.lower()[i] + a * w, region.lower()[i] + b * w)
        })
        .unzip();
    let bbox = Hyperrectangle::new(lo, hi).unwrap();
    let nb = intermediate_bounds(&spec_net, &bbox, AlphaInit::Adaptive).unwrap();
    let mut alpha = AlphaAssignment::init(&nb, spec_net.output_dim(), AlphaInit::Adaptive);
    if alpha.is_empty() {
        return None;
    }
    let flat: Vec<f64> = (0..alpha.len()).map(|_| rng.gen_range(0.05..0.95)).collect();
    alpha.set_flat_clamped(&flat);
    let samples = SeededSampler::new(seed).sample_uniform(&bbox, 200).unwrap();
    let (_, grad) = surrogate_loss(&alpha, &samples, &spec_net, &nb, 1.0).unwrap();

    let mut worst: f64 = 0.0;
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-8);
    for k in 0..flat.len() {
        let mut plus = flat.clone();
        plus[k] += FD_STEP;
        let mut minus = flat.clone();
        minus[k] -= FD_STEP;
        let mut ap = alpha.clone();
        ap.set_flat_clamped(&plus);
        let mut am = alpha.clone();
        am.set_flat_clamped(&minus);
        let lp = surrogate_loss(&ap, &samples, &spec_net, &nb, 1.0).unwrap().0;
        let lm = surrogate_loss(&am, &samples, &spec_net, &nb, 1.0).unwrap().0;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        worst = worst.max((grad[k] - fd).abs() / scale.max(fd.abs()));
    }
    Some(worst)
}

/// Runs random configurations until `n` of them have at least one alpha.
pub fn gradient_errors(n: usize) -> Vec<f64> {
    (0u64..)
        .filter_map(check)
        .take(n)
        .collect()
}
