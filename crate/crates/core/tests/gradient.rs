//! Analytic surrogate-loss gradient against central finite differences.

mod common;

use common::gradient::{cases, gradient_errors, FD_REL_TOL};
use preimage::approximator::surrogate_loss;
use preimage::lirpa::{intermediate_bounds, AlphaAssignment, AlphaInit};
use preimage::SeededSampler;

#[test]
fn gradient_matches_finite_differences() {
    let errs = gradient_errors(50);
    let worst = errs.iter().copied().fold(0.0, f64::max);
    assert!(worst <= FD_REL_TOL, "worst relative error {worst:e}");
}

#[test]
fn loss_lies_in_open_unit_interval() {
    for (net, spec, region) in cases() {
        let spec_net = net.append_spec_rows(&spec).unwrap();
        let nb = intermediate_bounds(&spec_net, &region, AlphaInit::Adaptive).unwrap();
        let alpha = AlphaAssignment::init(&nb, spec_net.output_dim(), AlphaInit::Adaptive);
        let samples = SeededSampler::new(1).sample_uniform(&region, 500).unwrap();
        let (loss, _) = surrogate_loss(&alpha, &samples, &spec_net, &nb, 1.0).unwrap();
        assert!(loss > -1.0 && loss < 0.0);
    }
}
