//! Property-based checks of the geometric and bounding invariants.

use preimage::approximator::{approximate_region, ApproxConfig, LossConfig, PreimageProblem};
use preimage::fixtures;
use preimage::lirpa::{
    backward_lower_bounds, backward_upper_bounds, intermediate_bounds, relax_relu, AffineBound,
    AlphaAssignment, AlphaInit,
};
use preimage::{Halfspace, Hyperrectangle, Network, OutputSpec, Polytope, SeededSampler};
use proptest::prelude::*;

fn small_approx() -> ApproxConfig {
    ApproxConfig {
        loss: LossConfig {
            n_samples: 500,
            steps: 5,
            ..LossConfig::default()
        },
        ..ApproxConfig::default()
    }
}

/// Random sub-box of `outer` with every edge at least 5% of the outer edge.
fn sub_box(outer: &Hyperrectangle, fr: &[(f64, f64)]) -> Hyperrectangle {
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..outer.dim())
        .map(|i| {
            let (a, b) = fr[i];
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            let b = (b.max(a + 0.05)).min(1.0);
            let a = a.min(b - 0.05);
            let w = outer.width(i);
            (outer.lower()[i] + a * w, outer.lower()[i] + b * w)
        })
        .unzip();
    Hyperrectangle::new(lo, hi).unwrap()
}

fn fixture_cases() -> Vec<(Network, OutputSpec, Hyperrectangle)> {
    let mut v = vec![
        (fixtures::f1(), fixtures::f1_spec(), fixtures::f1_region()),
        (fixtures::f3(), fixtures::f3_spec(), fixtures::f3_region()),
    ];
    for s in fixtures::f2_specs() {
        v.push((fixtures::f2(), s, fixtures::f2_region()));
    }
    v
}

fn fractions(d: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn relu_relaxation_sandwiches(l in -5.0..5.0f64, w in 0.0..5.0f64, alpha in 0.0..=1.0f64, t in 0.0..=1.0f64) {
        let u = l + w;
        let (lo, up) = relax_relu(l, u, alpha).unwrap();
        let h = l + t * w;
        let r = h.max(0.0);
        prop_assert!(lo.eval(h) <= r + 1e-12);
        prop_assert!(up.eval(h) >= r - 1e-12);
    }

    #[test]
    fn concretize_brackets_samples(a in prop::collection::vec(-3.0..3.0f64, 3), b in -2.0..2.0f64, fr in fractions(3), seed in any::<u64>()) {
        let bbox = sub_box(&Hyperrectangle::new(vec![-2.0; 3], vec![2.0; 3]).unwrap(), &fr);
        let bound = AffineBound {
            a: nalgebra::DMatrix::from_row_slice(1, 3, &a),
            b: nalgebra::DVector::from_vec(vec![b]),
        };
        let (lo, hi) = bound.concretize(&bbox).unwrap();
        for x in SeededSampler::new(seed).sample_uniform(&bbox, 1000).unwrap() {
            let v = bound.eval_row(0, &x);
            prop_assert!(lo[0] <= v + 1e-12 && v <= hi[0] + 1e-12);
        }
    }

    #[test]
    fn bisection_tiles_parent(fr in fractions(3), dim in 0usize..3, seed in any::<u64>()) {
        let parent = sub_box(&Hyperrectangle::new(vec![-1.0; 3], vec![3.0; 3]).unwrap(), &fr);
        let (a, b) = parent.bisect(dim).unwrap();
        prop_assert!(a.interiors_disjoint(&b));
        prop_assert!(parent.encloses(&a) && parent.encloses(&b));
        prop_assert!((a.volume() + b.volume() - parent.volume()).abs() <= 1e-12 * parent.volume());
        prop_assert_eq!(a.upper()[dim], b.lower()[dim]);
        for x in SeededSampler::new(seed).sample_uniform(&parent, 1000).unwrap() {
            prop_assert_eq!(parent.contains(&x), a.contains(&x) || b.contains(&x));
        }
    }

    #[test]
    fn vertices_are_active_and_feasible(rows in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -0.5..1.0f64), 1..5)) {
        let hs: Vec<Halfspace> = rows.iter().map(|&(a1, a2, b)| Halfspace::new(vec![a1, a2], b)).collect();
        let p = Polytope::new(Hyperrectangle::unit(2), hs.clone()).unwrap();
        let mut all = hs.clone();
        for i in 0..2 {
            let mut e = vec![0.0; 2];
            e[i] = 1.0;
            all.push(Halfspace::new(e.clone(), 0.0));
            e[i] = -1.0;
            all.push(Halfspace::new(e, 1.0));
        }
        for v in p.enumerate_vertices().unwrap() {
            let scale = |h: &Halfspace| h.a.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
            prop_assert!(all.iter().all(|h| h.eval(&v) / scale(h) >= -1e-8));
            let active = all.iter().filter(|h| (h.eval(&v) / scale(h)).abs() <= 1e-8).count();
            prop_assert!(active >= 2);
        }
    }

    #[test]
    fn adding_halfspace_never_grows_volume(
        rows in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 5), 1..4),
        extra in prop::collection::vec(-1.0..1.0f64, 5),
        d in 2usize..=4,
    ) {
        let hs: Vec<Halfspace> = rows.iter().map(|r| Halfspace::new(r[..d].to_vec(), r[4].abs() * 0.5)).collect();
        let p = Polytope::new(Hyperrectangle::unit(d), hs).unwrap();
        let q = p.with_halfspaces(&[Halfspace::new(extra[..d].to_vec(), extra[4])]).unwrap();
        prop_assert!(q.exact_volume().unwrap() <= p.exact_volume().unwrap() + 1e-12);
    }

    #[test]
    fn volume_estimate_converges(rows in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.0..1.0f64), 1..3), seed in any::<u64>()) {
        let hs: Vec<Halfspace> = rows.iter().map(|&(a1, a2, b)| Halfspace::new(vec![a1, a2], b)).collect();
        let p = Polytope::new(Hyperrectangle::unit(2), hs).unwrap();
        let samples = SeededSampler::new(seed).sample_uniform(p.bbox(), 100_000).unwrap();
        let est = p.estimate_volume_fraction(&samples).unwrap();
        prop_assert!((est - p.exact_volume().unwrap()).abs() <= 0.01);
    }

    #[test]
    fn outer_box_contains_polytope_samples(rows in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.0..1.0f64), 1..4), seed in any::<u64>()) {
        let hs: Vec<Halfspace> = rows.iter().map(|&(a1, a2, b)| Halfspace::new(vec![a1, a2], b)).collect();
        let p = Polytope::new(Hyperrectangle::unit(2), hs).unwrap();
        prop_assume!(p.has_interior().unwrap());
        let ob = p.outer_box().unwrap();
        for x in SeededSampler::new(seed).sample_uniform(p.bbox(), 10_000).unwrap() {
            if p.contains(&x) {
                prop_assert!(ob.contains(&x));
            }
        }
    }

    #[test]
    fn intermediate_bounds_bracket_preactivations(case in 0usize..6, fr in fractions(3), seed in any::<u64>()) {
        let (net, _, region) = &fixture_cases()[case];
        let bbox = sub_box(region, &fr[..region.dim()]);
        let nb = intermediate_bounds(net, &bbox, AlphaInit::Adaptive).unwrap();
        for x in SeededSampler::new(seed).sample_uniform(&bbox, 2000).unwrap() {
            let mut a = nalgebra::DVector::from_vec(x.clone());
            for (k, layer) in net.layers()[..net.layers().len() - 1].iter().enumerate() {
                let h = &layer.weights * &a + &layer.bias;
                for j in 0..h.len() {
                    prop_assert!(nb.lower[k][j] <= h[j] + 1e-9 && h[j] <= nb.upper[k][j] + 1e-9);
                }
                a = h.map(|v| v.max(0.0));
            }
        }
    }

    #[test]
    fn nested_boxes_tighten_bounds(case in 0usize..6, fr in fractions(3), fr2 in fractions(3)) {
        let (net, _, region) = &fixture_cases()[case];
        let outer = sub_box(region, &fr[..region.dim()]);
        let inner = sub_box(&outer, &fr2[..region.dim()]);
        for init in [AlphaInit::Fixed(0.5), AlphaInit::Fixed(0.0)] {
            let a = intermediate_bounds(net, &outer, init).unwrap();
            let b = intermediate_bounds(net, &inner, init).unwrap();
            prop_assert!(b.within(&a, 1e-9));
        }
    }

    #[test]
    fn lower_and_upper_bounds_are_sound(case in 0usize..6, fr in fractions(3), grid in 0usize..5, seed in any::<u64>()) {
        let (net, spec, region) = &fixture_cases()[case];
        let spec_net = net.append_spec_rows(spec).unwrap();
        let bbox = sub_box(region, &fr[..region.dim()]);
        let nb = intermediate_bounds(&spec_net, &bbox, AlphaInit::Adaptive).unwrap();
        let a = grid as f64 * 0.25;
        let alpha = AlphaAssignment::init(&nb, spec_net.output_dim(), AlphaInit::Fixed(a));
        let lo = backward_lower_bounds(&spec_net, &bbox, &nb, &alpha).unwrap();
        let up = backward_upper_bounds(&spec_net, &bbox, &nb, &alpha).unwrap();
        for x in SeededSampler::new(seed).sample_uniform(&bbox, 2000).unwrap() {
            let g = spec_net.forward(&x).unwrap();
            for r in 0..g.len() {
                prop_assert!(lo.eval_row(r, &x) <= g[r] + 1e-9);
                prop_assert!(up.eval_row(r, &x) >= g[r] - 1e-9);
            }
        }
    }

    #[test]
    fn region_polytope_is_sound_and_under_preimage(case in 0usize..6, fr in fractions(3), seed in any::<u64>()) {
        let (net, spec, region) = &fixture_cases()[case];
        let bbox = sub_box(region, &fr[..region.dim()]);
        let problem = PreimageProblem::new(net.clone(), spec.clone()).unwrap();
        let ra = approximate_region(&bbox, &problem, &small_approx(), seed).unwrap();
        prop_assert!(ra.est_polytope_frac <= ra.est_preimage_frac);
        prop_assert_eq!(ra.polytope.bbox(), &bbox);
        for x in SeededSampler::new(seed ^ 1).sample_uniform(&bbox, 5000).unwrap() {
            if ra.polytope.contains(&x) {
                prop_assert!(spec.contains(&net.forward(&x).unwrap()));
            }
        }
    }

    #[test]
    fn appended_rows_match_spec(x in prop::collection::vec(-2.0..2.0f64, 2), k in 0usize..4) {
        let net = fixtures::f2();
        let spec = &fixtures::f2_specs()[k];
        let g = net.append_spec_rows(spec).unwrap().forward(&x).unwrap();
        let y = net.forward(&x).unwrap();
        for (r, c) in spec.constraints().iter().enumerate() {
            let want: f64 = c.c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() + c.d;
            prop_assert!((g[r] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn sampler_is_reproducible(seed in any::<u64>(), skip in 0u64..50) {
        let mut a = SeededSampler::new(seed);
        for _ in 0..skip {
            a.next_f64();
        }
        let mut b = SeededSampler::resume(seed, skip);
        for _ in 0..20 {
            prop_assert_eq!(a.next_f64().to_bits(), b.next_f64().to_bits());
        }
    }
}

#[test]
fn stable_region_bounds_are_exact() {
    // a region where every F1 neuron is stable: x1 - x2 > 0 and x1 + x2 - 1 < 0
    let net = fixtures::f1().append_spec_rows(&fixtures::f1_spec()).unwrap();
    let bbox = Hyperrectangle::new(vec![0.3, 0.0], vec![0.45, 0.2]).unwrap();
    let nb = intermediate_bounds(&net, &bbox, AlphaInit::Adaptive).unwrap();
    assert!(nb.unstable().is_empty());
    let alpha = AlphaAssignment::init(&nb, 1, AlphaInit::Adaptive);
    let lo = backward_lower_bounds(&net, &bbox, &nb, &alpha).unwrap();
    let mut worst: f64 = 0.0;
    for x in SeededSampler::new(3).sample_uniform(&bbox, 10_000).unwrap() {
        worst = worst.max(net.forward(&x).unwrap()[0] - lo.eval_row(0, &x));
    }
    assert!(worst <= 1e-9);
}

#[test]
fn sampler_mean_of_interval() {
    let bbox = Hyperrectangle::new(vec![0.0], vec![2.0]).unwrap();
    let xs = SeededSampler::new(11).sample_uniform(&bbox, 100_000).unwrap();
    let mean = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
    assert!((mean - 1.0).abs() <= 0.01);
}

#[test]
fn half_box_estimate() {
    let p = Polytope::new(
        Hyperrectangle::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
        vec![Halfspace::new(vec![1.0, 0.0], 0.0)],
    )
    .unwrap();
    let xs = SeededSampler::new(5).sample_uniform(p.bbox(), 100_000).unwrap();
    assert!((p.estimate_volume_fraction(&xs).unwrap() - 0.5).abs() <= 0.01);
}
