//! Single-region polytope under-approximation with relaxation-slope tuning.
//!
//! For a box `C` and output constraints `g_i(x) = c_i . f(x) + d_i >= 0`, the
//! linear lower bounds `a_i . x + b_i <= g_i(x)` (valid on `C`) define the
//! polytope `{x in C : a_i . x + b_i >= 0 for all i}`, which lies inside the
//! restricted preimage. The slopes of unstable neurons are tuned by projected
//! gradient steps on a smooth surrogate of the polytope's sampled volume.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{Halfspace, Hyperrectangle, Polytope, SeededSampler};
use crate::lirpa::{
    backward_lower_bounds, intermediate_bounds, intermediate_bounds_best_of, lower_row_traced, row_alpha_gradient,
    AlphaAssignment, AlphaInit, NeuronBounds,
};
use crate::model::{Network, OutputSpec};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Uniform slopes tried as optimizer starting points and as alternative
/// relaxations when tightening intermediate bounds.
pub const ALPHA_GRID: [f64; 3] = [0.0, 0.5, 1.0];

/// Sampling and optimizer settings for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub n_samples: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Multiplies the soft-min before the sigmoid.
    pub sigmoid_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            n_samples: 10_000,
            learning_rate: 0.1,
            steps: 20,
            sigmoid_scale: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.steps == 0 {
            return Err(Error::input("sample count and step count must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.sigmoid_scale > 0.0) {
            return Err(Error::input("learning rate and sigmoid scale must be positive"));
        }
        Ok(())
    }
}

/// Everything [`approximate_region`] needs besides the region itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxConfig {
    pub loss: LossConfig,
    pub alpha_init: AlphaInit,
    /// Run slope optimization; otherwise the initial slopes are kept.
    pub optimize_alpha: bool,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        ApproxConfig {
            loss: LossConfig::default(),
            alpha_init: AlphaInit::Adaptive,
            optimize_alpha: true,
        }
    }
}

/// A network, an output set, and optional extra input half-spaces
/// (used when the input set is a general polytope rather than a box).
#[derive(Debug, Clone)]
pub struct PreimageProblem {
    net: Network,
    spec: OutputSpec,
    spec_net: Network,
    input_constraints: Vec<Halfspace>,
}

impl PreimageProblem {
    pub fn new(net: Network, spec: OutputSpec) -> Result<Self> {
        let spec_net = net.append_spec_rows(&spec)?;
        Ok(PreimageProblem {
            net,
            spec,
            spec_net,
            input_constraints: Vec::new(),
        })
    }

    pub fn with_input_constraints(mut self, constraints: Vec<Halfspace>) -> Result<Self> {
        let d = self.net.input_dim();
        if constraints.iter().any(|h| h.a.len() != d) {
            return Err(Error::input("input constraint dimension does not match network"));
        }
        self.input_constraints = constraints;
        Ok(self)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn spec(&self) -> &OutputSpec {
        &self.spec
    }

    /// The network with the spec rows folded into its output layer.
    pub fn spec_network(&self) -> &Network {
        &self.spec_net
    }

    pub fn input_constraints(&self) -> &[Halfspace] {
        &self.input_constraints
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `x` satisfies the input constraints and `f(x)` lies in the output set.
    pub fn in_preimage(&self, x: &[f64]) -> bool {
        self.input_constraints.iter().all(|h| h.eval(x) >= 0.0)
            && self.spec.contains(&self.net.forward_unchecked(x))
    }

    pub fn preimage_fraction(&self, samples: &[Vec<f64>]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::input("cannot estimate a volume fraction from zero samples"));
        }
        let hits = samples.iter().filter(|x| self.in_preimage(x)).count();
        Ok(hits as f64 / samples.len() as f64)
    }
}

/// The polytope chosen for one region together with its sampled statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionApproximation {
    pub region: Hyperrectangle,
    pub polytope: Polytope,
    pub alpha: AlphaAssignment,
    pub est_polytope_frac: f64,
    pub est_preimage_frac: f64,
    pub sample_seed: u64,
}

/// Polytope `{x in region : lower bound rows >= 0}`.
pub fn build_polytope(
    region: &Hyperrectangle,
    spec_net: &Network,
    nb: &NeuronBounds,
    alpha: &AlphaAssignment,
) -> Result<Polytope> {
    let bound = backward_lower_bounds(spec_net, region, nb, alpha)?;
    let halfspaces = (0..bound.rows())
        .map(|i| Halfspace::new(bound.row_coeffs(i), bound.b[i]))
        .collect();
    Polytope::new(region.clone(), halfspaces)
}

/// Smooth volume surrogate and its gradient with respect to every alpha.
///
/// `loss = -(1/N) sum_j sigmoid(s * softmin_i(g_i(x_j)))` where the soft-min is
/// `-LSE(-g_1, ..., -g_K)` and `g_i` are the lower-bound rows.
/// The gradient is laid out like [`AlphaAssignment::flatten`].
pub fn surrogate_loss(
    alpha: &AlphaAssignment,
    samples: &[Vec<f64>],
    spec_net: &Network,
    nb: &NeuronBounds,
    sigmoid_scale: f64,
) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::input("surrogate loss needs at least one sample"));
    }
    let k_rows = spec_net.output_dim();
    if alpha.rows().len() != k_rows || alpha.keys() != nb.unstable().as_slice() {
        return Err(Error::input("alpha does not match network and neuron bounds"));
    }
    let key_index: HashMap<_, _> = alpha
        .keys()
        .iter()
        .enumerate()
        .map(|(i, k)| (*k, i))
        .collect();
    let traces: Vec<_> = (0..k_rows)
        .map(|r| lower_row_traced(spec_net, nb, &key_index, alpha.row(r), r))
        .collect();

    let n = samples.len() as f64;
    let d = spec_net.input_dim();
    let mut loss = 0.0;
    let mut a_bar = vec![vec![0.0; d]; k_rows];
    let mut b_bar = vec![0.0; k_rows];
    let mut neg_g = vec![0.0; k_rows];
    for x in samples {
        for (r, t) in traces.iter().enumerate() {
            let g: f64 = t.b + t.a.iter().zip(x).map(|(a, xi)| a * xi).sum::<f64>();
            neg_g[r] = -g;
        }
        let m = neg_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = neg_g.iter().map(|v| (v - m).exp()).sum();
        let soft_min = -(m + sum.ln());
        let sig = sigmoid(sigmoid_scale * soft_min);
        loss -= sig / n;
        let outer = -sig * (1.0 - sig) * sigmoid_scale / n;
        for r in 0..k_rows {
            let w = outer * (neg_g[r] - m).exp() / sum;
            b_bar[r] += w;
            for (ab, xi) in a_bar[r].iter_mut().zip(x) {
                *ab += w * xi;
            }
        }
    }

    let n_keys = alpha.keys().len();
    let mut grad = vec![0.0; alpha.len()];
    for (r, t) in traces.iter().enumerate() {
        row_alpha_gradient(
            spec_net,
            t,
            &a_bar[r],
            b_bar[r],
            &mut grad[r * n_keys..(r + 1) * n_keys],
        );
    }
    Ok((loss, grad))
}

fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Projected Adam on the surrogate loss; every step is clamped back into
/// `[0, 1]`. Starts from the best of `alpha0` and the uniform slopes in
/// [`ALPHA_GRID`] by sampled polytope fraction. Returns the iterate with the highest sampled polytope fraction;
/// ties keep the earlier one, so the result is never worse than `alpha0` on
/// `samples`.
pub fn optimize_alpha(
    region: &Hyperrectangle,
    spec_net: &Network,
    nb: &NeuronBounds,
    alpha0: &AlphaAssignment,
    cfg: &LossConfig,
    samples: &[Vec<f64>],
    input_constraints: &[Halfspace],
) -> Result<AlphaAssignment> {
    cfg.validate()?;
    if alpha0.is_empty() {
        return Ok(alpha0.clone());
    }
    let fraction = |alpha: &AlphaAssignment| -> Result<f64> {
        build_polytope(region, spec_net, nb, alpha)?
            .with_halfspaces(input_constraints)?
            .estimate_volume_fraction(samples)
    };
    let mut best = alpha0.clone();
    let mut best_frac = fraction(alpha0)?;
    for &a in &ALPHA_GRID {
        let candidate = AlphaAssignment::init(nb, spec_net.output_dim(), AlphaInit::Fixed(a));
        let frac = fraction(&candidate)?;
        if frac > best_frac {
            best_frac = frac;
            best = candidate;
        }
    }
    let mut current = best.clone();
    let mut m = vec![0.0; alpha0.len()];
    let mut v = vec![0.0; alpha0.len()];
    for t in 1..=cfg.steps {
        let (_, grad) = surrogate_loss(&current, samples, spec_net, nb, cfg.sigmoid_scale)?;
        let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
        let stepped: Vec<f64> = current
            .flatten()
            .iter()
            .zip(&grad)
            .zip(m.iter_mut().zip(v.iter_mut()))
            .map(|((a, g), (m, v))| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                a - cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS)
            })
            .collect();
        current.set_flat_clamped(&stepped);
        let frac = fraction(&current)?;
        if frac > best_frac {
            best_frac = frac;
            best = current.clone();
        }
    }
    Ok(best)
}

/// Bounds, optimizes and samples one region. Deterministic in `sample_seed`.
/// With optimization on, intermediate bounds keep the tightest result over
/// the initial slopes and [`ALPHA_GRID`].
pub fn approximate_region(
    region: &Hyperrectangle,
    problem: &PreimageProblem,
    cfg: &ApproxConfig,
    sample_seed: u64,
) -> Result<RegionApproximation> {
    cfg.loss.validate()?;
    let spec_net = problem.spec_network();
    let nb = if cfg.optimize_alpha {
        let mut inits = vec![cfg.alpha_init];
        inits.extend(ALPHA_GRID.iter().map(|&a| AlphaInit::Fixed(a)));
        intermediate_bounds_best_of(spec_net, region, &inits)?
    } else {
        intermediate_bounds(spec_net, region, cfg.alpha_init)?
    };
    let samples = SeededSampler::new(sample_seed).sample_uniform(region, cfg.loss.n_samples)?;
    let alpha0 = AlphaAssignment::init(&nb, spec_net.output_dim(), cfg.alpha_init);
    let alpha = if cfg.optimize_alpha {
        optimize_alpha(
            region,
            spec_net,
            &nb,
            &alpha0,
            &cfg.loss,
            &samples,
            problem.input_constraints(),
        )?
    } else {
        alpha0
    };
    let polytope = build_polytope(region, spec_net, &nb, &alpha)?
        .with_halfspaces(problem.input_constraints())?;
    let est_polytope_frac = polytope.estimate_volume_fraction(&samples)?;
    let est_preimage_frac = problem.preimage_fraction(&samples)?;
    Ok(RegionApproximation {
        region: region.clone(),
        polytope,
        alpha,
        est_polytope_frac,
        est_preimage_frac,
        sample_seed,
    })
}
