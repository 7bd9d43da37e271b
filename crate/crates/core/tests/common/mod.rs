//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod gradient;

use std::collections::HashMap;

use preimage::approximator::PreimageProblem;
use preimage::fixtures;
use preimage::oracle::{exact_preimage_volume, OracleConfig};
use preimage::refinement::{RefineConfig, RefinementState};
use preimage::{Hyperrectangle, Network, OutputSpec};

/// Neuron cap large enough for every fixture network.
pub const ORACLE: OracleConfig = OracleConfig {
    max_hidden_neurons: 32,
};

pub fn oracle_volume(net: &Network, region: &Hyperrectangle, spec: &OutputSpec) -> f64 {
    exact_preimage_volume(net, region, spec, &ORACLE).unwrap()
}

/// Exact union volume with per-leaf caching.
#[derive(Default)]
pub struct ExactVolumes {
    cache: HashMap<u64, f64>,
}

impl ExactVolumes {
    pub fn dup_volume(&mut self, state: &RefinementState) -> f64 {
        let live: Vec<u64> = state.leaves().iter().map(|l| l.id).collect();
        self.cache.retain(|id, _| live.contains(id));
        state
            .leaves()
            .iter()
            .map(|l| {
                *self
                    .cache
                    .entry(l.id)
                    .or_insert_with(|| l.approx.polytope.exact_volume().unwrap())
            })
            .sum()
    }
}

pub struct CoverageRun {
    pub reached: bool,
    pub polytopes: usize,
    pub iterations: usize,
    pub coverage: f64,
    pub seconds: f64,
}

/// Refines until the exact union volume reaches `target * oracle_vol` or
/// `max_iters` steps have been taken.
pub fn run_to_coverage(
    net: &Network,
    spec: &OutputSpec,
    region: &Hyperrectangle,
    cfg: RefineConfig,
    oracle_vol: f64,
    target: f64,
    max_iters: usize,
) -> CoverageRun {
    let start = std::time::Instant::now();
    let problem = PreimageProblem::new(net.clone(), spec.clone()).unwrap();
    let mut state = RefinementState::init(problem, region.clone(), cfg).unwrap();
    let mut vols = ExactVolumes::default();
    loop {
        let v = vols.dup_volume(&state);
        let reached = v >= target * oracle_vol;
        if reached || state.iterations() >= max_iters {
            return CoverageRun {
                reached,
                polytopes: state.leaves().len(),
                iterations: state.iterations(),
                coverage: if oracle_vol > 0.0 { v / oracle_vol } else { 1.0 },
                seconds: start.elapsed().as_secs_f64(),
            };
        }
        state.refine_step().unwrap();
    }
}

pub fn f2_cases() -> Vec<(Network, OutputSpec, Hyperrectangle)> {
    fixtures::f2_specs()
        .into_iter()
        .map(|s| (fixtures::f2(), s, fixtures::f2_region()))
        .collect()
}
