//! Anytime refinement of the input box.
//!
//! Leaves of a bisection tree each carry one polytope. Every step pops the
//! leaf whose sampled gap between preimage and polytope volume is largest,
//! bisects it, and approximates the two halves. The union of leaf polytopes
//! is a sound under-approximation after every step.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximator::{approximate_region, ApproxConfig, PreimageProblem, RegionApproximation};
use crate::error::{Error, Result};
use crate::geometry::{mix_seed, DisjointPolytopeUnion, Hyperrectangle, SeededSampler};

/// How the split dimension is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Approximate both halves for every dimension, keep the best pair.
    /// Equal scores prefer the longer edge, then the lower index.
    Greedy,
    LongestEdge,
    Random,
}

/// How the next leaf to split is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Priority,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub approx: ApproxConfig,
    pub split: SplitStrategy,
    pub selection: SelectionStrategy,
    /// Stop once the sampled union volume reaches this fraction of the
    /// sampled preimage volume.
    pub target_coverage: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            approx: ApproxConfig::default(),
            split: SplitStrategy::Greedy,
            selection: SelectionStrategy::Priority,
            target_coverage: 0.9,
            max_iterations: 500,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_coverage > 0.0 && self.target_coverage <= 1.0) {
            return Err(Error::input(format!(
                "target coverage must lie in (0, 1], got {}",
                self.target_coverage
            )));
        }
        self.approx.loss.validate()?;
        self.approx.alpha_init.validate()
    }
}

/// A leaf of the refinement tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SubregionNode {
    pub approx: RegionApproximation,
    pub priority: f64,
    pub depth: usize,
    /// Insertion counter; breaks priority ties deterministically.
    pub id: u64,
}

/// Seed for the `side` half (0 lower, 1 upper) of a split along `dim`.
pub fn child_seed(parent_seed: u64, dim: usize, side: usize) -> u64 {
    mix_seed(parent_seed, 1 + 2 * dim as u64 + side as u64)
}

/// Result of choosing a split dimension for one node.
#[derive(Debug, Clone)]
pub struct SplitChoice {
    pub dim: usize,
    pub lower: RegionApproximation,
    pub upper: RegionApproximation,
    /// `(dim, sampled lower + upper polytope volume)` for each evaluated dimension.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub coverage_est: f64,
    pub n_polytopes: usize,
    pub elapsed_ms: f64,
}

/// Summary of a refinement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub target_reached: bool,
    /// The sampled preimage volume was zero, so there was nothing to cover.
    pub empty_target: bool,
    pub est_preimage_volume: f64,
    pub target_volume: f64,
    pub n_polytopes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dup_path: Option<String>,
}

pub struct RefinementState {
    problem: PreimageProblem,
    cfg: RefineConfig,
    root: Hyperrectangle,
    leaves: Vec<SubregionNode>,
    iterations: usize,
    next_id: u64,
    est_preimage_volume_root: f64,
    rng: SeededSampler,
    started: Instant,
    history: Vec<IterationRecord>,
}

impl RefinementState {
    /// Approximates the root box and estimates the preimage volume from the
    /// root samples.
    pub fn init(problem: PreimageProblem, root: Hyperrectangle, cfg: RefineConfig) -> Result<Self> {
        cfg.validate()?;
        if root.dim() != problem.input_dim() {
            return Err(Error::input("root box dimension does not match network input"));
        }
        if !(root.volume() > 0.0) {
            return Err(Error::input("root box must have positive volume"));
        }
        let started = Instant::now();
        let root_seed = mix_seed(cfg.seed, 0);
        let approx = approximate_region(&root, &problem, &cfg.approx, root_seed)?;
        let est_preimage_volume_root = approx.est_preimage_frac * root.volume();
        let rng = SeededSampler::new(mix_seed(cfg.seed, u64::MAX));
        let mut state = RefinementState {
            problem,
            cfg,
            root,
            leaves: Vec::new(),
            iterations: 0,
            next_id: 0,
            est_preimage_volume_root,
            rng,
            started,
            history: Vec::new(),
        };
        state.push_leaf(approx, 0);
        state.record();
        Ok(state)
    }

    pub fn problem(&self) -> &PreimageProblem {
        &self.problem
    }

    pub fn config(&self) -> &RefineConfig {
        &self.cfg
    }

    pub fn root(&self) -> &Hyperrectangle {
        &self.root
    }

    pub fn leaves(&self) -> &[SubregionNode] {
        &self.leaves
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn est_preimage_volume(&self) -> f64 {
        self.est_preimage_volume_root
    }

    pub fn target_volume(&self) -> f64 {
        self.cfg.target_coverage * self.est_preimage_volume_root
    }

    /// Sampled volume of the current union.
    pub fn est_dup_volume(&self) -> f64 {
        self.leaves
            .iter()
            .map(|n| n.approx.est_polytope_frac * n.approx.region.volume())
            .sum()
    }

    pub fn coverage_est(&self) -> f64 {
        if self.est_preimage_volume_root > 0.0 {
            self.est_dup_volume() / self.est_preimage_volume_root
        } else {
            0.0
        }
    }

    pub fn target_reached(&self) -> bool {
        self.est_dup_volume() >= self.target_volume()
    }

    /// The current union of leaf polytopes, in leaf order.
    pub fn dup(&self) -> DisjointPolytopeUnion {
        DisjointPolytopeUnion::new(
            self.leaves
                .iter()
                .map(|n| n.approx.polytope.clone())
                .collect(),
        )
    }

    fn priority_of(&self, approx: &RegionApproximation) -> f64 {
        let gap = (approx.est_preimage_frac - approx.est_polytope_frac).max(0.0);
        gap * approx.region.volume() / self.root.volume()
    }

    fn push_leaf(&mut self, approx: RegionApproximation, depth: usize) {
        let priority = self.priority_of(&approx);
        self.leaves.push(SubregionNode {
            approx,
            priority,
            depth,
            id: self.next_id,
        });
        self.next_id += 1;
    }

    fn record(&mut self) {
        self.history.push(IterationRecord {
            iteration: self.iterations,
            coverage_est: self.coverage_est(),
            n_polytopes: self.leaves.len(),
            elapsed_ms: self.started.elapsed().as_secs_f64() * 1e3,
        });
    }

    /// Index of the leaf to split next.
    fn select_leaf(&mut self) -> usize {
        match self.cfg.selection {
            SelectionStrategy::Priority => {
                let mut best = 0;
                for (i, n) in self.leaves.iter().enumerate().skip(1) {
                    let b = &self.leaves[best];
                    if n.priority > b.priority || (n.priority == b.priority && n.id < b.id) {
                        best = i;
                    }
                }
                best
            }
            SelectionStrategy::Random => self.rng.next_index(self.leaves.len()),
        }
    }

    /// Picks the split dimension for `node` and approximates both halves.
    pub fn select_split_feature(&mut self, node: &SubregionNode) -> Result<SplitChoice> {
        let region = &node.approx.region;
        let dims: Vec<usize> = (0..region.dim()).filter(|&i| region.width(i) > 0.0).collect();
        if dims.is_empty() {
            return Err(Error::Refinement("every dimension of the region is degenerate".into()));
        }
        let seed = node.approx.sample_seed;
        let candidates = match self.cfg.split {
            SplitStrategy::Greedy => dims,
            SplitStrategy::LongestEdge => vec![region.longest_edge()],
            SplitStrategy::Random => vec![dims[self.rng.next_index(dims.len())]],
        };
        let halves: Vec<(usize, usize, Hyperrectangle)> = candidates
            .iter()
            .map(|&i| {
                let (lo, hi) = region.bisect(i)?;
                Ok([(i, 0, lo), (i, 1, hi)])
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let problem = &self.problem;
        let approx_cfg = &self.cfg.approx;
        let approxes: Vec<RegionApproximation> = halves
            .par_iter()
            .map(|(i, side, half)| approximate_region(half, problem, approx_cfg, child_seed(seed, *i, *side)))
            .collect::<Result<Vec<_>>>()?;

        let mut scores = Vec::with_capacity(candidates.len());
        let mut best: Option<(usize, f64)> = None;
        for (k, pair) in approxes.chunks(2).enumerate() {
            let score: f64 = pair
                .iter()
                .map(|a| a.est_polytope_frac * a.region.volume())
                .sum();
            scores.push((candidates[k], score));
            // equal scores (often all zero) go to the longer edge, then the lower index
            let better = best.map_or(true, |(b, s)| {
                score > s
                    || (score == s && region.width(candidates[k]) > region.width(candidates[b]))
            });
            if better {
                best = Some((k, score));
            }
        }
        let (k, _) = best.expect("at least one candidate");
        let mut it = approxes.into_iter().skip(2 * k);
        Ok(SplitChoice {
            dim: candidates[k],
            lower: it.next().expect("lower half"),
            upper: it.next().expect("upper half"),
            scores,
        })
    }

    /// One refinement iteration: pop, split, re-approximate, push.
    pub fn refine_step(&mut self) -> Result<()> {
        if self.leaves.is_empty() {
            return Err(Error::Refinement("no leaves to refine".into()));
        }
        let idx = self.select_leaf();
        let node = self.leaves[idx].clone();
        let choice = self.select_split_feature(&node)?;
        self.leaves.remove(idx);
        self.push_leaf(choice.lower, node.depth + 1);
        self.push_leaf(choice.upper, node.depth + 1);
        self.iterations += 1;
        self.record();
        Ok(())
    }

    /// Refines until the sampled target is met or the iteration budget is spent.
    pub fn run(&mut self) -> Result<(DisjointPolytopeUnion, RunReport)> {
        while !self.target_reached() && self.iterations < self.cfg.max_iterations {
            self.refine_step()?;
        }
        Ok((self.dup(), self.report()))
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            iterations: self.iterations,
            history: self.history.clone(),
            target_reached: self.target_reached(),
            empty_target: self.est_preimage_volume_root == 0.0,
            est_preimage_volume: self.est_preimage_volume_root,
            target_volume: self.target_volume(),
            n_polytopes: self.leaves.len(),
            dup_path: None,
        }
    }
}
