//! Sound verification of quantitative properties.
//!
//! A property `(I, O, p)` holds when at least a fraction `p` of the input set
//! `I` maps into the output set `O`. Refinement grows an under-approximation
//! of the preimage; once its sampled volume reaches `p * vol(I)`, its exact
//! volume is computed and, if large enough, the property is certified.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::approximator::PreimageProblem;
use crate::error::{Error, Result};
use crate::geometry::{Hyperrectangle, Polytope};
use crate::model::{Network, OutputSpec};
use crate::refinement::{RefineConfig, RefinementState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PropertyFile", into = "PropertyFile")]
pub struct QuantitativeProperty {
    input_set: Polytope,
    output_set: OutputSpec,
    proportion: f64,
}

#[derive(Serialize, Deserialize)]
struct PropertyFile {
    input_set: Polytope,
    output_spec: OutputSpec,
    p: f64,
}

impl TryFrom<PropertyFile> for QuantitativeProperty {
    type Error = Error;

    fn try_from(f: PropertyFile) -> Result<Self> {
        QuantitativeProperty::new(f.input_set, f.output_spec, f.p)
    }
}

impl From<QuantitativeProperty> for PropertyFile {
    fn from(q: QuantitativeProperty) -> Self {
        PropertyFile {
            input_set: q.input_set,
            output_spec: q.output_set,
            p: q.proportion,
        }
    }
}

impl QuantitativeProperty {
    pub fn new(input_set: Polytope, output_set: OutputSpec, proportion: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&proportion) {
            return Err(Error::input(format!(
                "proportion must lie in [0, 1], got {proportion}"
            )));
        }
        // re-validates half-space dimensions for deserialized input
        let input_set = Polytope::new(input_set.bbox().clone(), input_set.halfspaces().to_vec())?;
        Ok(QuantitativeProperty {
            input_set,
            output_set,
            proportion,
        })
    }

    pub fn input_set(&self) -> &Polytope {
        &self.input_set
    }

    pub fn output_set(&self) -> &OutputSpec {
        &self.output_set
    }

    pub fn proportion(&self) -> f64 {
        self.proportion
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Failure probability of the sampled estimate used to trigger exact checks.
pub const TRIGGER_DELTA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    True,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    /// Exact volume of the union divided by `vol(I)` at the last
    /// certification attempt; 0 if none was made.
    pub certified_fraction: f64,
    pub iterations_used: usize,
    pub exact_volume_calls: usize,
}

/// Runs refinement for at most `max_iterations` steps, certifying exactly
/// whenever the sampled union volume comes within sampling error of
/// `p * vol(I)`.
pub fn verify(
    net: &Network,
    prop: &QuantitativeProperty,
    max_iterations: usize,
    cfg: &RefineConfig,
) -> Result<Verdict> {
    let input = prop.input_set();
    let vol_i = input.exact_volume()?;
    if !(vol_i > 0.0) {
        return Err(Error::input("input set is empty or has zero volume"));
    }
    let root: Hyperrectangle = if input.halfspaces().is_empty() {
        input.bbox().clone()
    } else {
        input.outer_box()?
    };
    let problem = PreimageProblem::new(net.clone(), prop.output_set().clone())?
        .with_input_constraints(input.halfspaces().to_vec())?;
    let mut state = RefinementState::init(problem, root, cfg.clone())?;

    let p = prop.proportion();
    let threshold = p * vol_i;
    // Hoeffding slack so sampling noise alone cannot suppress the exact check
    let n = cfg.approx.loss.n_samples as f64;
    let slack = ((2.0 / TRIGGER_DELTA).ln() / (2.0 * n)).sqrt() * state.root().volume();
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut calls = 0;
    let mut certified_fraction = 0.0;
    loop {
        if state.est_dup_volume() + slack >= threshold {
            calls += 1;
            let mut exact = 0.0;
            for leaf in state.leaves() {
                exact += match cache.get(&leaf.id) {
                    Some(&v) => v,
                    None => {
                        let v = leaf.approx.polytope.exact_volume()?;
                        cache.insert(leaf.id, v);
                        v
                    }
                };
            }
            certified_fraction = exact / vol_i;
            if exact >= threshold {
                return Ok(Verdict {
                    outcome: Outcome::True,
                    certified_fraction,
                    iterations_used: state.iterations(),
                    exact_volume_calls: calls,
                });
            }
        }
        if state.iterations() >= max_iterations {
            return Ok(Verdict {
                outcome: Outcome::Unknown,
                certified_fraction,
                iterations_used: state.iterations(),
                exact_volume_calls: calls,
            });
        }
        state.refine_step()?;
        let live: Vec<u64> = state.leaves().iter().map(|l| l.id).collect();
        cache.retain(|id, _| live.contains(id));
    }
}
