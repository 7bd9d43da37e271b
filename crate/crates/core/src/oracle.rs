//! Exact restricted preimage of small networks by activation-pattern enumeration.
//!
//! Fixing every ReLU to active or inactive turns the network into an affine
//! map; the inputs realizing a pattern form a polytope cut out by the sign
//! conditions on each pre-activation. Neurons are visited in order and only
//! split when their sign actually changes over the current cell, so the
//! search touches the feasible linear regions rather than all `2^n` patterns.
//! Sign boundaries are closed on both sides; overlaps have measure zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{DisjointPolytopeUnion, Halfspace, Hyperrectangle, Polytope};
use crate::model::{Network, OutputSpec};

/// Default cap on the number of hidden neurons.
pub const DEFAULT_NEURON_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    pub max_hidden_neurons: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            max_hidden_neurons: DEFAULT_NEURON_CAP,
        }
    }
}

/// Active/inactive state of every hidden neuron, in (layer, index) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern(pub Vec<bool>);

/// One linear region intersected with the output set.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternRegion {
    pub pattern: ActivationPattern,
    pub polytope: Polytope,
}

pub fn exact_preimage(
    net: &Network,
    region: &Hyperrectangle,
    spec: &OutputSpec,
    cfg: &OracleConfig,
) -> Result<DisjointPolytopeUnion> {
    exact_preimage_constrained(net, region, spec, &[], cfg)
}

/// Like [`exact_preimage`], with extra input half-spaces conjoined.
pub fn exact_preimage_constrained(
    net: &Network,
    region: &Hyperrectangle,
    spec: &OutputSpec,
    input_constraints: &[Halfspace],
    cfg: &OracleConfig,
) -> Result<DisjointPolytopeUnion> {
    let regions = pattern_regions(net, region, spec, input_constraints, cfg)?;
    Ok(DisjointPolytopeUnion::new(
        regions.into_iter().map(|r| r.polytope).collect(),
    ))
}

pub fn exact_preimage_volume(
    net: &Network,
    region: &Hyperrectangle,
    spec: &OutputSpec,
    cfg: &OracleConfig,
) -> Result<f64> {
    exact_preimage(net, region, spec, cfg)?.exact_volume()
}

pub fn exact_preimage_volume_constrained(
    net: &Network,
    region: &Hyperrectangle,
    spec: &OutputSpec,
    input_constraints: &[Halfspace],
    cfg: &OracleConfig,
) -> Result<f64> {
    exact_preimage_constrained(net, region, spec, input_constraints, cfg)?.exact_volume()
}

/// All feasible activation patterns with their preimage pieces, in pattern order.
pub fn pattern_regions(
    net: &Network,
    region: &Hyperrectangle,
    spec: &OutputSpec,
    input_constraints: &[Halfspace],
    cfg: &OracleConfig,
) -> Result<Vec<PatternRegion>> {
    if region.dim() != net.input_dim() {
        return Err(Error::input("region dimension does not match network input"));
    }
    let n = net.hidden_neurons();
    if n > cfg.max_hidden_neurons {
        return Err(Error::Capability(format!(
            "exact preimage supports at most {} hidden neurons, network has {n}",
            cfg.max_hidden_neurons
        )));
    }
    let spec_net = net.append_spec_rows(spec)?;
    let cell = Polytope::new(region.clone(), input_constraints.to_vec())?;
    if !cell.has_interior()? {
        return Ok(Vec::new());
    }
    let d = net.input_dim();
    let search = Search { net: &spec_net };
    let start = Cursor {
        layer: 0,
        neuron: 0,
        // post-activations of the previous layer as affine functions of x
        post_a: DMatrix::identity(d, d),
        post_b: DVector::zeros(d),
        pre: None,
        pattern: Vec::with_capacity(n),
    };
    search.descend(cell, start)
}

struct Search<'a> {
    net: &'a Network,
}

#[derive(Clone)]
struct Cursor {
    layer: usize,
    neuron: usize,
    post_a: DMatrix<f64>,
    post_b: DVector<f64>,
    /// Pre-activations of the current layer, with ReLU already applied to
    /// the neurons before `neuron`.
    pre: Option<(DMatrix<f64>, DVector<f64>)>,
    pattern: Vec<bool>,
}

impl Search<'_> {
    fn descend(&self, cell: Polytope, mut cur: Cursor) -> Result<Vec<PatternRegion>> {
        let layers = self.net.layers();
        let hidden = self.net.hidden_layers();
        loop {
            if cur.layer == hidden {
                return self.leaf(cell, &cur);
            }
            let (pre_a, pre_b) = cur.pre.get_or_insert_with(|| {
                let l = &layers[cur.layer];
                (&l.weights * &cur.post_a, &l.weights * &cur.post_b + &l.bias)
            });
            let j = cur.neuron;
            let h = Halfspace::new(pre_a.row(j).iter().copied().collect(), pre_b[j]);
            let verts = cell.enumerate_vertices()?;
            let (mut pos, mut neg) = (false, false);
            for v in &verts {
                let val = h.eval(v);
                pos |= val > 0.0;
                neg |= val < 0.0;
            }
            match (pos, neg) {
                (true, true) => return self.branch(cell, cur, h),
                (false, _) => {
                    cur.pattern.push(false);
                    set_inactive(&mut cur, j);
                }
                (true, false) => cur.pattern.push(true),
            }
            let rows = layers[cur.layer].rows();
            advance(&mut cur, rows);
        }
    }

    fn branch(&self, cell: Polytope, cur: Cursor, h: Halfspace) -> Result<Vec<PatternRegion>> {
        let layers = self.net.layers();
        let rows = layers[cur.layer].rows();
        let j = cur.neuron;
        let neg_h = Halfspace::new(h.a.iter().map(|v| -v).collect(), -h.b);
        let active = cell.with_halfspaces(&[h])?;
        let inactive = cell.with_halfspaces(&[neg_h])?;

        let mut cur_on = cur.clone();
        cur_on.pattern.push(true);
        advance(&mut cur_on, rows);
        let mut cur_off = cur;
        cur_off.pattern.push(false);
        set_inactive(&mut cur_off, j);
        advance(&mut cur_off, rows);

        let (on, off) = rayon::join(
            || self.descend_if_open(active, cur_on),
            || self.descend_if_open(inactive, cur_off),
        );
        // inactive first: pattern order puts `false` before `true`
        let mut out = off?;
        out.extend(on?);
        Ok(out)
    }

    fn descend_if_open(&self, cell: Polytope, cur: Cursor) -> Result<Vec<PatternRegion>> {
        if cell.has_interior()? {
            self.descend(cell, cur)
        } else {
            Ok(Vec::new())
        }
    }

    fn leaf(&self, cell: Polytope, cur: &Cursor) -> Result<Vec<PatternRegion>> {
        let out = self.net.layers().last().expect("output layer");
        let ga = &out.weights * &cur.post_a;
        let gb = &out.weights * &cur.post_b + &out.bias;
        let spec_rows: Vec<Halfspace> = (0..ga.nrows())
            .map(|k| Halfspace::new(ga.row(k).iter().copied().collect(), gb[k]))
            .collect();
        let piece = cell.with_halfspaces(&spec_rows)?;
        if piece.has_interior()? {
            Ok(vec![PatternRegion {
                pattern: ActivationPattern(cur.pattern.clone()),
                polytope: piece,
            }])
        } else {
            Ok(Vec::new())
        }
    }
}

fn set_inactive(cur: &mut Cursor, j: usize) {
    if let Some((a, b)) = cur.pre.as_mut() {
        a.row_mut(j).fill(0.0);
        b[j] = 0.0;
    }
}

/// Moves to the next neuron; at the end of a layer the (rectified)
/// pre-activations become the next layer's inputs.
fn advance(cur: &mut Cursor, rows: usize) {
    cur.neuron += 1;
    if cur.neuron == rows {
        let (a, b) = cur.pre.take().expect("pre-activations computed");
        cur.post_a = a;
        cur.post_b = b;
        cur.layer += 1;
        cur.neuron = 0;
    }
}
