//! Backward linear bound propagation (CROWN style).
//!
//! Every ReLU `a = max(h, 0)` with pre-activation bounds `l <= h <= u` is
//! sandwiched between two lines. Stable neurons are exact; an unstable
//! neuron (`l < 0 < u`) gets the lower line `alpha * h` for any
//! `alpha in [0, 1]` and the chord `u (h - l) / (u - l)` as upper line.
//! Substituting these lines backwards from an output row down to the input
//! yields an affine function of `x` that bounds the row on the whole box.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::Hyperrectangle;
use crate::model::Network;

/// A line `slope * h + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
}

impl Line {
    pub const ZERO: Line = Line {
        slope: 0.0,
        intercept: 0.0,
    };
    pub const IDENTITY: Line = Line {
        slope: 1.0,
        intercept: 0.0,
    };

    pub fn eval(&self, h: f64) -> f64 {
        self.slope * h + self.intercept
    }
}

/// Lower and upper linear bounds of `ReLU` on `[l, u]`.
pub fn relax_relu(l: f64, u: f64, alpha: f64) -> Result<(Line, Line)> {
    if !(l <= u) {
        return Err(Error::input(format!("relaxation needs l <= u, got [{l}, {u}]")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(relax_unchecked(l, u, alpha))
}

fn relax_unchecked(l: f64, u: f64, alpha: f64) -> (Line, Line) {
    if u <= 0.0 {
        (Line::ZERO, Line::ZERO)
    } else if l >= 0.0 {
        (Line::IDENTITY, Line::IDENTITY)
    } else {
        let slope = u / (u - l);
        (
            Line {
                slope: alpha,
                intercept: 0.0,
            },
            Line {
                slope,
                intercept: -slope * l,
            },
        )
    }
}

/// Affine map `x -> A x + b`, one row per bounded quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBound {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineBound {
    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn eval_row(&self, row: usize, x: &[f64]) -> f64 {
        let mut v = self.b[row];
        for (j, xj) in x.iter().enumerate() {
            v += self.a[(row, j)] * xj;
        }
        v
    }

    pub fn row_coeffs(&self, row: usize) -> Vec<f64> {
        self.a.row(row).iter().copied().collect()
    }

    /// Per-row minimum and maximum over the box, by sign splitting.
    pub fn concretize(&self, bbox: &Hyperrectangle) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.a.ncols() != bbox.dim() {
            return Err(Error::input(format!(
                "bound has {} columns, box has dimension {}",
                self.a.ncols(),
                bbox.dim()
            )));
        }
        Ok(concretize_rows(&self.a, &self.b, bbox))
    }
}

fn concretize_rows(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    bbox: &Hyperrectangle,
) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = (bbox.lower(), bbox.upper());
    let mut min = Vec::with_capacity(a.nrows());
    let mut max = Vec::with_capacity(a.nrows());
    for r in 0..a.nrows() {
        let (mut mn, mut mx) = (b[r], b[r]);
        for j in 0..a.ncols() {
            let c = a[(r, j)];
            if c > 0.0 {
                mn += c * lo[j];
                mx += c * hi[j];
            } else {
                mn += c * hi[j];
                mx += c * lo[j];
            }
        }
        min.push(mn);
        max.push(mx);
    }
    (min, max)
}

/// A hidden neuron: layer index (0-based among hidden layers) and position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

/// Concrete pre-activation bounds of every hidden neuron over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronBounds {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl NeuronBounds {
    pub fn layers(&self) -> usize {
        self.lower.len()
    }

    pub fn is_unstable(&self, id: NeuronId) -> bool {
        self.lower[id.layer][id.index] < 0.0 && self.upper[id.layer][id.index] > 0.0
    }

    /// Unstable neurons in (layer, index) order.
    pub fn unstable(&self) -> Vec<NeuronId> {
        let mut out = Vec::new();
        for (layer, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            for index in 0..lo.len() {
                if lo[index] < 0.0 && hi[index] > 0.0 {
                    out.push(NeuronId { layer, index });
                }
            }
        }
        out
    }

    /// `true` when every interval lies inside the matching interval of `outer`,
    /// up to `tol`.
    pub fn within(&self, outer: &NeuronBounds, tol: f64) -> bool {
        self.lower.iter().zip(&outer.lower).all(|(a, b)| {
            a.iter().zip(b).all(|(x, y)| *x >= *y - tol)
        }) && self.upper.iter().zip(&outer.upper).all(|(a, b)| {
            a.iter().zip(b).all(|(x, y)| *x <= *y + tol)
        })
    }
}

/// How relaxation slopes are initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaInit {
    /// `alpha = 1` when `u >= |l|`, else `0`.
    Adaptive,
    /// The same constant for every unstable neuron.
    Fixed(f64),
}

impl AlphaInit {
    pub fn value(&self, l: f64, u: f64) -> f64 {
        match *self {
            AlphaInit::Adaptive => {
                if u >= -l {
                    1.0
                } else {
                    0.0
                }
            }
            AlphaInit::Fixed(a) => a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaInit::Fixed(a) if !(0.0..=1.0).contains(&a) => {
                Err(Error::input(format!("fixed alpha {a} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Lower-line slopes for every unstable neuron, one vector per bounded row.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaAssignment {
    keys: Vec<NeuronId>,
    rows: Vec<Vec<f64>>,
}

impl AlphaAssignment {
    /// Initializes `n_rows` copies over the unstable set of `nb`.
    pub fn init(nb: &NeuronBounds, n_rows: usize, init: AlphaInit) -> Self {
        let keys = nb.unstable();
        let row: Vec<f64> = keys
            .iter()
            .map(|id| init.value(nb.lower[id.layer][id.index], nb.upper[id.layer][id.index]))
            .collect();
        AlphaAssignment {
            keys,
            rows: vec![row; n_rows],
        }
    }

    pub fn new(keys: Vec<NeuronId>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (r, row) in rows.iter().enumerate() {
            if row.len() != keys.len() {
                return Err(Error::input(format!(
                    "alpha row {r} has {} entries for {} neurons",
                    row.len(),
                    keys.len()
                )));
            }
            if let Some(a) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(Error::input(format!("alpha {a} outside [0, 1]")));
            }
        }
        Ok(AlphaAssignment { keys, rows })
    }

    pub fn keys(&self) -> &[NeuronId] {
        &self.keys
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.rows[r]
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Total number of free parameters.
    pub fn len(&self) -> usize {
        self.keys.len() * self.rows.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    /// Replaces all values from a flat vector, clamping into `[0, 1]`.
    pub fn set_flat_clamped(&mut self, flat: &[f64]) {
        let n = self.keys.len();
        for (r, row) in self.rows.iter_mut().enumerate() {
            for (k, a) in row.iter_mut().enumerate() {
                *a = flat[r * n + k].clamp(0.0, 1.0);
            }
        }
    }

    fn check(&self, nb: &NeuronBounds, n_rows: usize) -> Result<()> {
        if self.keys != nb.unstable() {
            return Err(Error::input(
                "alpha keys do not match the unstable neurons of the given bounds",
            ));
        }
        if self.rows.len() != n_rows {
            return Err(Error::input(format!(
                "alpha has {} rows, expected {n_rows}",
                self.rows.len()
            )));
        }
        Ok(())
    }

    fn index(&self) -> HashMap<NeuronId, usize> {
        self.keys.iter().enumerate().map(|(i, k)| (*k, i)).collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

/// Backward substitution for all rows of layer `target`'s pre-activation,
/// through hidden layers `< target`. `alpha(row, id)` gives lower-line slopes.
fn backward_matrix(
    net: &Network,
    target: usize,
    nb: &NeuronBounds,
    side: Side,
    alpha: impl Fn(usize, NeuronId) -> f64,
) -> AffineBound {
    let layers = net.layers();
    let mut lam = layers[target].weights.clone();
    let mut c = layers[target].bias.clone();
    for k in (0..target).rev() {
        let (lo, hi) = (&nb.lower[k], &nb.upper[k]);
        for r in 0..lam.nrows() {
            for j in 0..lam.ncols() {
                let coef = lam[(r, j)];
                if coef == 0.0 {
                    continue;
                }
                let id = NeuronId { layer: k, index: j };
                let a = if lo[j] < 0.0 && hi[j] > 0.0 {
                    alpha(r, id)
                } else {
                    0.0
                };
                let (low, up) = relax_unchecked(lo[j], hi[j], a);
                let line = match (side, coef >= 0.0) {
                    (Side::Lower, true) | (Side::Upper, false) => low,
                    _ => up,
                };
                c[r] += coef * line.intercept;
                lam[(r, j)] = coef * line.slope;
            }
        }
        c += &lam * &layers[k].bias;
        lam = &lam * &layers[k].weights;
    }
    AffineBound { a: lam, b: c }
}

/// Pre-activation bounds of every hidden layer over `bbox`.
///
/// Each layer is bounded by treating it as the output and propagating back
/// through relaxations built from the layers before it.
pub fn intermediate_bounds(
    net: &Network,
    bbox: &Hyperrectangle,
    init: AlphaInit,
) -> Result<NeuronBounds> {
    intermediate_bounds_best_of(net, bbox, &[init])
}

/// Like [`intermediate_bounds`], but each neuron keeps the tightest bound
/// obtained with any of `inits`. Every candidate is sound, so the
/// intersection is too; later layers are bounded using the tightened earlier
/// layers.
pub fn intermediate_bounds_best_of(
    net: &Network,
    bbox: &Hyperrectangle,
    inits: &[AlphaInit],
) -> Result<NeuronBounds> {
    if bbox.dim() != net.input_dim() {
        return Err(Error::input(format!(
            "box dimension {} does not match network input {}",
            bbox.dim(),
            net.input_dim()
        )));
    }
    if inits.is_empty() {
        return Err(Error::input("at least one alpha initialisation is required"));
    }
    for init in inits {
        init.validate()?;
    }
    let mut nb = NeuronBounds {
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for t in 0..net.hidden_layers() {
        let width = net.layers()[t].rows();
        let mut lo = vec![f64::NEG_INFINITY; width];
        let mut hi = vec![f64::INFINITY; width];
        for &init in inits {
            let slope = {
                let nb = &nb;
                move |_r: usize, id: NeuronId| {
                    init.value(nb.lower[id.layer][id.index], nb.upper[id.layer][id.index])
                }
            };
            let lo_bound = backward_matrix(net, t, &nb, Side::Lower, slope);
            let up_bound = backward_matrix(net, t, &nb, Side::Upper, slope);
            let (l, _) = concretize_rows(&lo_bound.a, &lo_bound.b, bbox);
            let (_, u) = concretize_rows(&up_bound.a, &up_bound.b, bbox);
            for j in 0..width {
                lo[j] = lo[j].max(l[j]);
                hi[j] = hi[j].min(u[j]);
            }
        }
        let lo: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| l.min(*u)).collect();
        nb.lower.push(lo);
        nb.upper.push(hi);
    }
    Ok(nb)
}

fn check_output_args(
    net: &Network,
    bbox: &Hyperrectangle,
    nb: &NeuronBounds,
    alpha: &AlphaAssignment,
) -> Result<()> {
    if bbox.dim() != net.input_dim() {
        return Err(Error::input("box dimension does not match network input"));
    }
    if nb.layers() != net.hidden_layers() {
        return Err(Error::input("neuron bounds do not match network depth"));
    }
    alpha.check(nb, net.output_dim())
}

/// Affine lower bounds `g_i(x) >= a_i . x + b_i`, one row per network output,
/// valid on `bbox`. Row `i` uses slopes `alpha.row(i)`.
pub fn backward_lower_bounds(
    net: &Network,
    bbox: &Hyperrectangle,
    nb: &NeuronBounds,
    alpha: &AlphaAssignment,
) -> Result<AffineBound> {
    check_output_args(net, bbox, nb, alpha)?;
    Ok(output_bound(net, nb, alpha, Side::Lower))
}

/// Upper counterpart of [`backward_lower_bounds`].
pub fn backward_upper_bounds(
    net: &Network,
    bbox: &Hyperrectangle,
    nb: &NeuronBounds,
    alpha: &AlphaAssignment,
) -> Result<AffineBound> {
    check_output_args(net, bbox, nb, alpha)?;
    Ok(output_bound(net, nb, alpha, Side::Upper))
}

fn output_bound(
    net: &Network,
    nb: &NeuronBounds,
    alpha: &AlphaAssignment,
    side: Side,
) -> AffineBound {
    let idx = alpha.index();
    let target = net.layers().len() - 1;
    backward_matrix(net, target, nb, side, |r, id| alpha.rows[r][idx[&id]])
}

/// Forward record of one lower-bound row, kept for reverse-mode gradients.
pub(crate) struct RowTrace {
    /// Coefficients over the post-activation of each hidden layer, before relaxation.
    lambdas: Vec<Vec<f64>>,
    /// For each hidden layer and neuron, the alpha slot used by the lower line, if any.
    alpha_slot: Vec<Vec<Option<usize>>>,
    /// Slope and intercept chosen for each hidden neuron.
    lines: Vec<Vec<Line>>,
    pub a: Vec<f64>,
    pub b: f64,
}

/// Lower bound of output row `row` with a trace for [`row_alpha_gradient`].
/// `alpha_row` is indexed like [`AlphaAssignment::keys`].
pub(crate) fn lower_row_traced(
    net: &Network,
    nb: &NeuronBounds,
    key_index: &HashMap<NeuronId, usize>,
    alpha_row: &[f64],
    row: usize,
) -> RowTrace {
    let layers = net.layers();
    let target = layers.len() - 1;
    let hidden = net.hidden_layers();
    let mut lam: Vec<f64> = layers[target].weights.row(row).iter().copied().collect();
    let mut c = layers[target].bias[row];
    let mut lambdas = vec![Vec::new(); hidden];
    let mut alpha_slot = vec![Vec::new(); hidden];
    let mut lines = vec![Vec::new(); hidden];
    for k in (0..hidden).rev() {
        lambdas[k] = lam.clone();
        let (lo, hi) = (&nb.lower[k], &nb.upper[k]);
        let mut slots = vec![None; lam.len()];
        let mut chosen = vec![Line::ZERO; lam.len()];
        let mut mu = vec![0.0; lam.len()];
        for j in 0..lam.len() {
            let unstable = lo[j] < 0.0 && hi[j] > 0.0;
            let slot = if unstable {
                key_index.get(&NeuronId { layer: k, index: j }).copied()
            } else {
                None
            };
            let a = slot.map_or(0.0, |s| alpha_row[s]);
            let (low, up) = relax_unchecked(lo[j], hi[j], a);
            let line = if lam[j] >= 0.0 {
                if unstable {
                    slots[j] = slot;
                }
                low
            } else {
                up
            };
            chosen[j] = line;
            c += lam[j] * line.intercept;
            mu[j] = lam[j] * line.slope;
        }
        alpha_slot[k] = slots;
        lines[k] = chosen;
        let w = &layers[k].weights;
        let b = &layers[k].bias;
        c += mu.iter().zip(b.iter()).map(|(m, bb)| m * bb).sum::<f64>();
        let mut next = vec![0.0; w.ncols()];
        for (i, m) in mu.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            for (col, nx) in next.iter_mut().enumerate() {
                *nx += m * w[(i, col)];
            }
        }
        lam = next;
    }
    RowTrace {
        lambdas,
        alpha_slot,
        lines,
        a: lam,
        b: c,
    }
}

/// Reverse-mode gradient of `a_bar . a + b_bar * b` with respect to the
/// alpha slots of one row. Sign selections are held fixed.
pub(crate) fn row_alpha_gradient(
    net: &Network,
    trace: &RowTrace,
    a_bar: &[f64],
    b_bar: f64,
    grad: &mut [f64],
) {
    let layers = net.layers();
    let hidden = net.hidden_layers();
    // adjoint of the coefficients over the input of layer k
    let mut lam_bar = a_bar.to_vec();
    for k in 0..hidden {
        let w = &layers[k].weights;
        let b = &layers[k].bias;
        let mut mu_bar = vec![0.0; w.nrows()];
        for (i, mb) in mu_bar.iter_mut().enumerate() {
            let mut s = b_bar * b[i];
            for (col, lb) in lam_bar.iter().enumerate() {
                s += lb * w[(i, col)];
            }
            *mb = s;
        }
        let lam = &trace.lambdas[k];
        let mut next = vec![0.0; mu_bar.len()];
        for j in 0..mu_bar.len() {
            let line = trace.lines[k][j];
            next[j] = mu_bar[j] * line.slope + b_bar * line.intercept;
            if let Some(slot) = trace.alpha_slot[k][j] {
                grad[slot] += mu_bar[j] * lam[j];
            }
        }
        lam_bar = next;
    }
}
