//! Boxes, H-polytopes, disjoint unions of polytopes, sampling and volume.
//!
//! A [`Polytope`] is always the conjunction of a list of half-spaces
//! `a . x + b >= 0` with an axis-aligned box, so it is bounded by
//! construction. Exact volume goes through vertex enumeration followed by a
//! pulling triangulation of the hull, which is practical up to a handful of
//! dimensions (the cap defaults to [`DEFAULT_DIM_CAP`]).

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::dot;

/// Default dimension cap for vertex enumeration and exact volume.
pub const DEFAULT_DIM_CAP: usize = 10;

/// Euclidean distance under which two enumerated vertices are merged.
pub const VERTEX_DEDUP_TOL: f64 = 1e-9;

/// Axis-aligned box `lower[i] <= x[i] <= upper[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxFile")]
pub struct Hyperrectangle {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct BoxFile {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<BoxFile> for Hyperrectangle {
    type Error = Error;

    fn try_from(value: BoxFile) -> Result<Self> {
        Hyperrectangle::new(value.lower, value.upper)
    }
}

impl Hyperrectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::input("box bounds have different lengths"));
        }
        if lower.is_empty() {
            return Err(Error::input("box must have at least one dimension"));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::input(format!("box bound {i} is not finite")));
            }
            if lo > hi {
                return Err(Error::input(format!("box dimension {i} has lower {lo} > upper {hi}")));
            }
        }
        Ok(Hyperrectangle { lower, upper })
    }

    /// The unit cube `[0,1]^d`.
    pub fn unit(d: usize) -> Self {
        Hyperrectangle {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// `true` when `other` lies inside `self`.
    pub fn encloses(&self, other: &Hyperrectangle) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// Interiors are disjoint iff some dimension has non-positive overlap.
    pub fn interiors_disjoint(&self, other: &Hyperrectangle) -> bool {
        (0..self.dim()).any(|i| {
            self.upper[i] <= other.lower[i] || other.upper[i] <= self.lower[i]
        })
    }

    /// Splits at the midpoint of dimension `dim`.
    pub fn bisect(&self, dim: usize) -> Result<(Hyperrectangle, Hyperrectangle)> {
        if dim >= self.dim() {
            return Err(Error::input(format!("split dimension {dim} out of range")));
        }
        if !(self.width(dim) > 0.0) {
            return Err(Error::input(format!("box is degenerate in dimension {dim}")));
        }
        let mid = 0.5 * (self.lower[dim] + self.upper[dim]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[dim] = mid;
        right.lower[dim] = mid;
        Ok((left, right))
    }

    /// Index of the widest dimension; ties go to the lowest index.
    pub fn longest_edge(&self) -> usize {
        let mut best = 0;
        for i in 1..self.dim() {
            if self.width(i) > self.width(best) {
                best = i;
            }
        }
        best
    }
}

/// Half-space `a . x + b >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn new(a: Vec<f64>, b: f64) -> Self {
        Halfspace { a, b }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.a, x) + self.b
    }
}

/// A bounded H-polytope: half-spaces conjoined with a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    #[serde(rename = "box")]
    bbox: Hyperrectangle,
    halfspaces: Vec<Halfspace>,
}

/// Outcome of an exact volume computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeReport {
    pub volume: f64,
    /// Set when the hull was full-dimensional but could not be triangulated;
    /// the volume is then reported as 0.
    pub degenerate: bool,
}

impl Polytope {
    pub fn new(bbox: Hyperrectangle, halfspaces: Vec<Halfspace>) -> Result<Self> {
        let d = bbox.dim();
        for (k, h) in halfspaces.iter().enumerate() {
            if h.a.len() != d {
                return Err(Error::input(format!(
                    "half-space {k} has dimension {}, box has {d}",
                    h.a.len()
                )));
            }
        }
        Ok(Polytope { bbox, halfspaces })
    }

    pub fn from_box(bbox: Hyperrectangle) -> Self {
        Polytope {
            bbox,
            halfspaces: Vec::new(),
        }
    }

    pub fn bbox(&self) -> &Hyperrectangle {
        &self.bbox
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    /// Same set with extra half-spaces conjoined.
    pub fn with_halfspaces(&self, extra: &[Halfspace]) -> Result<Polytope> {
        let mut hs = self.halfspaces.clone();
        hs.extend_from_slice(extra);
        Polytope::new(self.bbox.clone(), hs)
    }

    /// Closed membership: every constraint holds with `>=`, no tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.bbox.contains(x) && self.halfspaces.iter().all(|h| h.eval(x) >= 0.0)
    }

    /// Fraction of `samples` (drawn from the box) that fall inside.
    pub fn estimate_volume_fraction(&self, samples: &[Vec<f64>]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::input("cannot estimate a volume fraction from zero samples"));
        }
        let hits = samples.iter().filter(|x| self.contains(x)).count();
        Ok(hits as f64 / samples.len() as f64)
    }

    /// Extreme points, deduplicated within [`VERTEX_DEDUP_TOL`].
    pub fn enumerate_vertices(&self) -> Result<Vec<Vec<f64>>> {
        self.enumerate_vertices_capped(DEFAULT_DIM_CAP)
    }

    pub fn enumerate_vertices_capped(&self, cap: usize) -> Result<Vec<Vec<f64>>> {
        Ok(VertexSet::enumerate(self, cap)?.points)
    }

    /// Lebesgue volume. Empty or lower-dimensional sets give 0.
    pub fn exact_volume(&self) -> Result<f64> {
        Ok(self.exact_volume_report(DEFAULT_DIM_CAP)?.volume)
    }

    pub fn exact_volume_report(&self, cap: usize) -> Result<VolumeReport> {
        let set = VertexSet::enumerate(self, cap)?;
        Ok(set.volume())
    }

    /// `true` when the set has positive volume.
    pub fn has_interior(&self) -> Result<bool> {
        let set = VertexSet::enumerate(self, DEFAULT_DIM_CAP)?;
        if set.points.len() <= set.dim {
            return Ok(false);
        }
        let all: Vec<usize> = (0..set.points.len()).collect();
        Ok(set.affine_rank(&all) == set.dim)
    }

    /// Tight axis-aligned bounding box, from the vertex representation.
    pub fn outer_box(&self) -> Result<Hyperrectangle> {
        let verts = self.enumerate_vertices()?;
        let Some(first) = verts.first() else {
            return Err(Error::input("outer box of an empty polytope"));
        };
        let mut lower = first.clone();
        let mut upper = first.clone();
        for v in &verts[1..] {
            for i in 0..v.len() {
                lower[i] = lower[i].min(v[i]);
                upper[i] = upper[i].max(v[i]);
            }
        }
        // Clamp into the declared box; vertices may sit a rounding error outside it.
        for i in 0..lower.len() {
            lower[i] = lower[i].max(self.bbox.lower[i]);
            upper[i] = upper[i].min(self.bbox.upper[i]).max(lower[i]);
        }
        Hyperrectangle::new(lower, upper)
    }

    /// For `d == 2`: vertices in counter-clockwise order, for plotting.
    pub fn vertices_ccw_2d(&self) -> Result<Vec<Vec<f64>>> {
        if self.dim() != 2 {
            return Err(Error::input("counter-clockwise ordering needs d == 2"));
        }
        let mut verts = self.enumerate_vertices()?;
        if verts.is_empty() {
            return Ok(verts);
        }
        let n = verts.len() as f64;
        let cx = verts.iter().map(|v| v[0]).sum::<f64>() / n;
        let cy = verts.iter().map(|v| v[1]).sum::<f64>() / n;
        verts.sort_by(|p, q| {
            let ap = (p[1] - cy).atan2(p[0] - cx);
            let aq = (q[1] - cy).atan2(q[0] - cx);
            ap.total_cmp(&aq)
        });
        Ok(verts)
    }
}

/// Normalized constraint rows `a . x + b >= 0` with `|a| = 1`, box included.
fn constraint_rows(p: &Polytope) -> Option<Vec<(Vec<f64>, f64)>> {
    let d = p.dim();
    let mut rows = Vec::with_capacity(p.halfspaces.len() + 2 * d);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        rows.push((e.clone(), -p.bbox.lower[i]));
        e[i] = -1.0;
        rows.push((e, p.bbox.upper[i]));
    }
    for h in &p.halfspaces {
        let norm = h.a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            if h.b < 0.0 {
                return None;
            }
            continue;
        }
        rows.push((h.a.iter().map(|v| v / norm).collect(), h.b / norm));
    }
    Some(rows)
}

/// Vertices plus, for each, the constraint rows tight there.
struct VertexSet {
    dim: usize,
    points: Vec<Vec<f64>>,
    tight: Vec<Vec<usize>>,
    n_rows: usize,
    tol: f64,
}

impl VertexSet {
    fn enumerate(p: &Polytope, cap: usize) -> Result<VertexSet> {
        let d = p.dim();
        if d > cap {
            return Err(Error::Capability(format!(
                "exact polytope operations are capped at dimension {cap}, got {d}"
            )));
        }
        let scale = p
            .bbox
            .lower
            .iter()
            .chain(&p.bbox.upper)
            .fold(1.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        let empty = VertexSet {
            dim: d,
            points: Vec::new(),
            tight: Vec::new(),
            n_rows: 0,
            tol,
        };
        let Some(rows) = constraint_rows(p) else {
            return Ok(empty);
        };
        let n = rows.len();
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut combo: Vec<usize> = (0..d).collect();
        loop {
            if let Some(x) = solve_rows(&rows, &combo) {
                let feasible = rows.iter().all(|(a, b)| dot(a, &x) + b >= -tol);
                if feasible
                    && !points
                        .iter()
                        .any(|q| euclid(q, &x) <= VERTEX_DEDUP_TOL.max(tol))
                {
                    points.push(x);
                }
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
        let tight = points
            .iter()
            .map(|x| {
                (0..n)
                    .filter(|&r| (dot(&rows[r].0, x) + rows[r].1).abs() <= 10.0 * tol)
                    .collect()
            })
            .collect();
        Ok(VertexSet {
            dim: d,
            points,
            tight,
            n_rows: n,
            tol,
        })
    }

    fn volume(&self) -> VolumeReport {
        let zero = VolumeReport {
            volume: 0.0,
            degenerate: false,
        };
        if self.points.len() <= self.dim {
            return zero;
        }
        let all: Vec<usize> = (0..self.points.len()).collect();
        if self.affine_rank(&all) < self.dim {
            return zero;
        }
        let simplices = self.triangulate(&all, self.dim);
        let mut fact = 1.0;
        for k in 2..=self.dim {
            fact *= k as f64;
        }
        let volume: f64 = simplices
            .iter()
            .map(|s| simplex_det(&self.points, s).abs() / fact)
            .sum();
        if simplices.is_empty() || !volume.is_finite() || volume <= 0.0 {
            return VolumeReport {
                volume: 0.0,
                degenerate: true,
            };
        }
        VolumeReport {
            volume,
            degenerate: false,
        }
    }

    fn affine_rank(&self, idx: &[usize]) -> usize {
        if idx.len() <= 1 {
            return 0;
        }
        let base = &self.points[idx[0]];
        let m = DMatrix::from_fn(idx.len() - 1, self.dim, |r, c| {
            self.points[idx[r + 1]][c] - base[c]
        });
        m.rank(100.0 * self.tol)
    }

    /// Pulling triangulation of the face spanned by `face` (affine dim `j`).
    fn triangulate(&self, face: &[usize], j: usize) -> Vec<Vec<usize>> {
        if j == 0 {
            return vec![vec![face[0]]];
        }
        let apex = face[0];
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        let mut out = Vec::new();
        for r in 0..self.n_rows {
            if self.tight[apex].contains(&r) {
                continue;
            }
            let facet: Vec<usize> = face
                .iter()
                .copied()
                .filter(|&v| self.tight[v].contains(&r))
                .collect();
            if facet.len() < j || seen.contains(&facet) {
                continue;
            }
            if self.affine_rank(&facet) != j - 1 {
                continue;
            }
            for mut s in self.triangulate(&facet, j - 1) {
                s.insert(0, apex);
                out.push(s);
            }
            seen.insert(facet);
        }
        out
    }
}

fn simplex_det(points: &[Vec<f64>], s: &[usize]) -> f64 {
    let d = s.len() - 1;
    let base = &points[s[0]];
    DMatrix::from_fn(d, d, |r, c| points[s[r + 1]][c] - base[c]).determinant()
}

fn solve_rows(rows: &[(Vec<f64>, f64)], combo: &[usize]) -> Option<Vec<f64>> {
    let d = combo.len();
    let a = DMatrix::from_fn(d, d, |r, c| rows[combo[r]].0[c]);
    let rhs = DVector::from_iterator(d, combo.iter().map(|&r| -rows[r].1));
    let lu = a.full_piv_lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..d).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 || min <= 1e-12 * max {
        return None;
    }
    lu.solve(&rhs).map(|x| x.iter().copied().collect())
}

fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    if k == 0 || k > n {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A union of polytopes with pairwise measure-zero intersections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DisjointPolytopeUnion {
    pub polytopes: Vec<Polytope>,
}

impl DisjointPolytopeUnion {
    pub fn new(polytopes: Vec<Polytope>) -> Self {
        DisjointPolytopeUnion { polytopes }
    }

    pub fn len(&self) -> usize {
        self.polytopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polytopes.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.polytopes.iter().any(|p| p.contains(x))
    }

    /// Pairwise box-interior disjointness, `O(n^2 d)`.
    pub fn boxes_disjoint(&self) -> bool {
        let n = self.polytopes.len();
        (0..n).all(|i| {
            (i + 1..n).all(|j| {
                self.polytopes[i]
                    .bbox
                    .interiors_disjoint(&self.polytopes[j].bbox)
            })
        })
    }

    /// Sum of member volumes.
    pub fn exact_volume(&self) -> Result<f64> {
        self.polytopes
            .iter()
            .map(Polytope::exact_volume)
            .sum::<Result<f64>>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Deterministic uniform sampler (ChaCha8 stream keyed by a 64-bit seed).
///
/// `counter` is the number of scalar draws taken so far; the pair
/// `(seed, counter)` pins the position in the stream.
#[derive(Debug, Clone)]
pub struct SeededSampler {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl SeededSampler {
    pub fn new(seed: u64) -> Self {
        SeededSampler {
            seed,
            counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Sampler positioned after `counter` draws of the `seed` stream.
    pub fn resume(seed: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // One f64 draw consumes two 32-bit words.
        rng.set_word_pos(2 * counter as u128);
        SeededSampler { seed, counter, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_f64(&mut self) -> f64 {
        self.counter += 1;
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n.saturating_sub(1))
    }

    /// `n` uniform points in `bbox`. Degenerate dimensions stay constant.
    pub fn sample_uniform(&mut self, bbox: &Hyperrectangle, n: usize) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        let d = bbox.dim();
        Ok((0..n)
            .map(|_| {
                (0..d)
                    .map(|i| {
                        let u = self.next_f64();
                        let w = bbox.width(i);
                        if w == 0.0 {
                            bbox.lower[i]
                        } else {
                            (bbox.lower[i] + u * w).min(bbox.upper[i])
                        }
                    })
                    .collect()
            })
            .collect())
    }
}

/// SplitMix64 finalizer, used to derive child seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
