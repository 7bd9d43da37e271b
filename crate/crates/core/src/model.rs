//! Feedforward ReLU networks: representation, exact evaluation and file I/O.
//!
//! Two on-disk formats are supported:
//!
//! * JSON: `{ "input_dim": d, "layers": [ { "weights": [[..]], "bias": [..], "relu": bool } ] }`
//! * NNet text, the layout used by the ACAS Xu / VCAS benchmark networks.
//!
//! NNet files carry input normalization constants (min, max, mean, range).
//! They are kept on the [`Network`] so that a file can be written back
//! unchanged, but [`Network::forward`] never applies them: the network is
//! evaluated on already-normalized inputs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer, optionally followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub relu: bool,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, relu: bool) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::validation(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("layer contains non-finite values"));
        }
        Ok(Layer {
            weights,
            bias,
            relu,
        })
    }

    /// Builds a layer from row-major nested vectors.
    pub fn from_rows(rows: &[Vec<f64>], bias: &[f64], relu: bool) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::validation("ragged weight matrix"));
        }
        let weights = DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
        Layer::new(weights, DVector::from_column_slice(bias), relu)
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }
}

/// Input normalization constants carried by NNet files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub mins: Vec<f64>,
    pub maxes: Vec<f64>,
    pub means: Vec<f64>,
    pub ranges: Vec<f64>,
}

/// A feedforward network `f: R^d -> R^m` with ReLU hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    normalization: Option<InputNormalization>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::validation("input dimension must be positive"));
        }
        if layers.is_empty() {
            return Err(Error::validation("network has no layers"));
        }
        let mut prev = input_dim;
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            if layer.cols() != prev {
                return Err(Error::validation(format!(
                    "layer {i} expects {} inputs but previous layer has {prev} outputs",
                    layer.cols()
                )));
            }
            if layer.rows() == 0 {
                return Err(Error::validation(format!("layer {i} has no neurons")));
            }
            if layer.bias.len() != layer.rows() {
                return Err(Error::validation(format!("layer {i} bias length mismatch")));
            }
            if i == last && layer.relu {
                return Err(Error::validation("output layer must not have an activation"));
            }
            if i < last && !layer.relu {
                return Err(Error::validation(format!("hidden layer {i} must use ReLU")));
            }
            prev = layer.rows();
        }
        Ok(Network {
            layers,
            input_dim,
            normalization: None,
        })
    }

    pub fn with_normalization(mut self, norm: InputNormalization) -> Self {
        self.normalization = Some(norm);
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::rows)
    }

    pub fn normalization(&self) -> Option<&InputNormalization> {
        self.normalization.as_ref()
    }

    /// Number of hidden (ReLU) layers.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Total number of ReLU neurons.
    pub fn hidden_neurons(&self) -> usize {
        self.layers[..self.hidden_layers()]
            .iter()
            .map(Layer::rows)
            .sum()
    }

    /// Exact evaluation of the network at `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::input(format!(
                "expected input of length {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        for layer in &self.layers {
            let mut next = Vec::with_capacity(layer.rows());
            for i in 0..layer.rows() {
                let mut h = layer.bias[i];
                for (j, a) in act.iter().enumerate() {
                    h += layer.weights[(i, j)] * a;
                }
                next.push(if layer.relu { h.max(0.0) } else { h });
            }
            act = next;
        }
        act
    }

    /// Appends the rows of `spec` as an extra linear map on the output, giving
    /// a network whose k-th output is `c_k . f(x) + d_k`.
    ///
    /// The new rows are folded into the existing output layer so the result
    /// has the same depth.
    pub fn append_spec_rows(&self, spec: &OutputSpec) -> Result<Network> {
        let m = self.output_dim();
        if spec.output_dim() != m {
            return Err(Error::input(format!(
                "spec has coefficient length {} but network output dimension is {m}",
                spec.output_dim()
            )));
        }
        let c = spec.coefficient_matrix();
        let d = spec.offset_vector();
        let last = self.layers.last().expect("non-empty");
        let weights = &c * &last.weights;
        let bias = &c * &last.bias + d;
        let mut layers = self.layers[..self.layers.len() - 1].to_vec();
        layers.push(Layer::new(weights, bias, false)?);
        Network::new(self.input_dim, layers)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        file.into_network()
    }

    /// Writes the network in NNet text layout.
    pub fn to_nnet(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "// Neural network in NNet format");
        let sizes: Vec<usize> = std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Layer::rows))
            .collect();
        let max_size = sizes.iter().copied().max().unwrap_or(0);
        let _ = writeln!(
            out,
            "{},{},{},{},",
            self.layers.len(),
            self.input_dim,
            self.output_dim(),
            max_size
        );
        let sizes_row: String = sizes.iter().map(|s| format!("{s},")).collect();
        let _ = writeln!(out, "{sizes_row}");
        let _ = writeln!(out, "0,");
        let d = self.input_dim;
        let norm = self.normalization.clone().unwrap_or_else(|| InputNormalization {
            mins: vec![f64::MIN; d],
            maxes: vec![f64::MAX; d],
            means: vec![0.0; d + 1],
            ranges: vec![1.0; d + 1],
        });
        let _ = writeln!(out, "{}", join_row(norm.mins.iter()));
        let _ = writeln!(out, "{}", join_row(norm.maxes.iter()));
        let _ = writeln!(out, "{}", join_row(norm.means.iter()));
        let _ = writeln!(out, "{}", join_row(norm.ranges.iter()));
        for layer in &self.layers {
            for i in 0..layer.rows() {
                let _ = writeln!(out, "{}", join_row(layer.weights.row(i).iter()));
            }
            for b in layer.bias.iter() {
                let _ = writeln!(out, "{},", fmt_num(*b));
            }
        }
        out
    }

    /// Parses NNet text. Comment lines (`//`) may only appear before the header.
    pub fn from_nnet(text: &str) -> Result<Network> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .skip_while(|(_, l)| l.starts_with("//"));

        let mut next_row = |what: &str| -> Result<(usize, Vec<f64>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of file reading {what}")))?;
            let values = parse_row(no, line, what)?;
            Ok((no, values))
        };

        let (hline, header) = next_row("header")?;
        if header.len() < 4 {
            return Err(Error::parse(hline, "header needs 4 fields"));
        }
        let num_layers = as_count(hline, header[0], "numLayers")?;
        let input_size = as_count(hline, header[1], "inputSize")?;
        let output_size = as_count(hline, header[2], "outputSize")?;

        let (sline, sizes) = next_row("layer sizes")?;
        if sizes.len() != num_layers + 1 {
            return Err(Error::validation(format!(
                "line {sline}: header declares {num_layers} layers but {} layer sizes are listed",
                sizes.len()
            )));
        }
        let sizes: Vec<usize> = sizes
            .iter()
            .map(|&s| as_count(sline, s, "layer size"))
            .collect::<Result<_>>()?;
        if sizes[0] != input_size || sizes[num_layers] != output_size {
            return Err(Error::validation(format!(
                "line {sline}: layer sizes disagree with declared input/output sizes"
            )));
        }

        next_row("symmetric flag")?;
        let (_, mins) = next_row("input minimums")?;
        let (_, maxes) = next_row("input maximums")?;
        let (_, means) = next_row("means")?;
        let (_, ranges) = next_row("ranges")?;

        let mut layers = Vec::with_capacity(num_layers);
        for k in 0..num_layers {
            let (rows, cols) = (sizes[k + 1], sizes[k]);
            let mut weights = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                let (no, row) = next_row("weight row")?;
                if row.len() != cols {
                    return Err(Error::validation(format!(
                        "line {no}: layer {k} weight row has {} entries, expected {cols}",
                        row.len()
                    )));
                }
                for (j, v) in row.into_iter().enumerate() {
                    weights[(i, j)] = v;
                }
            }
            let mut bias = DVector::zeros(rows);
            for i in 0..rows {
                let (no, row) = next_row("bias")?;
                if row.len() != 1 {
                    return Err(Error::validation(format!(
                        "line {no}: layer {k} bias line has {} entries, expected 1",
                        row.len()
                    )));
                }
                bias[i] = row[0];
            }
            layers.push(Layer::new(weights, bias, k + 1 < num_layers)?);
        }
        if let Some((no, _)) = lines.next() {
            return Err(Error::validation(format!(
                "line {no}: trailing data after the last layer"
            )));
        }
        Ok(Network::new(input_size, layers)?.with_normalization(InputNormalization {
            mins,
            maxes,
            means,
            ranges,
        }))
    }
}

fn join_row<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for v in values {
        let _ = write!(s, "{},", fmt_num(*v));
    }
    s
}

/// Shortest round-tripping text, in exponent form for extreme magnitudes.
fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn parse_row(line_no: usize, line: &str, what: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, tok)| {
            tok.parse::<f64>().map_err(|_| {
                Error::parse(line_no, format!("{what}: field {} is not a number: {tok:?}", i + 1))
            })
        })
        .collect()
}

fn as_count(line: usize, v: f64, what: &str) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
        Ok(v as usize)
    } else {
        Err(Error::parse(line, format!("{what} must be a non-negative integer, got {v}")))
    }
}

/// Supported network file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkFormat {
    Json,
    Nnet,
}

impl NetworkFormat {
    /// Guesses the format from a file extension; defaults to JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("nnet") => NetworkFormat::Nnet,
            _ => NetworkFormat::Json,
        }
    }
}

pub fn load_network(path: impl AsRef<Path>, format: NetworkFormat) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    match format {
        NetworkFormat::Json => Network::from_json(&text),
        NetworkFormat::Nnet => Network::from_nnet(&text),
    }
}

pub fn save_network(net: &Network, path: impl AsRef<Path>, format: NetworkFormat) -> Result<()> {
    let text = match format {
        NetworkFormat::Json => net.to_json()?,
        NetworkFormat::Nnet => net.to_nnet(),
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    relu: bool,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<InputNormalization>,
}

impl From<&Network> for NetworkFile {
    fn from(net: &Network) -> Self {
        NetworkFile {
            input_dim: net.input_dim,
            layers: net
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: (0..l.rows())
                        .map(|i| l.weights.row(i).iter().copied().collect())
                        .collect(),
                    bias: l.bias.iter().copied().collect(),
                    relu: l.relu,
                })
                .collect(),
            normalization: net.normalization.clone(),
        }
    }
}

impl NetworkFile {
    fn into_network(self) -> Result<Network> {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Layer::from_rows(&l.weights, &l.bias, l.relu)
                    .map_err(|e| Error::validation(format!("layer {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Network::new(self.input_dim, layers)?;
        Ok(match self.normalization {
            Some(n) => net.with_normalization(n),
            None => net,
        })
    }
}

/// One output half-space `c . y + d >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConstraint {
    pub c: Vec<f64>,
    pub d: f64,
}

/// Polyhedral output set `O = { y : c_k . y + d_k >= 0 for all k }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<OutputConstraint>", into = "Vec<OutputConstraint>")]
pub struct OutputSpec {
    constraints: Vec<OutputConstraint>,
}

impl OutputSpec {
    pub fn new(constraints: Vec<OutputConstraint>) -> Result<Self> {
        let Some(first) = constraints.first() else {
            return Err(Error::validation("output spec needs at least one constraint"));
        };
        let m = first.c.len();
        if m == 0 {
            return Err(Error::validation("output spec coefficients are empty"));
        }
        for (k, con) in constraints.iter().enumerate() {
            if con.c.len() != m {
                return Err(Error::validation(format!(
                    "constraint {k} has {} coefficients, expected {m}",
                    con.c.len()
                )));
            }
            if !con.d.is_finite() || con.c.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("constraint {k} is not finite")));
            }
        }
        Ok(OutputSpec { constraints })
    }

    /// Spec `y_target - y_i >= 0` for every other output `i`.
    pub fn one_vs_rest(output_dim: usize, target: usize) -> Result<Self> {
        if target >= output_dim || output_dim < 2 {
            return Err(Error::input("target index out of range"));
        }
        let rows = (0..output_dim)
            .filter(|&i| i != target)
            .map(|i| {
                let mut c = vec![0.0; output_dim];
                c[target] = 1.0;
                c[i] = -1.0;
                OutputConstraint { c, d: 0.0 }
            })
            .collect();
        OutputSpec::new(rows)
    }

    pub fn constraints(&self) -> &[OutputConstraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.constraints[0].c.len()
    }

    /// True iff `y` satisfies every constraint (closed).
    pub fn contains(&self, y: &[f64]) -> bool {
        self.constraints
            .iter()
            .all(|con| dot(&con.c, y) + con.d >= 0.0)
    }

    fn coefficient_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.output_dim(), |k, j| self.constraints[k].c[j])
    }

    fn offset_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.constraints.iter().map(|c| c.d))
    }
}

impl TryFrom<Vec<OutputConstraint>> for OutputSpec {
    type Error = Error;

    fn try_from(value: Vec<OutputConstraint>) -> Result<Self> {
        OutputSpec::new(value)
    }
}

impl From<OutputSpec> for Vec<OutputConstraint> {
    fn from(spec: OutputSpec) -> Self {
        spec.constraints
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> Network {
        Network::new(
            2,
            vec![Layer::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0], false).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn identity_forward() {
        let y = identity2().forward(&[0.3, -0.7]).unwrap();
        assert_eq!(y, vec![0.3, -0.7]);
    }

    #[test]
    fn inactive_neuron_outputs_zero() {
        let net = Network::new(
            1,
            vec![
                Layer::from_rows(&[vec![1.0]], &[-1.0], true).unwrap(),
                Layer::from_rows(&[vec![1.0]], &[0.0], false).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(net.forward(&[0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        assert!(matches!(identity2().forward(&[1.0]), Err(Error::Input(_))));
    }

    #[test]
    fn append_difference_row() {
        let spec = OutputSpec::new(vec![OutputConstraint {
            c: vec![1.0, -1.0],
            d: 0.0,
        }])
        .unwrap();
        let g = identity2().append_spec_rows(&spec).unwrap();
        assert_eq!(g.output_dim(), 1);
        let y = g.forward(&[0.75, 0.25]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn append_three_rows() {
        let rows = (0..3)
            .map(|k| OutputConstraint {
                c: vec![k as f64, 1.0],
                d: -1.0,
            })
            .collect();
        let g = identity2()
            .append_spec_rows(&OutputSpec::new(rows).unwrap())
            .unwrap();
        assert_eq!(g.output_dim(), 3);
    }

    #[test]
    fn rejects_relu_on_output_layer() {
        let r = Network::new(1, vec![Layer::from_rows(&[vec![1.0]], &[0.0], true).unwrap()]);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_dimension_chain_mismatch() {
        let r = Network::new(
            2,
            vec![
                Layer::from_rows(&[vec![1.0, 1.0]], &[0.0], true).unwrap(),
                Layer::from_rows(&[vec![1.0, 2.0]], &[0.0], false).unwrap(),
            ],
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn empty_spec_rejected() {
        assert!(OutputSpec::new(vec![]).is_err());
    }

    #[test]
    fn nnet_size_mismatch_is_validation_error() {
        let text = "// test\n2,2,1,2,\n2,3,1,\n0,\n0,0,\n1,1,\n0,0,0,\n1,1,1,\n1,0,\n0,1,\n0,\n0,\n1,1,\n0,\n";
        match Network::from_nnet(text) {
            Err(Error::Validation(msg)) => assert!(msg.contains("entries"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn nnet_bad_number_reports_line() {
        let text = "2,2,1,2,\n2,2,1,\n0,\nx,0,\n";
        match Network::from_nnet(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
