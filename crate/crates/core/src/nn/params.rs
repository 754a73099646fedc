use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths from input to output. The output layer always has two units.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Architecture {
    dims: Vec<usize>,
}

impl Architecture {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArchitecture(
                "need at least an input and an output layer".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArchitecture("zero-width layer".into()));
        }
        if *dims.last().unwrap() != 2 {
            return Err(Error::InvalidArchitecture(format!(
                "output layer has {} units, binary classification needs 2",
                dims.last().unwrap()
            )));
        }
        Ok(Architecture { dims })
    }

    /// `input → 20 → 20 → 2` with ReLU hidden units.
    pub fn two_hidden(input: usize) -> Result<Self> {
        Self::new(vec![input, 20, 20, 2])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.dims.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().map(|(i, o)| o * i + o).sum()
    }
}

impl TryFrom<Vec<usize>> for Architecture {
    type Error = Error;
    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Architecture::new(dims)
    }
}

impl From<Architecture> for Vec<usize> {
    fn from(a: Architecture) -> Self {
        a.dims
    }
}

/// Borrowed view of one dense layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    /// Row-major `n_out × n_in`.
    pub weights: &'a [f64],
    pub bias: &'a [f64],
    pub n_in: usize,
    pub n_out: usize,
}

/// Network parameters θ stored flat.
///
/// Flattening order (shared with [`FlatGradient`]): layer by layer from the
/// input; within a layer the weight matrix first, row-major with shape
/// `(out, in)`, then the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct MlpParams {
    arch: Architecture,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    dims: Architecture,
    values: Vec<f64>,
}

impl TryFrom<ParamsRepr> for MlpParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<Self> {
        MlpParams::from_flat(r.dims, r.values)
    }
}

impl From<MlpParams> for ParamsRepr {
    fn from(p: MlpParams) -> Self {
        ParamsRepr {
            dims: p.arch,
            values: p.values,
        }
    }
}

impl MlpParams {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.num_params();
        MlpParams {
            arch,
            values: vec![0.0; n],
        }
    }

    pub fn from_flat(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.num_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.num_params(),
                actual: values.len(),
                context: "flat parameter vector",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArchitecture("non-finite parameter".into()));
        }
        Ok(MlpParams { arch, values })
    }

    /// Builds parameters from `(weights, bias)` pairs, weights row-major `out × in`.
    pub fn from_layers(input_dim: usize, layers: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut dims = vec![input_dim];
        let mut values = Vec::new();
        for (w, b) in layers {
            let n_in = *dims.last().unwrap();
            if w.len() != b.len() * n_in {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {} weights have {} entries, expected {} x {}",
                    dims.len() - 1,
                    w.len(),
                    b.len(),
                    n_in
                )));
            }
            dims.push(b.len());
            values.extend(w);
            values.extend(b);
        }
        Self::from_flat(Architecture::new(dims)?, values)
    }

    /// Uniform weights in `[-l, l]`, `l = sqrt(6 / (fan_in + fan_out))`;
    /// biases start at zero.
    pub fn glorot_uniform<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(arch.num_params());
        for (n_in, n_out) in arch.layer_shapes() {
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            values.extend((0..n_in * n_out).map(|_| rng.random_range(-limit..=limit)));
            values.extend(std::iter::repeat_n(0.0, n_out));
        }
        MlpParams { arch, values }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layers(&self) -> Vec<LayerView<'_>> {
        let mut out = Vec::with_capacity(self.arch.num_layers());
        let mut offset = 0;
        for (n_in, n_out) in self.arch.layer_shapes() {
            let weights = &self.values[offset..offset + n_in * n_out];
            offset += n_in * n_out;
            let bias = &self.values[offset..offset + n_out];
            offset += n_out;
            out.push(LayerView {
                weights,
                bias,
                n_in,
                n_out,
            });
        }
        out
    }

    /// `θ - scale · direction`.
    pub fn step(&self, direction: &FlatGradient, scale: f64) -> Result<MlpParams> {
        if direction.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: direction.len(),
                context: "step direction",
            });
        }
        let values = self
            .values
            .iter()
            .zip(direction.values())
            .map(|(t, g)| t - scale * g)
            .collect();
        Ok(MlpParams {
            arch: self.arch.clone(),
            values,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient with respect to [`MlpParams`], in the same flattening order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatGradient(Vec<f64>);

impl FlatGradient {
    pub fn new(values: Vec<f64>) -> Self {
        FlatGradient(values)
    }

    pub fn zeros(len: usize) -> Self {
        FlatGradient(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &FlatGradient) {
        assert_eq!(self.len(), other.len(), "gradient length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}
