//! Single layers of a nested model.
//!
//! Weights are stored one row per output unit. Dense layers with a bias keep
//! the bias in the last column; Gaussian RBF layers store one center per row.

use nalgebra::{DMatrix, DMatrixViewMut, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    SigmoidDense,
    LinearDense,
    GaussianRbf,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::SigmoidDense => 0,
            LayerKind::LinearDense => 1,
            LayerKind::GaussianRbf => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::SigmoidDense),
            1 => Some(LayerKind::LinearDense),
            2 => Some(LayerKind::GaussianRbf),
            _ => None,
        }
    }

    pub fn is_dense(self) -> bool {
        !matches!(self, LayerKind::GaussianRbf)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Width σ of the Gaussian basis functions; ignored by dense layers.
    pub rbf_width: f64,
    /// Coefficient of the squared Frobenius norm of this layer's weights.
    pub ridge: f64,
    /// Dense layers only.
    pub bias: bool,
}

impl LayerSpec {
    pub fn sigmoid(in_dim: usize, out_dim: usize) -> Self {
        Self::dense(LayerKind::SigmoidDense, in_dim, out_dim)
    }

    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Self::dense(LayerKind::LinearDense, in_dim, out_dim)
    }

    /// Gaussian RBF layer with `centers` basis functions.
    pub fn rbf(in_dim: usize, centers: usize, width: f64) -> Self {
        Self {
            kind: LayerKind::GaussianRbf,
            in_dim,
            out_dim: centers,
            rbf_width: width,
            ridge: 0.0,
            bias: false,
        }
    }

    fn dense(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
            rbf_width: 1.0,
            ridge: 0.0,
            bias: true,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn has_bias(&self) -> bool {
        self.bias && self.kind.is_dense()
    }

    /// Number of weights feeding one output unit.
    pub fn row_len(&self) -> usize {
        self.in_dim + usize::from(self.has_bias())
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.row_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return config_err(format!(
                "layer dimensions must be positive, got {}x{}",
                self.in_dim, self.out_dim
            ));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return config_err(format!("ridge must be finite and nonnegative, got {}", self.ridge));
        }
        if self.kind == LayerKind::GaussianRbf {
            if !(self.rbf_width.is_finite() && self.rbf_width > 0.0) {
                return config_err(format!("RBF width must be positive, got {}", self.rbf_width));
            }
            if self.bias {
                return config_err("RBF layers do not take a bias");
            }
        }
        Ok(())
    }
}

/// Output of a layer together with its derivatives at one input.
#[derive(Debug, Clone)]
pub struct LayerJacobians {
    pub output: DVector<f64>,
    /// d output / d input, `out_dim x in_dim`.
    pub input: DMatrix<f64>,
    /// Row `h` holds d output_h / d (row `h` of the weights); each unit depends
    /// on its own weight row only.
    pub units: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    weights: DMatrix<f64>,
}

impl Layer {
    pub fn new(spec: LayerSpec, weights: DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        if weights.shape() != (spec.out_dim, spec.row_len()) {
            return dim_err(format!(
                "weights are {:?}, layer expects {}x{}",
                weights.shape(),
                spec.out_dim,
                spec.row_len()
            ));
        }
        if !weights.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer weights".into()));
        }
        Ok(Self { spec, weights })
    }

    pub fn zeros(spec: LayerSpec) -> Result<Self> {
        let w = DMatrix::zeros(spec.out_dim, spec.row_len());
        Self::new(spec, w)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn kind(&self) -> LayerKind {
        self.spec.kind
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Mutable access with the shape held fixed.
    pub fn weights_mut(&mut self) -> DMatrixViewMut<'_, f64> {
        self.weights.as_view_mut()
    }

    pub fn set_weights(&mut self, weights: DMatrix<f64>) -> Result<()> {
        if weights.shape() != self.weights.shape() {
            return dim_err(format!(
                "weights are {:?}, layer expects {:?}",
                weights.shape(),
                self.weights.shape()
            ));
        }
        self.weights = weights;
        Ok(())
    }

    /// Evaluates the layer at one input without checking its length.
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        let s = &self.spec;
        match s.kind {
            LayerKind::GaussianRbf => {
                let inv = 1.0 / (s.rbf_width * s.rbf_width);
                DVector::from_fn(s.out_dim, |h, _| {
                    let mut d2 = 0.0;
                    for i in 0..s.in_dim {
                        let d = z[i] - self.weights[(h, i)];
                        d2 += d * d;
                    }
                    (-d2 * inv).exp()
                })
            }
            kind => {
                let mut a = self.weights.columns(0, s.in_dim) * z;
                if s.has_bias() {
                    a += self.weights.column(s.in_dim);
                }
                if kind == LayerKind::SigmoidDense {
                    a.apply(|v| *v = sigmoid(*v));
                }
                a
            }
        }
    }

    /// Evaluates the layer on every row of `input`, returning one row per point.
    pub fn apply_batch(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let s = &self.spec;
        match s.kind {
            LayerKind::GaussianRbf => rbf_features(input, &self.weights, s.rbf_width),
            kind => {
                let mut a = input * self.weights.columns(0, s.in_dim).transpose();
                if s.has_bias() {
                    let b = self.weights.column(s.in_dim);
                    for mut r in a.row_iter_mut() {
                        for (v, bh) in r.iter_mut().zip(b.iter()) {
                            *v += bh;
                        }
                    }
                }
                if kind == LayerKind::SigmoidDense {
                    a.apply(|v| *v = sigmoid(*v));
                }
                a
            }
        }
    }

    /// Output, input Jacobian and per-unit weight gradients at `z`.
    pub fn jacobians(&self, z: &DVector<f64>) -> LayerJacobians {
        let s = &self.spec;
        let output = self.apply(z);
        let (input, units) = match s.kind {
            LayerKind::GaussianRbf => {
                let c = 2.0 / (s.rbf_width * s.rbf_width);
                let mut units = DMatrix::zeros(s.out_dim, s.in_dim);
                for h in 0..s.out_dim {
                    let scale = c * output[h];
                    for i in 0..s.in_dim {
                        units[(h, i)] = scale * (z[i] - self.weights[(h, i)]);
                    }
                }
                (-&units, units)
            }
            kind => {
                let deriv = match kind {
                    LayerKind::SigmoidDense => output.map(|o| o * (1.0 - o)),
                    _ => DVector::from_element(s.out_dim, 1.0),
                };
                let mut input = self.weights.columns(0, s.in_dim).into_owned();
                let mut units = DMatrix::zeros(s.out_dim, s.row_len());
                for h in 0..s.out_dim {
                    let d = deriv[h];
                    for i in 0..s.in_dim {
                        input[(h, i)] *= d;
                        units[(h, i)] = d * z[i];
                    }
                    if s.has_bias() {
                        units[(h, s.in_dim)] = d;
                    }
                }
                (input, units)
            }
        };
        LayerJacobians {
            output,
            input,
            units,
        }
    }
}

/// Derivatives of one layer at `z`, after checking that `z` has the right length.
pub fn layer_jacobians(layer: &Layer, z: &DVector<f64>) -> Result<LayerJacobians> {
    if z.len() != layer.spec.in_dim {
        return dim_err(format!(
            "layer input has length {}, expected {}",
            z.len(),
            layer.spec.in_dim
        ));
    }
    Ok(layer.jacobians(z))
}

/// Gaussian basis responses `exp(-|x_n - c_h|^2 / width^2)` for every point
/// (rows of `points`) and center (rows of `centers`).
pub fn rbf_features(points: &DMatrix<f64>, centers: &DMatrix<f64>, width: f64) -> DMatrix<f64> {
    let inv = 1.0 / (width * width);
    let d = points.ncols();
    DMatrix::from_fn(points.nrows(), centers.nrows(), |n, h| {
        let mut d2 = 0.0;
        for i in 0..d {
            let t = points[(n, i)] - centers[(h, i)];
            d2 += t * t;
        }
        (-d2 * inv).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e4), 1.0);
        assert_eq!(sigmoid(-1e4), 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dense_layer_uses_bias_column() {
        let spec = LayerSpec::linear(2, 1);
        let layer = Layer::new(spec, DMatrix::from_row_slice(1, 3, &[2.0, -1.0, 0.5])).unwrap();
        let y = layer.apply(&DVector::from_vec(vec![1.0, 3.0]));
        assert_eq!(y[0], 2.0 - 3.0 + 0.5);
    }

    #[test]
    fn rbf_layer_peaks_at_center() {
        let spec = LayerSpec::rbf(2, 2, 2.0);
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let layer = Layer::new(spec, w).unwrap();
        let y = layer.apply(&DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(y[1], 1.0);
        assert!((y[0] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn batch_matches_pointwise() {
        let specs = [
            LayerSpec::sigmoid(3, 2),
            LayerSpec::linear(3, 2).with_bias(false),
            LayerSpec::rbf(3, 2, 0.7),
        ];
        let pts = DMatrix::from_fn(4, 3, |n, i| (n as f64 * 0.3 - i as f64 * 0.2).sin());
        for spec in specs {
            let w = DMatrix::from_fn(spec.out_dim, spec.row_len(), |h, i| 0.1 * (h + 2 * i) as f64);
            let layer = Layer::new(spec, w).unwrap();
            let batch = layer.apply_batch(&pts);
            for n in 0..4 {
                let y = layer.apply(&crate::linalg::row(&pts, n));
                for h in 0..2 {
                    assert!((batch[(n, h)] - y[h]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn shape_and_spec_validation() {
        assert!(Layer::new(LayerSpec::linear(2, 2), DMatrix::zeros(2, 2)).is_err());
        assert!(LayerSpec::rbf(2, 3, 0.0).validate().is_err());
        assert!(LayerSpec::rbf(2, 3, 1.0).with_bias(true).validate().is_err());
        assert!(LayerSpec::linear(2, 2).with_ridge(-1.0).validate().is_err());
        assert!(Layer::new(LayerSpec::linear(1, 1), DMatrix::from_element(1, 2, f64::NAN)).is_err());
        assert!(layer_jacobians(&Layer::zeros(LayerSpec::linear(2, 1)).unwrap(), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in [LayerKind::SigmoidDense, LayerKind::LinearDense, LayerKind::GaussianRbf] {
            assert_eq!(LayerKind::from_code(k.code()), Some(k));
        }
        assert_eq!(LayerKind::from_code(7), None);
    }
}
