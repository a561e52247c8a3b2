use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::layer::{Layer, LayerSpec};
use crate::error::{config_err, dim_err, Result};

/// A chain of layers `f = f_{K+1} o ... o f_1` plus the hidden boundaries at
/// which auxiliary coordinates are introduced.
///
/// Boundary `k` (1-based) is the output of layer `k`. The placement splits the
/// chain into blocks: block `j` holds the layers between the `j`-th and
/// `j+1`-th placed boundaries, so the number of blocks is `placement.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedNet {
    layers: Vec<Layer>,
    placement: Vec<usize>,
}

impl NestedNet {
    pub fn new(layers: Vec<Layer>, placement: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return config_err("a nested model needs at least one layer");
        }
        for (k, pair) in layers.windows(2).enumerate() {
            let (a, b) = (pair[0].spec(), pair[1].spec());
            if a.out_dim != b.in_dim {
                return dim_err(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    k,
                    a.out_dim,
                    k + 1,
                    b.in_dim
                ));
            }
        }
        check_placement(&placement, layers.len() - 1)?;
        Ok(Self { layers, placement })
    }

    /// Builds a net with all weights set to zero.
    pub fn from_specs(specs: &[LayerSpec], placement: Vec<usize>) -> Result<Self> {
        let layers = specs
            .iter()
            .cloned()
            .map(Layer::zeros)
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, placement)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut Layer {
        &mut self.layers[k]
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn placement(&self) -> &[usize] {
        &self.placement
    }

    pub fn with_placement(mut self, placement: Vec<usize>) -> Result<Self> {
        check_placement(&placement, self.layers.len() - 1)?;
        self.placement = placement;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec().in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec().out_dim
    }

    /// Number of hidden boundaries available for placement.
    pub fn hidden_boundaries(&self) -> usize {
        self.layers.len() - 1
    }

    /// Width of hidden boundary `k` (1-based).
    pub fn boundary_width(&self, k: usize) -> usize {
        self.layers[k - 1].spec().out_dim
    }

    /// Layer index ranges of the blocks, in order.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(self.placement.len() + 1);
        for &p in &self.placement {
            out.push(start..p);
            start = p;
        }
        out.push(start..self.layers.len());
        out
    }

    /// Widths of the auxiliary coordinate blocks implied by the placement.
    pub fn aux_widths(&self) -> Vec<usize> {
        self.placement.iter().map(|&k| self.boundary_width(k)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    /// Applies layers `range` to `z` without checking dimensions.
    pub fn apply_range(&self, range: Range<usize>, z: &DVector<f64>) -> DVector<f64> {
        let mut a = z.clone();
        for layer in &self.layers[range] {
            a = layer.apply(&a);
        }
        a
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.apply_range(0..self.layers.len(), x)
    }

    /// Applies layers `range` to every row of `input`.
    pub fn apply_range_batch(&self, range: Range<usize>, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = input.clone();
        for layer in &self.layers[range] {
            a = layer.apply_batch(&a);
        }
        a
    }

    /// All weights concatenated layer by layer, each in row-major order.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            let w = layer.weights();
            for h in 0..w.nrows() {
                out.extend(w.row(h).iter());
            }
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`NestedNet::to_flat`].
    pub fn set_flat(&mut self, flat: &DVector<f64>) -> Result<()> {
        if flat.len() != self.param_count() {
            return dim_err(format!(
                "parameter vector has length {}, model has {}",
                flat.len(),
                self.param_count()
            ));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let (rows, cols) = layer.weights().shape();
            let w = DMatrix::from_row_slice(rows, cols, &flat.as_slice()[off..off + rows * cols]);
            off += rows * cols;
            layer.set_weights(w)?;
        }
        Ok(())
    }

    /// Flattens per-layer matrices shaped like this net's weights.
    pub fn flatten_like(&self, mats: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in mats {
            for h in 0..w.nrows() {
                out.extend(w.row(h).iter());
            }
        }
        DVector::from_vec(out)
    }
}

fn check_placement(placement: &[usize], hidden: usize) -> Result<()> {
    for (i, &k) in placement.iter().enumerate() {
        if k == 0 || k > hidden {
            return config_err(format!(
                "placement boundary {k} is outside 1..={hidden}"
            ));
        }
        if i > 0 && placement[i - 1] >= k {
            return config_err("placement must be strictly increasing");
        }
    }
    Ok(())
}
