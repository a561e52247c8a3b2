use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::linalg::all_finite;

/// Paired inputs and targets, one point per row, with an optional validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    validation: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        check_pair(&x, &y)?;
        Ok(Self {
            x,
            y,
            validation: None,
        })
    }

    /// Autoencoder data: the targets are the inputs.
    pub fn autoencoder(x: DMatrix<f64>) -> Result<Self> {
        let y = x.clone();
        Self::new(x, y)
    }

    pub fn with_validation(mut self, x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        check_pair(&x, &y)?;
        if x.ncols() != self.x.ncols() || y.ncols() != self.y.ncols() {
            return dim_err("validation split has different dimensions from training split");
        }
        self.validation = Some((x, y));
        Ok(self)
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn validation(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.validation.as_ref().map(|(x, y)| (x, y))
    }

    /// The split used for stopping decisions: validation when present.
    pub fn stopping_split(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        self.validation().unwrap_or((&self.x, &self.y))
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }
}

fn check_pair(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return dim_err(format!("{} inputs but {} targets", x.nrows(), y.nrows()));
    }
    if x.nrows() == 0 {
        return dim_err("dataset has no points");
    }
    if !all_finite(x.iter()) || !all_finite(y.iter()) {
        return Err(Error::NonFinite("dataset contains NaN or infinity".into()));
    }
    Ok(())
}
