use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{check_dim, Result};

/// Fully connected affine map `y = W x + b`.
///
/// `weights` has shape `(outputs, inputs)` and is stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for both weights and biases.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || rng.gen_range(-bound..=bound));
        let bias = Array1::from_shape_simple_fn(outputs, || rng.gen_range(-bound..=bound));
        Self { weights, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Batched forward: rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("dense input", self.inputs(), x.ncols())?;
        let mut y = x.dot(&self.weights.t());
        y += &self.bias;
        Ok(y)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("dense input", self.inputs(), x.len())?;
        let out = self
            .weights
            .outer_iter()
            .zip(self.bias.iter())
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        Ok(out)
    }

    /// Accumulates `dW += dyᵀ x`, `db += Σ dy` into `grad`.
    pub(crate) fn accumulate(grad: &mut DenseGrad, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) {
        ndarray::linalg::general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grad.weights);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    /// `dx = dy W`.
    pub(crate) fn backprop_input(&self, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        dy.dot(&self.weights)
    }

    /// `self ← τ·src + (1−τ)·self`.
    pub fn soft_update_from(&mut self, src: &Dense, tau: f64) {
        self.weights.zip_mut_with(&src.weights, |t, s| *t = tau * s + (1.0 - tau) * *t);
        self.bias.zip_mut_with(&src.bias, |t, s| *t = tau * s + (1.0 - tau) * *t);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.len()),
        }
    }

    /// Weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter()).copied().collect()
    }
}

/// Gradients for every dense layer of a network, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<DenseGrad>,
}

impl ParamGrads {
    pub fn zeros_like(layers: &[Dense]) -> Self {
        Self {
            layers: layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            g.weights *= s;
            g.bias *= s;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|g| g.flatten()).collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(g.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Soft-updates every layer of `target` toward `source`.
pub fn soft_update(target: &mut [Dense], source: &[Dense], tau: f64) {
    for (t, s) in target.iter_mut().zip(source) {
        t.soft_update_from(s, tau);
    }
}
