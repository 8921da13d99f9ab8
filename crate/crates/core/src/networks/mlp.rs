use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Dense, ParamGrads};
use crate::error::{check_dim, Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`. For the sigmoid, `Some(k)` swaps in
    /// the slope-`k` surrogate `σ(kz)(1 − σ(kz))`; `k = 1` is exact.
    fn derivative(self, z: f64, surrogate_k: Option<f64>) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(surrogate_k.unwrap_or(1.0) * z);
                s * (1.0 - s)
            }
        }
    }
}

/// Dense feedforward network used for critics, the guide and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Pre-activations and activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `activations[0]` is the input; `activations[l+1]` is layer `l`'s output.
    pub activations: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
}

impl MlpNetwork {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::uniform(w[0], w[1], rng)).collect(),
            activation,
        })
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::validate_sizes(sizes)?;
        Ok(Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            activation,
        })
    }

    fn validate_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Contract(format!("invalid MLP layer sizes {sizes:?}")));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let last = self.layers.len() - 1;
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.forward_one(&x)?;
            if l < last {
                x.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        Ok(x)
    }

    /// Batched forward, rows are samples.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.activations.pop().expect("non-empty"))
    }

    pub fn forward_cached(&self, input: ArrayView2<'_, f64>) -> Result<MlpCache> {
        check_dim("MLP input", self.input_dim(), input.ncols())?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(activations[l].view())?;
            let a = if l < last { z.mapv(|v| self.activation.apply(v)) } else { z.clone() };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(MlpCache {
            activations,
            pre_activations,
        })
    }

    /// Reverse pass for a cached batch. Returns parameter gradients summed
    /// over rows and `∂L/∂input` per row.
    pub fn backward(
        &self,
        cache: &MlpCache,
        output_grad: ArrayView2<'_, f64>,
        surrogate_k: Option<f64>,
    ) -> Result<(ParamGrads, Array2<f64>)> {
        let last = self.layers.len() - 1;
        check_dim("MLP output gradient", self.output_dim(), output_grad.ncols())?;
        check_dim("MLP output gradient rows", cache.activations[0].nrows(), output_grad.nrows())?;
        let mut grads = ParamGrads::zeros_like(&self.layers);
        let mut delta = output_grad.to_owned();
        for l in (0..=last).rev() {
            if l < last {
                delta.zip_mut_with(&cache.pre_activations[l], |d, &z| {
                    *d *= self.activation.derivative(z, surrogate_k)
                });
            }
            Dense::accumulate(&mut grads.layers[l], cache.activations[l].view(), delta.view());
            delta = self.layers[l].backprop_input(delta.view());
        }
        Ok((grads, delta))
    }
}

pub fn mlp_forward(net: &MlpNetwork, input: &[f64]) -> Result<Vec<f64>> {
    net.forward(input)
}

/// Single-sample reverse pass.
pub fn mlp_backward(net: &MlpNetwork, input: &[f64], output_grad: &[f64]) -> Result<(ParamGrads, Vec<f64>)> {
    let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row shape");
    let cache = net.forward_cached(x.view())?;
    let g = Array2::from_shape_vec((1, output_grad.len()), output_grad.to_vec()).expect("row shape");
    let (grads, dx) = net.backward(&cache, g.view(), None)?;
    Ok((grads, dx.row(0).to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let net = MlpNetwork::zeros(&[4, 8, 2], Activation::Relu).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let mut net = MlpNetwork::zeros(&[3, 3], Activation::Relu).unwrap();
        net.layers[0].weights = Array2::eye(3);
        let x = [0.5, -1.5, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn dimension_mismatch() {
        let net = MlpNetwork::zeros(&[4, 2], Activation::Relu).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(mlp_backward(&net, &[0.0; 4], &[1.0]).is_err());
    }

    fn loss(net: &MlpNetwork, x: &[f64], w: &[f64]) -> f64 {
        net.forward(x).unwrap().iter().zip(w).map(|(a, b)| a * b).sum()
    }

    fn check_fd(activation: Activation, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = MlpNetwork::new(&[4, 8, 2], activation, &mut rng).unwrap();
        let x = [0.3, -0.8, 1.2, 0.05];
        let w = [1.3, -0.7];
        let (grads, dx) = mlp_backward(&net, &x, &w).unwrap();
        let analytic = grads.flatten();

        let h = 1e-6;
        let mut idx = 0;
        for l in 0..net.layers.len() {
            let n_w = net.layers[l].weights.len();
            for i in 0..n_w + net.layers[l].bias.len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                if i < n_w {
                    plus.layers[l].weights.as_slice_mut().unwrap()[i] += h;
                    minus.layers[l].weights.as_slice_mut().unwrap()[i] -= h;
                } else {
                    plus.layers[l].bias[i - n_w] += h;
                    minus.layers[l].bias[i - n_w] -= h;
                }
                let fd = (loss(&plus, &x, &w) - loss(&minus, &x, &w)) / (2.0 * h);
                let a = analytic[idx];
                let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
                assert!(rel < tol || (fd - a).abs() < 1e-10, "param {idx}: fd={fd} analytic={a}");
                idx += 1;
            }
        }
        for j in 0..x.len() {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (loss(&net, &xp, &w) - loss(&net, &xm, &w)) / (2.0 * h);
            assert!((fd - dx[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        check_fd(Activation::Relu, 1e-6);
        check_fd(Activation::Sigmoid, 1e-6);
    }
}
