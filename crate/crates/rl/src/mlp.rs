//! Fully connected network with tanh hidden layers and a linear output,
//! evaluated on batches stored column-wise (`features × batch`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `[input, hidden…, output]`
    pub sizes: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l + 1` (`sizes[l+1] × sizes[l]`).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    acts: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(RlError::Config(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: sizes[1..].iter().map(|&n| DVector::zeros(n)).collect(),
        })
    }

    /// Gaussian weights with variance `1 / fan_in` (times `out_gain²` on
    /// the last layer), zero biases.
    pub fn init<R: Rng>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.weights.len();
        for (l, w) in net.weights.iter_mut().enumerate() {
            let gain = if l + 1 == layers { out_gain } else { 1.0 };
            let scale = gain / (w.ncols() as f64).sqrt();
            for v in w.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = z * scale;
            }
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Batched forward pass; `x` is `input × batch`.
    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.clone());
        for l in 0..layers {
            let mut z = &self.weights[l] * &acts[l];
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            if l + 1 < layers {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        (acts[layers].clone(), MlpCache { acts })
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, x: &DVector<f64>) -> DVector<f64> {
        let layers = self.weights.len();
        let mut a = x.clone();
        for l in 0..layers {
            let mut z = &self.weights[l] * &a + &self.biases[l];
            if l + 1 < layers {
                z.apply(|v| *v = v.tanh());
            }
            a = z;
        }
        a
    }

    /// Gradient of a scalar loss with respect to all parameters, given
    /// `d_out = ∂loss/∂output` (`output × batch`).
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> Mlp {
        let layers = self.weights.len();
        let mut grad = Mlp {
            sizes: self.sizes.clone(),
            weights: Vec::with_capacity(layers),
            biases: Vec::with_capacity(layers),
        };
        let mut delta = d_out.clone();
        let mut gw = Vec::with_capacity(layers);
        let mut gb = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            gw.push(&delta * cache.acts[l].transpose());
            gb.push(DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum())));
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                back.zip_apply(&cache.acts[l], |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        grad.weights = gw;
        grad.biases = gb;
        grad
    }

    /// Parameters in layer order, each weight matrix column-major then its
    /// bias.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
    }

    /// Reads parameters in [`Mlp::flatten_into`] order; returns the count used.
    pub fn load_from(&mut self, src: &[f64]) -> Result<usize> {
        let need = self.num_params();
        if src.len() < need {
            return Err(RlError::Shape(format!("need {need} parameters, got {}", src.len())));
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = src[k];
                k += 1;
            }
        }
        Ok(k)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Checks that the stored matrices agree with `sizes`.
    pub fn validate(&self) -> Result<()> {
        let ok = self.sizes.len() >= 2
            && self.weights.len() + 1 == self.sizes.len()
            && self.biases.len() + 1 == self.sizes.len()
            && self.sizes.windows(2).enumerate().all(|(l, s)| {
                self.weights[l].shape() == (s[1], s[0]) && self.biases[l].len() == s[1]
            });
        if ok {
            Ok(())
        } else {
            Err(RlError::Shape(format!("layer matrices do not match sizes {:?}", self.sizes)))
        }
    }
}
