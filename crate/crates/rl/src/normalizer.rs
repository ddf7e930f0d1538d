//! Running mean/variance observation normalizer.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

const CLIP: f64 = 10.0;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub count: u64,
    pub mean: DVector<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: DVector<f64>,
}

impl ObsNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Welford update, one sample at a time in the given order.
    pub fn update(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let n = self.count as f64;
        let delta = x - &self.mean;
        self.mean += &delta / n;
        let delta2 = x - &self.mean;
        self.m2 += delta.component_mul(&delta2);
    }

    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2 {
            DVector::from_element(self.dim(), 1.0)
        } else {
            &self.m2 / self.count as f64
        }
    }

    /// `(x − mean) / √(var + ε)`, clipped to ±10.
    pub fn normalize(&self, x: &DVector<f64>) -> DVector<f64> {
        let var = self.variance();
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.mean.iter())
                .zip(var.iter())
                .map(|((v, m), s2)| ((v - m) / (s2 + EPS).sqrt()).clamp(-CLIP, CLIP)),
        )
    }
}
