use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ValueError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// One hidden layer, tanh, then a softplus output so predictions stay
/// nonnegative.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedModel {
    input_dim: usize,
    hidden_dim: usize,
    /// hidden_dim x input_dim, row-major.
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: f64,
}

/// On-disk layout of a [`LearnedModel`].
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    /// Output transform id; only "softplus" is defined.
    pub transform: String,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of one forward pass, kept for backprop.
pub(crate) struct Trace {
    pub hidden: Vec<f64>,
    pub z_out: f64,
    pub output: f64,
}

impl LearnedModel {
    /// Glorot-uniform initialisation from a seed.
    pub fn new(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        assert!(
            input_dim > 0 && hidden_dim > 0,
            "model dimensions must be positive"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let a2 = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let w1 = (0..input_dim * hidden_dim)
            .map(|_| rng.gen_range(-a1..a1))
            .collect();
        let w2 = (0..hidden_dim).map(|_| rng.gen_range(-a2..a2)).collect();
        Self {
            input_dim,
            hidden_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flattened parameters: w1, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let (w1, rest) = p.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut pre = self.b1.clone();
        // features are mostly sparse 0/1 fingerprints
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (h, p) in pre.iter_mut().enumerate() {
                *p += self.w1[h * self.input_dim + i] * xi;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|z| z.tanh()).collect();
        let z_out = self.b2 + hidden.iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>();
        Trace {
            hidden,
            z_out,
            output: softplus(z_out),
        }
    }

    /// Accumulates `d_out * dV/dθ` into `grad` (same layout as `params`).
    pub(crate) fn backward(&self, x: &[f64], trace: &Trace, d_out: f64, grad: &mut [f64]) {
        if d_out == 0.0 {
            return;
        }
        let dz = d_out * sigmoid(trace.z_out);
        let off_b1 = self.w1.len();
        let off_w2 = off_b1 + self.hidden_dim;
        let off_b2 = off_w2 + self.hidden_dim;
        grad[off_b2] += dz;
        for h in 0..self.hidden_dim {
            let th = trace.hidden[h];
            grad[off_w2 + h] += dz * th;
            let dpre = dz * self.w2[h] * (1.0 - th * th);
            grad[off_b1 + h] += dpre;
            if dpre == 0.0 {
                continue;
            }
            let row = h * self.input_dim;
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    grad[row + i] += dpre * xi;
                }
            }
        }
    }

    /// Prediction for a vector of the right width. Panics in debug builds on
    /// a width mismatch; use [`try_predict`](Self::try_predict) for unchecked
    /// input.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).output
    }

    pub fn try_predict(&self, x: &[f64]) -> Result<f64, ValueError> {
        if x.len() != self.input_dim {
            return Err(ValueError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self.predict(x))
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            activation: Activation::Tanh,
            transform: "softplus".into(),
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self, ValueError> {
        let bad = |m: String| Err(ValueError::InvalidModel(m));
        if file.input_dim == 0 || file.hidden_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if file.transform != "softplus" {
            return bad(format!("unknown transform {:?}", file.transform));
        }
        if file.w1.len() != file.input_dim * file.hidden_dim {
            return bad(format!(
                "w1 has {} entries, expected {}",
                file.w1.len(),
                file.input_dim * file.hidden_dim
            ));
        }
        if file.b1.len() != file.hidden_dim || file.w2.len() != file.hidden_dim {
            return bad("b1/w2 must have hidden_dim entries".into());
        }
        let finite = file
            .w1
            .iter()
            .chain(&file.b1)
            .chain(&file.w2)
            .chain(std::iter::once(&file.b2))
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite weight".into());
        }
        Ok(Self {
            input_dim: file.input_dim,
            hidden_dim: file.hidden_dim,
            w1: file.w1,
            b1: file.b1,
            w2: file.w2,
            b2: file.b2,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ValueError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ValueError> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn file_round_trip_and_shape_check() {
        let m = LearnedModel::new(5, 3, 1);
        let back = LearnedModel::from_file(m.to_file()).unwrap();
        assert_eq!(back, m);

        let mut f = m.to_file();
        f.w1.pop();
        assert!(matches!(
            LearnedModel::from_file(f),
            Err(ValueError::InvalidModel(_))
        ));
        let mut f = m.to_file();
        f.transform = "relu".into();
        assert!(LearnedModel::from_file(f).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    proptest! {
        #[test]
        fn output_nonnegative_and_finite(
            seed in 0u64..1000,
            x in proptest::collection::vec(-50.0f64..50.0, 6),
        ) {
            let m = LearnedModel::new(6, 4, seed);
            let y = m.predict(&x);
            prop_assert!(y.is_finite());
            prop_assert!(y >= 0.0);
        }
    }
}
