//! Cost-to-go oracles for single molecules.
//!
//! The search only needs a nonnegative scalar per molecule. Three flavours
//! are provided: the zero oracle (a universal lower bound), a lookup table,
//! and a small learned network over externally supplied feature vectors.

mod model;
mod train;

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::domains::HashedFeaturizer;

pub use model::{Activation, LearnedModel, ModelFile};
pub use train::{
    loss_con, loss_reg, objective, objective_and_gradient, train, RouteTuple, TrainConfig, TrainedModel,
    TupleCandidate,
};

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("feature vector has {found} entries, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("candidate index {index} out of range ({len} candidates)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("candidate index {0} is the best reaction")]
    BestCandidate(usize),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid value {value} for {key}")]
    InvalidValue { key: String, value: f64 },
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Anything that maps a molecule id to a nonnegative cost estimate.
pub trait ValueEstimator: Send + Sync {
    fn estimate(&self, molecule: &str) -> f64;
}

impl<F> ValueEstimator for F
where
    F: Fn(&str) -> f64 + Send + Sync,
{
    fn estimate(&self, molecule: &str) -> f64 {
        self(molecule)
    }
}

/// A learned model bound to the featurizer used at training time.
#[derive(Clone, Debug)]
pub struct LearnedOracle {
    pub model: LearnedModel,
    pub featurizer: HashedFeaturizer,
    /// Explicit feature vectors that take precedence over hashing.
    pub overrides: HashMap<String, Vec<f64>>,
}

impl LearnedOracle {
    pub fn new(model: LearnedModel) -> Self {
        let featurizer = HashedFeaturizer::new(model.input_dim());
        Self {
            model,
            featurizer,
            overrides: HashMap::new(),
        }
    }

    pub fn with_overrides(mut self, overrides: HashMap<String, Vec<f64>>) -> Result<Self, ValueError> {
        for v in overrides.values() {
            if v.len() != self.model.input_dim() {
                return Err(ValueError::DimensionMismatch {
                    expected: self.model.input_dim(),
                    found: v.len(),
                });
            }
        }
        self.overrides = overrides;
        Ok(self)
    }

    fn features(&self, molecule: &str) -> Vec<f64> {
        match self.overrides.get(molecule) {
            Some(v) => v.clone(),
            None => self.featurizer.features(molecule),
        }
    }
}

#[derive(Clone, Debug)]
pub enum ValueOracle {
    /// Always 0.
    Zero,
    /// Per-id lookup; unknown ids fall back to 0.
    Table(HashMap<String, f64>),
    Learned(Box<LearnedOracle>),
}

impl ValueOracle {
    pub fn table(entries: HashMap<String, f64>) -> Result<Self, ValueError> {
        for (k, &v) in &entries {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ValueError::InvalidValue {
                    key: k.clone(),
                    value: v,
                });
            }
        }
        Ok(Self::Table(entries))
    }

    pub fn learned(model: LearnedModel) -> Self {
        Self::Learned(Box::new(LearnedOracle::new(model)))
    }

    /// Reads a JSON object mapping ids to values.
    pub fn load_table(path: &Path) -> Result<Self, ValueError> {
        let text = std::fs::read_to_string(path)?;
        let entries: HashMap<String, f64> = serde_json::from_str(&text)?;
        Self::table(entries)
    }

    pub fn load_model(path: &Path) -> Result<Self, ValueError> {
        Ok(Self::learned(LearnedModel::load(path)?))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ValueOracle::Zero => "zero",
            ValueOracle::Table(_) => "table",
            ValueOracle::Learned(_) => "learned",
        }
    }

    pub fn evaluate_id(&self, molecule: &str) -> f64 {
        match self {
            ValueOracle::Zero => 0.0,
            ValueOracle::Table(t) => t.get(molecule).copied().unwrap_or(0.0),
            ValueOracle::Learned(l) => l.model.predict(&l.features(molecule)),
        }
    }

    /// Evaluates a raw feature vector. Only meaningful for learned oracles;
    /// the other kinds ignore their input.
    pub fn evaluate_features(&self, features: &[f64]) -> Result<f64, ValueError> {
        match self {
            ValueOracle::Zero | ValueOracle::Table(_) => Ok(0.0),
            ValueOracle::Learned(l) => l.model.try_predict(features),
        }
    }
}

impl ValueEstimator for ValueOracle {
    fn estimate(&self, molecule: &str) -> f64 {
        self.evaluate_id(molecule)
    }
}
