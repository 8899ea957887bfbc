//! Offline fitting of the learned oracle from extracted routes.
//!
//! Each training tuple carries the target's features, its best route cost
//! `v`, and every one-step candidate for the target. The objective mixes a
//! squared-error fit of `V(target)` against `v` with a hinge term that asks
//! every non-best candidate to look at least `epsilon` more expensive than
//! `v`:
//!
//! ```text
//! L_reg = (V(m) - v)^2
//! L_con(j) = max(0, v + epsilon - c_j - sum_{m' in S_j} V(m'))
//! J = mean_i [ L_reg + lambda * mean_{j != best} L_con(j) ]
//! ```

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::LearnedModel;
use super::ValueError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TupleCandidate {
    pub cost: f64,
    pub reactant_features: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteTuple {
    pub target_features: Vec<f64>,
    pub v: f64,
    pub best_reaction: usize,
    pub candidates: Vec<TupleCandidate>,
}

impl RouteTuple {
    fn check(&self, dim: usize) -> Result<(), ValueError> {
        let mismatch = |found| ValueError::DimensionMismatch { expected: dim, found };
        if self.target_features.len() != dim {
            return Err(mismatch(self.target_features.len()));
        }
        if self.best_reaction >= self.candidates.len() {
            return Err(ValueError::IndexOutOfRange {
                index: self.best_reaction,
                len: self.candidates.len(),
            });
        }
        for c in &self.candidates {
            if let Some(bad) = c.reactant_features.iter().find(|f| f.len() != dim) {
                return Err(mismatch(bad.len()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Hinge margin; must be positive.
    pub epsilon: f64,
    /// Weight of the consistency term.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            lambda: 1.0,
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            hidden_dim: 128,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ValueError> {
        let bad = |m: &str| Err(ValueError::InvalidConfig(m.into()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return bad("batch_size and hidden_dim must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: LearnedModel,
    /// Mean objective over the full dataset before training.
    pub initial_objective: f64,
    /// Mean objective after each epoch.
    pub history: Vec<f64>,
}

impl TrainedModel {
    pub fn final_objective(&self) -> f64 {
        self.history.last().copied().unwrap_or(self.initial_objective)
    }
}

/// Squared error of the model's prediction for the tuple's target.
pub fn loss_reg(model: &LearnedModel, tuple: &RouteTuple) -> f64 {
    let d = model.predict(&tuple.target_features) - tuple.v;
    d * d
}

/// Hinge consistency loss for candidate `j`.
pub fn loss_con(model: &LearnedModel, tuple: &RouteTuple, j: usize, epsilon: f64) -> Result<f64, ValueError> {
    let cand = tuple.candidates.get(j).ok_or(ValueError::IndexOutOfRange {
        index: j,
        len: tuple.candidates.len(),
    })?;
    if j == tuple.best_reaction {
        return Err(ValueError::BestCandidate(j));
    }
    let sum_v: f64 = cand.reactant_features.iter().map(|f| model.predict(f)).sum();
    Ok(hinge(tuple.v, epsilon, cand.cost, sum_v))
}

pub(crate) fn hinge(v: f64, epsilon: f64, cost: f64, sum_v: f64) -> f64 {
    (v + epsilon - cost - sum_v).max(0.0)
}

/// Per-tuple objective and, if `grad` is given, its gradient accumulated
/// with weight `scale`.
fn tuple_objective(
    model: &LearnedModel,
    tuple: &RouteTuple,
    config: &TrainConfig,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let target = model.forward(&tuple.target_features);
    let diff = target.output - tuple.v;
    let mut total = diff * diff;

    let n_alt = tuple.candidates.len().saturating_sub(1);
    let mut active: Vec<usize> = Vec::new();
    if n_alt > 0 && config.lambda > 0.0 {
        let mut con = 0.0;
        for (j, cand) in tuple.candidates.iter().enumerate() {
            if j == tuple.best_reaction {
                continue;
            }
            let sum_v: f64 = cand.reactant_features.iter().map(|f| model.predict(f)).sum();
            let h = hinge(tuple.v, config.epsilon, cand.cost, sum_v);
            if h > 0.0 {
                active.push(j);
            }
            con += h;
        }
        total += config.lambda * con / n_alt as f64;
    }

    if let Some(grad) = grad {
        model.backward(&tuple.target_features, &target, scale * 2.0 * diff, grad);
        let d_hinge = -scale * config.lambda / n_alt.max(1) as f64;
        for j in active {
            for f in &tuple.candidates[j].reactant_features {
                let trace = model.forward(f);
                model.backward(f, &trace, d_hinge, grad);
            }
        }
    }
    total
}

fn check_dataset(dataset: &[RouteTuple], dim: usize) -> Result<(), ValueError> {
    if dataset.is_empty() {
        return Err(ValueError::EmptyDataset);
    }
    dataset.iter().try_for_each(|t| t.check(dim))
}

/// Mean objective over `dataset`.
pub fn objective(
    model: &LearnedModel,
    dataset: &[RouteTuple],
    config: &TrainConfig,
) -> Result<f64, ValueError> {
    check_dataset(dataset, model.input_dim())?;
    let sum: f64 = dataset
        .iter()
        .map(|t| tuple_objective(model, t, config, 0.0, None))
        .sum();
    Ok(sum / dataset.len() as f64)
}

/// Mean objective and its gradient with respect to
/// [`LearnedModel::params`].
pub fn objective_and_gradient(
    model: &LearnedModel,
    dataset: &[RouteTuple],
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>), ValueError> {
    check_dataset(dataset, model.input_dim())?;
    let mut grad = vec![0.0; model.param_count()];
    let scale = 1.0 / dataset.len() as f64;
    let sum: f64 = dataset
        .iter()
        .map(|t| tuple_objective(model, t, config, scale, Some(&mut grad)))
        .sum();
    Ok((sum * scale, grad))
}

/// Minibatch gradient descent with a fixed step size.
pub fn train(dataset: &[RouteTuple], config: &TrainConfig) -> Result<TrainedModel, ValueError> {
    config.validate()?;
    let dim = dataset
        .first()
        .ok_or(ValueError::EmptyDataset)?
        .target_features
        .len();
    check_dataset(dataset, dim)?;
    if dim == 0 {
        return Err(ValueError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }

    let mut model = LearnedModel::new(dim, config.hidden_dim, config.rng_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(1));
    let initial_objective = objective(&model, dataset, config)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut params = model.params();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; params.len()];
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                tuple_objective(&model, &dataset[i], config, scale, Some(&mut grad));
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * g;
            }
            model.set_params(&params);
        }
        let obj = objective(&model, dataset, config)?;
        log::debug!("epoch {epoch}: objective {obj:.6}");
        history.push(obj);
    }

    Ok(TrainedModel {
        model,
        initial_objective,
        history,
    })
}
