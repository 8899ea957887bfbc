//! Solved plans.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domains::{DomainError, PlanningInstance};

/// One reaction in a route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteStep {
    pub product: String,
    pub reaction: String,
    pub cost: f64,
    pub reactants: Vec<String>,
}

/// A tree of reactions grounded in available molecules.
///
/// Steps are stored in pre-order: the first step produces the target, and the
/// steps for each reactant follow in reactant order. Available reactants have
/// no step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub target: String,
    pub steps: Vec<RouteStep>,
    pub total_cost: f64,
}

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("route ended before molecule {0} was resolved")]
    Truncated(String),
    #[error("step {index} produces {found}, expected {expected}")]
    WrongProduct {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("reaction {reaction} is not a proposal of the model for {product}")]
    UnknownReaction { product: String, reaction: String },
    #[error("{0} trailing steps not reachable from the target")]
    Trailing(usize),
    #[error("stored total cost {stored} differs from step sum {summed}")]
    CostMismatch { stored: f64, summed: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl Route {
    /// The empty route for an available target.
    pub fn empty(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            steps: Vec::new(),
            total_cost: 0.0,
        }
    }

    pub fn from_steps(target: impl Into<String>, steps: Vec<RouteStep>) -> Self {
        let total_cost = steps.iter().map(|s| s.cost).sum();
        Self {
            target: target.into(),
            steps,
            total_cost,
        }
    }

    /// Number of reactions.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn reactions(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.reaction.as_str())
    }

    /// Checks that every leaf is available and every step is a real proposal
    /// of the instance's expansion model.
    pub fn validate(&self, instance: &PlanningInstance) -> Result<(), RouteError> {
        let mut cursor = 0;
        self.validate_from(&self.target, instance, &mut cursor)?;
        if cursor != self.steps.len() {
            return Err(RouteError::Trailing(self.steps.len() - cursor));
        }
        let summed: f64 = self.steps.iter().map(|s| s.cost).sum();
        if (summed - self.total_cost).abs() > 1e-9 * summed.abs().max(1.0) {
            return Err(RouteError::CostMismatch {
                stored: self.total_cost,
                summed,
            });
        }
        Ok(())
    }

    fn validate_from(
        &self,
        molecule: &str,
        instance: &PlanningInstance,
        cursor: &mut usize,
    ) -> Result<(), RouteError> {
        if instance.is_available(molecule) {
            return Ok(());
        }
        let step = self
            .steps
            .get(*cursor)
            .ok_or_else(|| RouteError::Truncated(molecule.to_string()))?;
        if step.product != molecule {
            return Err(RouteError::WrongProduct {
                index: *cursor,
                expected: molecule.to_string(),
                found: step.product.clone(),
            });
        }
        let proposals = instance.expand(molecule)?;
        let known = proposals
            .proposals
            .iter()
            .any(|p| p.reaction == step.reaction && p.reactants == step.reactants && p.cost == step.cost);
        if !known {
            return Err(RouteError::UnknownReaction {
                product: molecule.to_string(),
                reaction: step.reaction.clone(),
            });
        }
        *cursor += 1;
        for reactant in &step.reactants {
            self.validate_from(reactant, instance, cursor)?;
        }
        Ok(())
    }

    /// Multi-line indented rendering, one reaction per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut cursor = 0;
        self.render_from(&self.target, 0, &mut cursor, &mut out);
        out
    }

    fn render_from(&self, molecule: &str, depth: usize, cursor: &mut usize, out: &mut String) {
        let indent = "  ".repeat(depth);
        match self.steps.get(*cursor) {
            Some(step) if step.product == molecule => {
                *cursor += 1;
                out.push_str(&format!(
                    "{indent}{molecule} <= {} (cost {:.4}) [{}]\n",
                    step.reaction,
                    step.cost,
                    step.reactants.join(", ")
                ));
                for r in &step.reactants {
                    self.render_from(r, depth + 1, cursor, out);
                }
            }
            _ => out.push_str(&format!("{indent}{molecule} (available)\n")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::fixtures::{chain_instance, two_route_instance};

    fn step(product: &str, reaction: &str, cost: f64, reactants: &[&str]) -> RouteStep {
        RouteStep {
            product: product.into(),
            reaction: reaction.into(),
            cost,
            reactants: reactants.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn valid_chain_route() {
        let inst = chain_instance();
        let route = Route::from_steps(
            "a",
            vec![step("a", "Ra", 1.0, &["b"]), step("b", "Rb", 1.0, &["c"])],
        );
        route.validate(&inst).unwrap();
        assert_eq!(route.len(), 2);
        assert_eq!(route.total_cost, 2.0);
    }

    #[test]
    fn rejects_made_up_reaction() {
        let inst = two_route_instance();
        let route = Route::from_steps("t", vec![step("t", "R9", 0.1, &["a"])]);
        assert!(matches!(
            route.validate(&inst),
            Err(RouteError::UnknownReaction { .. })
        ));
    }

    #[test]
    fn rejects_unresolved_leaf() {
        let inst = chain_instance();
        let route = Route::from_steps("a", vec![step("a", "Ra", 1.0, &["b"])]);
        assert!(matches!(route.validate(&inst), Err(RouteError::Truncated(_))));
    }

    #[test]
    fn render_marks_leaves() {
        let route = Route::from_steps("t", vec![step("t", "R1", 1.0, &["a"])]);
        let text = route.render();
        assert!(text.contains("t <= R1"));
        assert!(text.contains("  a (available)"));
    }
}
