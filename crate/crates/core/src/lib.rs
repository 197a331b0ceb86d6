//! First eigenpair of the p-Laplacian on compact metric graphs with
//! Dirichlet conditions on a vertex set, plus closed-form bounds, shape
//! derivatives and the p → ∞ and p → 1 limits.

pub(crate) mod condense;
pub mod bounds;
pub mod cli;
pub mod discretize;
pub mod eigensolver;
pub mod graph;
pub mod limits;
pub mod perturbation;
pub mod ptrig;
