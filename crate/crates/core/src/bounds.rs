//! Closed-form bounds on the first eigenvalue in terms of the total length
//! and the number of edges.

use serde::Serialize;

use crate::eigensolver::Eigenpair;
use crate::graph::MetricGraph;
use crate::ptrig::{pi_p, PValue};

/// Relative slack allowed around the bounds for a discrete eigenvalue.
pub const BOUND_SLACK: f64 = 1e-3;

/// `(π_p / (2ℓ))^p (p-1)`, attained by a single edge with one Dirichlet end.
pub fn lower_bound(p: PValue, total_length: f64) -> f64 {
    (pi_p(p) / (2.0 * total_length)).powf(p.get()) * p.ratio()
}

/// `(n π_p / ℓ)^p (p-1)` for `n` edges, attained by a star of equal legs
/// with every vertex Dirichlet.
pub fn upper_bound(p: PValue, total_length: f64, edge_count: usize) -> f64 {
    (edge_count as f64 * pi_p(p) / total_length).powf(p.get()) * p.ratio()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub p: PValue,
    pub lower: f64,
    pub upper: f64,
    pub lambda: f64,
    /// `λ - lower`.
    pub lower_margin: f64,
    /// `upper - λ`.
    pub upper_margin: f64,
    pub tolerance: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub ordered: bool,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok && self.ordered
    }
}

/// Compares an eigenvalue with both bounds, allowing `BOUND_SLACK · λ`.
pub fn check_bounds(graph: &MetricGraph, p: PValue, pair: &Eigenpair) -> BoundReport {
    bound_report(graph, p, pair.lambda)
}

pub fn bound_report(graph: &MetricGraph, p: PValue, lambda: f64) -> BoundReport {
    let total = graph.total_length();
    let lower = lower_bound(p, total);
    let upper = upper_bound(p, total, graph.edge_count());
    let tolerance = BOUND_SLACK * lambda.abs();
    BoundReport {
        p,
        lower,
        upper,
        lambda,
        lower_margin: lambda - lower,
        upper_margin: upper - lambda,
        tolerance,
        lower_ok: lower - tolerance <= lambda,
        upper_ok: lambda <= upper + tolerance,
        ordered: lower <= upper,
    }
}
