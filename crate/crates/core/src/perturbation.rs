//! Dependence of the first eigenvalue on the length of one edge.
//!
//! Finite differences solve all perturbed problems with the same number of
//! elements on every edge, so each λ(δ) comes from the same discrete family
//! and mesh effects cancel in the quotients. With fixed counts the closed
//! formula is also the exact derivative of the discrete eigenvalue.

use serde::Serialize;
use thiserror::Error;

use crate::discretize::{self, edge_energy_p, edge_lp_norm_p, DiscreteFunction, DiscretizeError};
use crate::eigensolver::{solve_with_counts, Eigenpair, SolverError, SolverOptions};
use crate::graph::{GraphError, MetricGraph};
use crate::ptrig::PValue;

/// Tolerance on `∫|u|^p = 1` accepted by the closed formula.
pub const NORMALIZATION_TOL: f64 = 1e-8;

/// Relative agreement required between the formula and the central
/// difference in the simple case.
pub const AGREEMENT_TOL: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error("edge {edge} would get length {length}")]
    NonPositiveLength { edge: String, length: f64 },
    #[error("eigenfunction is not normalized: ∫|u|^p = {0}")]
    Unnormalized(f64),
    #[error("delta must be positive and finite, got {0}")]
    InvalidDelta(f64),
}

impl PerturbError {
    pub fn code(&self) -> &'static str {
        match self {
            PerturbError::Graph(e) => e.code(),
            PerturbError::Solver(e) => e.code(),
            PerturbError::Discretize(_) => "discretization",
            PerturbError::NonPositiveLength { .. } => "non_positive_length",
            PerturbError::Unnormalized(_) => "unnormalized",
            PerturbError::InvalidDelta(_) => "invalid_delta",
        }
    }
}

/// Copy of `graph` with edge `edge` lengthened by `delta`.
pub fn perturb_edge_length(graph: &MetricGraph, edge: &str, delta: f64) -> Result<MetricGraph, PerturbError> {
    let k = graph.edge_index(edge)?;
    let length = graph.edge(k).length + delta;
    if !(length > 0.0 && length.is_finite()) {
        return Err(PerturbError::NonPositiveLength {
            edge: edge.to_string(),
            length,
        });
    }
    Ok(graph.with_edge_length(k, length)?)
}

/// `-(p-1)/ℓ ∫_e |u'|^p - λ/ℓ ∫_e |u|^p` for a unit-norm eigenfunction.
pub fn shape_derivative_formula(pair: &Eigenpair, edge: &str, p: PValue) -> Result<f64, PerturbError> {
    derivative_of(&pair.eigenfunction, pair.lambda, edge, p)
}

fn derivative_of(u: &DiscreteFunction, lambda: f64, edge: &str, p: PValue) -> Result<f64, PerturbError> {
    let graph = u.mesh().graph();
    let k = graph.edge_index(edge)?;
    let norm = discretize::lp_norm_p(u, p);
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(PerturbError::Unnormalized(norm));
    }
    let len = graph.edge(k).length;
    let energy = edge_energy_p(u, p, k);
    let mass = edge_lp_norm_p(u, p, k);
    Ok(-p.ratio() / len * energy - lambda / len * mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Central,
}

/// Element counts shared by every problem in a finite-difference stencil of
/// half-width `delta` on edge `k`: the perturbed edge is subdivided as if it
/// had its longest length.
pub fn matched_counts(graph: &MetricGraph, k: usize, delta: f64, h_target: f64) -> Result<Vec<usize>, PerturbError> {
    let mut counts = discretize::element_counts(graph, h_target)?;
    let widest = graph.with_edge_length(k, graph.edge(k).length + delta.abs())?;
    counts[k] = discretize::element_counts(&widest, h_target)?[k];
    Ok(counts)
}

fn lambda_at(graph: &MetricGraph, edge: &str, p: PValue, delta: f64, counts: &[usize], opts: &SolverOptions) -> Result<f64, PerturbError> {
    let g = perturb_edge_length(graph, edge, delta)?;
    Ok(solve_with_counts(&g, p, counts, opts)?.lambda)
}

fn check_delta(delta: f64) -> Result<(), PerturbError> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(PerturbError::InvalidDelta(delta))
    }
}

/// One-sided or central difference quotient of λ in the length of `edge`.
pub fn finite_difference_derivative(
    graph: &MetricGraph,
    edge: &str,
    p: PValue,
    delta: f64,
    side: Side,
    opts: &SolverOptions,
) -> Result<f64, PerturbError> {
    check_delta(delta)?;
    let k = graph.edge_index(edge)?;
    let counts = matched_counts(graph, k, delta, opts.h_target)?;
    let at = |d: f64| lambda_at(graph, edge, p, d, &counts, opts);
    Ok(match side {
        Side::Right => {
            let (a, b) = rayon::join(|| at(delta), || at(0.0));
            (a? - b?) / delta
        }
        Side::Left => {
            let (a, b) = rayon::join(|| at(0.0), || at(-delta));
            (a? - b?) / delta
        }
        Side::Central => {
            let (a, b) = rayon::join(|| at(delta), || at(-delta));
            (a? - b?) / (2.0 * delta)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationResult {
    pub edge: String,
    pub p: PValue,
    pub delta: f64,
    pub lambda: f64,
    /// Formula evaluated at the returned eigenfunction.
    pub formula: f64,
    /// Smallest and largest formula value over the independent
    /// eigenfunctions found; they predict the right and left derivatives.
    pub formula_min: f64,
    pub formula_max: f64,
    pub right_fd: f64,
    pub left_fd: f64,
    pub central_fd: f64,
    pub simple: bool,
    /// `|formula - central| ≤ AGREEMENT_TOL · |formula|`.
    pub agreement: bool,
    /// Left and right differences disagree beyond the tolerance.
    pub splitting: bool,
    /// `left_fd - right_fd`.
    pub gap: f64,
}

/// Formula and all three difference quotients for edge `edge`; `delta`
/// defaults to `1e-3 · ℓ_e`.
pub fn derivative_report(
    graph: &MetricGraph,
    edge: &str,
    p: PValue,
    delta: Option<f64>,
    opts: &SolverOptions,
) -> Result<PerturbationResult, PerturbError> {
    let k = graph.edge_index(edge)?;
    let delta = delta.unwrap_or(1e-3 * graph.edge(k).length);
    check_delta(delta)?;
    perturb_edge_length(graph, edge, -delta)?;
    let counts = matched_counts(graph, k, delta, opts.h_target)?;
    let (base, (plus, minus)) = rayon::join(
        || solve_with_counts(graph, p, &counts, opts),
        || {
            rayon::join(
                || lambda_at(graph, edge, p, delta, &counts, opts),
                || lambda_at(graph, edge, p, -delta, &counts, opts),
            )
        },
    );
    let base = base?;
    let (plus, minus) = (plus?, minus?);
    let formula = shape_derivative_formula(&base, edge, p)?;
    let per_component = base
        .components
        .iter()
        .map(|u| derivative_of(u, base.lambda, edge, p))
        .collect::<Result<Vec<f64>, _>>()?;
    let formula_min = per_component.iter().copied().fold(f64::INFINITY, f64::min);
    let formula_max = per_component.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let right_fd = (plus - base.lambda) / delta;
    let left_fd = (base.lambda - minus) / delta;
    let central_fd = (plus - minus) / (2.0 * delta);
    let scale = formula_min.abs().max(formula_max.abs()).max(base.lambda / graph.edge(k).length);
    let gap = left_fd - right_fd;
    Ok(PerturbationResult {
        edge: edge.to_string(),
        p,
        delta,
        lambda: base.lambda,
        formula,
        formula_min,
        formula_max,
        right_fd,
        left_fd,
        central_fd,
        simple: base.components.len() == 1,
        agreement: (formula - central_fd).abs() <= AGREEMENT_TOL * formula.abs().max(f64::MIN_POSITIVE),
        splitting: gap > AGREEMENT_TOL * scale,
        gap,
    })
}
