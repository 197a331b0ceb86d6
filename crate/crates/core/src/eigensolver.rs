//! First eigenpair of the p-Laplacian by Rayleigh-quotient minimization.
//!
//! Pinned Dirichlet nodes split the discrete space into independent blocks:
//! the connected pieces of the graph cut open at its Dirichlet vertices. The
//! quotient of a function spread over several pieces is a weighted mean of
//! the per-piece quotients, so the first eigenvalue is the smallest piece
//! eigenvalue and every tied piece contributes an eigenfunction.
//!
//! Each piece is solved by projected gradient descent on the unit `L^p`
//! sphere with Barzilai–Borwein steps and non-monotone backtracking,
//! preconditioned by the lumped mass, and run on a cascade of meshes from
//! coarse to the requested size.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::condense::MeshMatrix;
use crate::discretize::{self, assemble, norm_over, DiscreteFunction, DiscretizeError, Element, Mesh, GAUSS_W, GAUSS_X};
use crate::graph::{GraphError, MetricGraph};
use crate::ptrig::PValue;

/// Supported range of p for the finite-p solver.
pub const P_MIN: f64 = 1.05;
pub const P_MAX: f64 = 64.0;

/// Relative gap below which two piece eigenvalues count as the same.
pub const TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("p = {0} is outside the solver range [{P_MIN}, {P_MAX}]")]
    POutOfRange(f64),
    #[error("the mesh has no free degrees of freedom")]
    NoFreeDofs,
    #[error("not converged after {} iterations (gradient norm {:e})", .0.iterations, .0.gradient_norm)]
    NotConverged(Box<Eigenpair>),
}

impl SolverError {
    pub fn code(&self) -> &'static str {
        match self {
            SolverError::Graph(e) => e.code(),
            SolverError::Discretize(_) => "discretization",
            SolverError::InvalidOptions(_) => "invalid_options",
            SolverError::POutOfRange(_) => "p_out_of_range",
            SolverError::NoFreeDofs => "no_free_dofs",
            SolverError::NotConverged(_) => "not_converged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions {
    pub h_target: f64,
    /// Defaults to `200 · dof` on the finest mesh.
    pub max_iterations: Option<usize>,
    pub lambda_tol: f64,
    pub gradient_tol: f64,
    pub seed: u64,
    pub enforce_nonnegative: bool,
}

impl SolverOptions {
    pub fn new(h_target: f64) -> Self {
        SolverOptions {
            h_target,
            max_iterations: None,
            lambda_tol: 1e-10,
            gradient_tol: 1e-8,
            seed: 0,
            enforce_nonnegative: true,
        }
    }

    /// Default options with `h = 1e-3 · (shortest edge)`.
    pub fn for_graph(graph: &MetricGraph) -> Self {
        SolverOptions::new(1e-3 * graph.min_edge_length())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tolerances(mut self, lambda_tol: f64, gradient_tol: f64) -> Self {
        self.lambda_tol = lambda_tol;
        self.gradient_tol = gradient_tol;
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |what: &str| Err(SolverError::InvalidOptions(what.to_string()));
        if !(self.h_target.is_finite() && self.h_target > 0.0) {
            return bad("h_target must be positive");
        }
        if !(self.lambda_tol.is_finite() && self.lambda_tol > 0.0) {
            return bad("lambda tolerance must be positive");
        }
        if !(self.gradient_tol.is_finite() && self.gradient_tol > 0.0) {
            return bad("gradient tolerance must be positive");
        }
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub p: PValue,
    pub lambda: f64,
    /// Normalized to `∫|u|^p = 1`.
    pub eigenfunction: DiscreteFunction,
    /// Unit-norm eigenfunctions of the pieces whose eigenvalues tie for the
    /// minimum; `eigenfunction` is a seed-dependent combination of them.
    pub components: Vec<DiscreteFunction>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub kirchhoff: BTreeMap<String, f64>,
    pub converged: bool,
}

impl Eigenpair {
    pub fn mesh(&self) -> &Arc<Mesh> {
        self.eigenfunction.mesh()
    }

    pub fn is_simple_candidate(&self) -> bool {
        self.components.len() == 1
    }
}

/// Solves for `λ_{1,p}` and a non-negative eigenfunction on a mesh of size
/// `opts.h_target`.
pub fn solve_first_eigenpair(graph: &MetricGraph, p: PValue, opts: &SolverOptions) -> Result<Eigenpair, SolverError> {
    opts.validate()?;
    let counts = discretize::element_counts(graph, opts.h_target)?;
    solve_with_counts(graph, p, &counts, opts)
}

/// Same as [`solve_first_eigenpair`] with prescribed element counts per edge.
pub fn solve_with_counts(
    graph: &MetricGraph,
    p: PValue,
    counts: &[usize],
    opts: &SolverOptions,
) -> Result<Eigenpair, SolverError> {
    opts.validate()?;
    graph.validate()?;
    if !(P_MIN..=P_MAX).contains(&p.get()) {
        return Err(SolverError::POutOfRange(p.get()));
    }
    let levels = cascade(counts);
    let fine = Arc::new(Mesh::with_counts(graph, counts, true)?);
    if fine.dof_count() == 0 {
        return Err(SolverError::NoFreeDofs);
    }
    let max_iterations = opts.max_iterations.unwrap_or(200 * fine.dof_count()).max(1);
    let pieces: Vec<Vec<usize>> = pieces(graph)
        .into_iter()
        .filter(|edges| has_free_dof(&fine, edges))
        .collect();

    let solved: Vec<PieceSolution> = pieces
        .iter()
        .enumerate()
        .map(|(i, edges)| solve_piece(graph, p, edges, &levels, opts, max_iterations, i as u64))
        .collect::<Result<_, _>>()?;

    let best = solved.iter().map(|s| s.lambda).fold(f64::INFINITY, f64::min);
    let tied: Vec<&PieceSolution> = solved
        .iter()
        .filter(|s| s.lambda <= best * (1.0 + TIE_TOLERANCE))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_cafe_f00d_0001);
    let weights: Vec<f64> = if tied.len() == 1 {
        vec![1.0]
    } else {
        tied.iter().map(|_| rng.gen_range(0.2..1.0)).collect()
    };
    let pv = p.get();
    let mut nodal = vec![0.0; fine.node_count()];
    let mut components = Vec::with_capacity(tied.len());
    for (s, &w) in tied.iter().zip(&weights) {
        for (acc, v) in nodal.iter_mut().zip(&s.values) {
            *acc += w * v;
        }
        components.push(DiscreteFunction::from_nodal(fine.clone(), s.values.clone())?);
    }
    let norm = norm_over(fine.elements(), &nodal, pv);
    let scale = norm.powf(-1.0 / pv);
    nodal.iter_mut().for_each(|v| *v *= scale);
    let eigenfunction = DiscreteFunction::from_nodal(fine.clone(), nodal)?;
    let lambda = discretize::rayleigh_quotient(&eigenfunction, p)?;
    let gradient = discretize::rayleigh_gradient(&eigenfunction, p)?;
    let gradient_norm = gradient.max_abs();
    let converged = solved.iter().all(|s| s.converged);
    let iterations = solved.iter().map(|s| s.iterations).sum();

    let mut pair = Eigenpair {
        p,
        lambda,
        eigenfunction,
        components,
        iterations,
        gradient_norm,
        kirchhoff: BTreeMap::new(),
        converged,
    };
    pair.kirchhoff = kirchhoff_residual(&pair);
    if converged {
        Ok(pair)
    } else {
        Err(SolverError::NotConverged(Box::new(pair)))
    }
}

/// Edge sets of the pieces left after cutting the graph at every Dirichlet
/// vertex: two edges belong together when they share a free vertex.
pub fn pieces(graph: &MetricGraph) -> Vec<Vec<usize>> {
    let m = graph.edge_count();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut first_at: Vec<Option<usize>> = vec![None; graph.vertex_count()];
    for (k, e) in graph.edges().iter().enumerate() {
        for v in [e.tail, e.head] {
            if graph.is_dirichlet(v) {
                continue;
            }
            match first_at[v] {
                None => first_at[v] = Some(k),
                Some(j) => {
                    let (a, b) = (find(&mut parent, j), find(&mut parent, k));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..m {
        let r = find(&mut parent, k);
        groups.entry(r).or_default().push(k);
    }
    groups.into_values().collect()
}

fn has_free_dof(mesh: &Mesh, edges: &[usize]) -> bool {
    edges.iter().any(|&k| {
        mesh.edge_meshes()[k]
            .nodes
            .iter()
            .any(|&n| !mesh.is_constrained(n))
    })
}

/// Meshes from coarse to fine, each roughly halving the previous element
/// counts, ending at `counts`.
fn cascade(counts: &[usize]) -> Vec<Vec<usize>> {
    let mut levels = vec![counts.to_vec()];
    loop {
        let last = levels.last().expect("non-empty");
        if last.iter().copied().max().unwrap_or(0) <= 16 {
            break;
        }
        let next: Vec<usize> = last
            .iter()
            .zip(counts)
            .map(|(&n, &fine)| n.div_ceil(2).max(fine.min(2)))
            .collect();
        if &next == last {
            break;
        }
        levels.push(next);
    }
    levels.reverse();
    levels
}

struct PieceSolution {
    lambda: f64,
    /// Nodal values on the finest mesh, unit `L^p` norm, zero off the piece.
    values: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn solve_piece(
    graph: &MetricGraph,
    p: PValue,
    edges: &[usize],
    levels: &[Vec<usize>],
    opts: &SolverOptions,
    max_iterations: usize,
    stream: u64,
) -> Result<PieceSolution, SolverError> {
    let pv = p.get();
    let dirichlet: Vec<(usize, f64)> = graph.dirichlet_vertices().into_iter().map(|v| (v, 0.0)).collect();
    let dist = graph.vertex_distances(&dirichlet);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    // smooth per-edge modulation, equal to 1 at both ends
    let amplitude: Vec<f64> = (0..graph.edge_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut previous: Option<DiscreteFunction> = None;
    let mut total_iterations = 0;
    let mut last = None;
    for (level, counts) in levels.iter().enumerate() {
        let mesh = Arc::new(Mesh::with_counts(graph, counts, true)?);
        let piece = Piece::new(&mesh, edges);
        let mut u: Vec<f64> = match &previous {
            None => (0..mesh.node_count())
                .map(|i| {
                    let loc = mesh.location(i);
                    let len = graph.edge(loc.edge).length;
                    let bump = (std::f64::consts::PI * loc.x / len).sin();
                    graph.distance_to_dirichlet(&loc, &dist) * (1.0 + 0.25 * amplitude[loc.edge] * bump)
                })
                .collect(),
            Some(coarse) => (0..mesh.node_count()).map(|i| coarse.eval(&mesh.location(i))).collect(),
        };
        for (v, &f) in u.iter_mut().zip(&piece.free) {
            if !f {
                *v = 0.0;
            }
        }
        let finest = level + 1 == levels.len();
        let (budget, lambda_tol, gradient_tol) = if finest {
            (max_iterations, opts.lambda_tol, opts.gradient_tol)
        } else {
            ((20 * piece.dofs()).max(500), opts.lambda_tol.max(1e-9), opts.gradient_tol.max(1e-6))
        };
        if previous.is_none() {
            // continuation from p = 2 where the quotient is badly conditioned
            for q in continuation_path(pv) {
                total_iterations += piece.minimize(&mut u, q, 1e-9, 1e-6, budget).iterations;
            }
        }
        let mut outcome = piece.minimize(&mut u, pv, lambda_tol, gradient_tol, budget);
        total_iterations += outcome.iterations;

        if finest && opts.enforce_nonnegative && changes_sign(&u) {
            for v in u.iter_mut() {
                *v = v.abs();
            }
            outcome = piece.minimize(&mut u, pv, lambda_tol, gradient_tol, budget);
            total_iterations += outcome.iterations;
        }
        // the piece minimizer has one sign; pick the positive representative
        if u.iter().sum::<f64>() < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        if finest && opts.enforce_nonnegative {
            let cut = 1e-12 * u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            for v in u.iter_mut() {
                if *v < 0.0 && *v > -cut {
                    *v = 0.0;
                }
            }
        }
        previous = Some(DiscreteFunction::from_nodal(mesh.clone(), u.clone())?);
        last = Some((outcome, u));
    }
    let (outcome, values) = last.expect("at least one level");
    Ok(PieceSolution {
        lambda: outcome.lambda,
        values,
        iterations: total_iterations,
        converged: outcome.converged,
    })
}

/// Intermediate exponents leading from 2 towards a target below 1.5.
fn continuation_path(p: f64) -> Vec<f64> {
    let mut path = Vec::new();
    if p < 1.5 {
        let mut q = 1.0;
        while q * 0.7 > p - 1.0 {
            path.push(1.0 + q);
            q *= 0.7;
        }
    }
    path
}

fn changes_sign(u: &[f64]) -> bool {
    let max = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    changes_sign_with(u, 1e-8 * max)
}

struct Outcome {
    lambda: f64,
    iterations: usize,
    converged: bool,
}

struct Evaluation {
    lambda: f64,
    gradient: Vec<f64>,
    grad_max: f64,
}

/// Relative decrease of the quotient indistinguishable from rounding.
const WORKING_PRECISION: f64 = 1024.0 * f64::EPSILON;

/// Consecutive iterations without a decrease above [`WORKING_PRECISION`]
/// after which the quotient counts as minimized to working precision.
const STAGNATION_WINDOW: usize = 64;

/// `|t|^(p-2)`, floored away from zero when `p < 2`.
fn weight(t: f64, p: f64, floor: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if p > 2.0 {
        t.abs().powf(p - 2.0)
    } else {
        t.abs().max(floor).powf(p - 2.0)
    }
}

/// One block of the discrete problem: the elements of a piece and its free
/// nodes on a given mesh.
struct Piece<'a> {
    mesh: &'a Mesh,
    edges: &'a [usize],
    /// Global element indices.
    elements: Vec<usize>,
    local: Vec<Element>,
    free: Vec<bool>,
    mass: Vec<f64>,
    h_min: f64,
}

impl<'a> Piece<'a> {
    fn new(mesh: &'a Mesh, edges: &'a [usize]) -> Self {
        let on_piece: BTreeSet<usize> = edges.iter().copied().collect();
        let elements: Vec<usize> = (0..mesh.elements().len())
            .filter(|&k| on_piece.contains(&mesh.elements()[k].edge))
            .collect();
        let local: Vec<Element> = elements.iter().map(|&k| mesh.elements()[k]).collect();
        let mut free = vec![false; mesh.node_count()];
        let mut mass = vec![0.0; mesh.node_count()];
        for el in &local {
            for n in [el.a, el.b] {
                free[n] = !mesh.is_constrained(n);
                mass[n] += 0.5 * el.h;
            }
        }
        let h_min = local.iter().map(|el| el.h).fold(f64::INFINITY, f64::min);
        Piece {
            mesh,
            edges,
            elements,
            local,
            free,
            mass,
            h_min,
        }
    }

    fn dofs(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// Quotient and gradient at `u`, which is rescaled in place to unit norm.
    fn evaluate(&self, u: &mut [f64], p: f64, de: &mut [f64], dn: &mut [f64]) -> Option<Evaluation> {
        de.iter_mut().for_each(|v| *v = 0.0);
        dn.iter_mut().for_each(|v| *v = 0.0);
        let (energy, norm) = assemble(&self.local, u, p, de, dn);
        if !(norm > discretize::ZERO_NORM) || !energy.is_finite() || !norm.is_finite() {
            return None;
        }
        let lambda = energy / norm;
        // the gradient of a 0-homogeneous function scales by 1/c
        let c = norm.powf(-1.0 / p);
        u.iter_mut().for_each(|v| *v *= c);
        let scale = p / (norm * c);
        let mut grad_max = 0.0_f64;
        let gradient: Vec<f64> = (0..u.len())
            .map(|i| {
                if self.free[i] {
                    let g = scale * (de[i] - lambda * dn[i]);
                    grad_max = grad_max.max(g.abs());
                    g
                } else {
                    0.0
                }
            })
            .collect();
        Some(Evaluation {
            lambda,
            gradient,
            grad_max,
        })
    }

    /// Newton step on `∇E(u) = λ ∇N(u), N(u) = 1` at a unit-norm `u`.
    ///
    /// With `H = E'' - λ N''` and `z = H⁻¹ ∇N`, homogeneity gives
    /// `H⁻¹ (∇E - λ∇N) = u / (p-1)`, so the bordered system reduces to
    /// `u + du = (p-2)/(p-1) u + c z` with `c = p / ((p-1) ∇N·z)`.
    fn newton(&self, u: &[f64], lambda: f64, p: f64, dn: &[f64]) -> Option<Vec<f64>> {
        let mut h = MeshMatrix::new(self.mesh, self.edges, &self.free);
        let s_max = self
            .local
            .iter()
            .fold(0.0_f64, |m, el| m.max(((u[el.b] - u[el.a]) / el.h).abs()));
        let u_max = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let c2 = p * (p - 1.0);
        for (&k, el) in self.elements.iter().zip(&self.local) {
            let s = (u[el.b] - u[el.a]) / el.h;
            let floor = (1e-14 * s_max).max(4.0 * f64::EPSILON * u_max / el.h);
            let w = c2 * weight(s, p, floor) / el.h;
            h.diag[el.a] += w;
            h.diag[el.b] += w;
            h.off[k] -= w;
            for q in 0..3 {
                let xi = GAUSS_X[q];
                let v = u[el.a] + xi * (u[el.b] - u[el.a]);
                let m = lambda * c2 * GAUSS_W[q] * el.h * weight(v, p, 1e-14 * u_max);
                h.diag[el.a] -= m * (1.0 - xi) * (1.0 - xi);
                h.diag[el.b] -= m * xi * xi;
                h.off[k] -= m * xi * (1.0 - xi);
            }
        }
        let grad_n: Vec<f64> = (0..u.len()).map(|i| if self.free[i] { p * dn[i] } else { 0.0 }).collect();
        let z = h.solve(&grad_n)?;
        let dot: f64 = grad_n.iter().zip(&z).map(|(a, b)| a * b).sum();
        if dot == 0.0 || !dot.is_finite() {
            return None;
        }
        let c = p / ((p - 1.0) * dot);
        let keep = (p - 2.0) / (p - 1.0);
        let mut y: Vec<f64> = u.iter().zip(&z).map(|(a, b)| keep * a + c * b).collect();
        if y.iter().sum::<f64>() < 0.0 {
            y.iter_mut().for_each(|v| *v = -*v);
        }
        Some(y)
    }

    /// Minimizes the quotient from `u`: Newton steps while they lower the
    /// quotient, projected Barzilai–Borwein descent with non-monotone
    /// backtracking otherwise.
    fn minimize(&self, u: &mut Vec<f64>, p: f64, lambda_tol: f64, gradient_tol: f64, max_iterations: usize) -> Outcome {
        let n = u.len();
        let h_min = self.h_min;
        let mut de = vec![0.0; n];
        let mut dn = vec![0.0; n];
        let Some(mut current) = self.evaluate(u, p, &mut de, &mut dn) else {
            return Outcome {
                lambda: f64::INFINITY,
                iterations: 0,
                converged: false,
            };
        };
        let mut current_dn = dn.clone();
        let mut best = (current.lambda, u.clone());
        const MEMORY: usize = 10;
        let mut history = std::collections::VecDeque::with_capacity(MEMORY);
        history.push_back(current.lambda);
        let default_step = 0.1 * h_min * h_min / p;
        let mut step = default_step;
        let mut iterations = 0;
        let mut converged = false;
        let mut trial = vec![0.0; n];
        let mut cooldown = 0;
        let mut pause = 8;
        let roundoff = 64.0 * f64::EPSILON;

        // last value from which the quotient dropped by more than rounding
        let mut anchor = current.lambda;
        let mut stagnant = 0;

        while iterations < max_iterations {
            iterations += 1;
            if current.lambda < anchor * (1.0 - WORKING_PRECISION) {
                anchor = current.lambda;
                stagnant = 0;
            } else if iterations > 1 {
                stagnant += 1;
            }
            // neither Newton nor gradient steps can lower the quotient any
            // more in floating point; for p near 1 the fluxes |s|^(p-1) in
            // nearly flat regions are not representable and the gradient
            // stalls above any fixed tolerance
            if stagnant >= STAGNATION_WINDOW {
                converged = true;
                break;
            }
            let previous = current.lambda;
            if cooldown == 0 {
                let candidate = self.newton(u, current.lambda, p, &current_dn);
                // damped along the Newton direction while the quotient rises
                let accepted = candidate.and_then(|y| {
                    let mut t = 1.0;
                    for _ in 0..12 {
                        let mut trial: Vec<f64> = u.iter().zip(&y).map(|(a, b)| a + t * (b - a)).collect();
                        if let Some(eval) = self.evaluate(&mut trial, p, &mut de, &mut dn) {
                            if eval.lambda <= current.lambda * (1.0 + roundoff) {
                                return Some((trial, eval));
                            }
                        }
                        t *= 0.5;
                    }
                    None
                });
                if let Some((y, eval)) = accepted {
                    *u = y;
                    current = eval;
                    current_dn.copy_from_slice(&dn);
                    pause = 8;
                    let change = (previous - current.lambda).abs() / current.lambda;
                    if current.lambda < best.0 {
                        best = (current.lambda, u.clone());
                    }
                    history.clear();
                    history.push_back(current.lambda);
                    if change < lambda_tol && current.grad_max <= gradient_tol * current.lambda {
                        converged = true;
                        break;
                    }
                    continue;
                }
                cooldown = pause;
                pause = (pause * 2).min(512);
            }
            cooldown -= 1;

            // preconditioned gradient step
            let direction: Vec<f64> = (0..n)
                .map(|i| if self.free[i] { -current.gradient[i] / self.mass[i] } else { 0.0 })
                .collect();
            let slope: f64 = direction.iter().zip(&current.gradient).map(|(d, g)| d * g).sum();
            let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut alpha = step;
            let mut accepted = None;
            for _ in 0..60 {
                for i in 0..n {
                    trial[i] = u[i] + alpha * direction[i];
                }
                if let Some(eval) = self.evaluate(&mut trial, p, &mut de, &mut dn) {
                    if eval.lambda <= reference + 1e-4 * alpha * slope {
                        accepted = Some(eval);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some(next) = accepted else {
                step = default_step;
                cooldown = 0;
                continue;
            };

            // Barzilai–Borwein lengths in the lumped-mass metric
            let (mut ss, mut sy, mut yy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                if self.free[i] {
                    let s = trial[i] - u[i];
                    let y = next.gradient[i] - current.gradient[i];
                    ss += s * self.mass[i] * s;
                    sy += s * y;
                    yy += y * y / self.mass[i];
                }
            }
            std::mem::swap(u, &mut trial);
            current = next;
            current_dn.copy_from_slice(&dn);
            if current.lambda < best.0 {
                best = (current.lambda, u.clone());
            }
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back(current.lambda);
            let change = (previous - current.lambda).abs() / current.lambda;
            if change < lambda_tol && current.grad_max <= gradient_tol * current.lambda {
                converged = true;
                break;
            }
            step = if sy > 0.0 {
                if iterations % 2 == 0 {
                    ss / sy
                } else {
                    sy / yy
                }
            } else {
                2.0 * alpha
            };
            if !step.is_finite() || step <= 0.0 {
                step = default_step;
            }
        }
        if !converged && best.0 < current.lambda {
            *u = best.1;
            return Outcome {
                lambda: best.0,
                iterations,
                converged,
            };
        }
        Outcome {
            lambda: current.lambda,
            iterations,
            converged,
        }
    }
}

/// Kirchhoff defect at every free vertex: the sum over incident edge-ends of
/// the outward flux `|∂u|^(p-2) ∂u`, each end's flux recovered from its
/// element slope plus the element's share of `λ ∫|u|^(p-2) u φ_v`.
pub fn kirchhoff_residual(pair: &Eigenpair) -> BTreeMap<String, f64> {
    let mesh = pair.mesh();
    let graph = mesh.graph();
    let n = mesh.node_count();
    let mut de = vec![0.0; n];
    let mut dn = vec![0.0; n];
    assemble(mesh.elements(), pair.eigenfunction.nodal(), pair.p.get(), &mut de, &mut dn);
    (0..graph.vertex_count())
        .filter(|&v| !graph.is_dirichlet(v))
        .map(|v| (graph.vertex_id(v).to_string(), (de[v] - pair.lambda * dn[v]).abs()))
        .collect()
}

/// Uncorrected sums of one-sided element fluxes `|s|^(p-2) s` at every free
/// vertex, slopes taken away from the vertex.
pub fn one_sided_flux_sums(pair: &Eigenpair) -> BTreeMap<String, f64> {
    let mesh = pair.mesh();
    let graph = mesh.graph();
    let n = mesh.node_count();
    let mut de = vec![0.0; n];
    let mut dn = vec![0.0; n];
    assemble(mesh.elements(), pair.eigenfunction.nodal(), pair.p.get(), &mut de, &mut dn);
    (0..graph.vertex_count())
        .filter(|&v| !graph.is_dirichlet(v))
        .map(|v| (graph.vertex_id(v).to_string(), -de[v]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignReport {
    pub changes_sign: bool,
    pub support_edges: BTreeSet<String>,
}

/// Sign pattern of the eigenfunction, with `tol` relative to its sup norm.
pub fn sign_structure(pair: &Eigenpair, tol: f64) -> SignReport {
    let u = &pair.eigenfunction;
    let max = u.max_abs();
    let cut = tol * max;
    let changes_sign = changes_sign_with(u.nodal(), cut);
    let mesh = u.mesh();
    let support_edges = mesh
        .edge_meshes()
        .iter()
        .enumerate()
        .filter(|(_, em)| em.nodes.iter().any(|&nd| u.nodal()[nd].abs() > cut))
        .map(|(k, _)| mesh.graph().edge(k).id.clone())
        .collect();
    SignReport {
        changes_sign,
        support_edges,
    }
}

fn changes_sign_with(u: &[f64], cut: f64) -> bool {
    u.iter().any(|&v| v > cut) && u.iter().any(|&v| v < -cut)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicityReport {
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    /// Largest relative deviation of a restart from `lambda`.
    pub lambda_spread: f64,
    pub lambdas_agree: bool,
    /// Restarts whose eigenfunctions differ pairwise after alignment.
    pub distinct_eigenfunction_count: usize,
    /// Numerical rank of the collected eigenfunctions.
    pub span_dimension: usize,
}

/// Relative sup-norm distance separating eigenfunction classes.
pub const CLASS_TOLERANCE: f64 = 1e-3;

/// Runs the solver from `restarts` seeds and counts how many genuinely
/// different eigenfunctions come back.
pub fn multiplicity_probe(
    graph: &MetricGraph,
    p: PValue,
    opts: &SolverOptions,
    restarts: usize,
) -> Result<MultiplicityReport, SolverError> {
    if restarts < 2 {
        return Err(SolverError::InvalidOptions("multiplicity probe needs at least 2 restarts".into()));
    }
    let pairs: Vec<Eigenpair> = (0..restarts as u64)
        .into_par_iter()
        .map(|k| solve_first_eigenpair(graph, p, &opts.clone().with_seed(opts.seed.wrapping_add(k))))
        .collect::<Result<_, _>>()?;
    let lambdas: Vec<f64> = pairs.iter().map(|e| e.lambda).collect();
    let lambda = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda_spread = lambdas
        .iter()
        .map(|l| (l - lambda).abs() / lambda)
        .fold(0.0, f64::max);
    let lambdas_agree = lambda_spread <= 10.0 * opts.lambda_tol.max(TIE_TOLERANCE);

    let aligned: Vec<Vec<f64>> = pairs
        .iter()
        .map(|e| {
            let v = e.eigenfunction.nodal();
            let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            v.iter().map(|x| sign * x).collect()
        })
        .collect();
    let mut classes: Vec<&Vec<f64>> = Vec::new();
    for v in &aligned {
        let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let fresh = classes.iter().all(|c| {
            let d = c.iter().zip(v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            d > CLASS_TOLERANCE * scale
        });
        if fresh {
            classes.push(v);
        }
    }
    let span_dimension = numerical_rank(&aligned, CLASS_TOLERANCE);
    Ok(MultiplicityReport {
        lambda,
        lambdas,
        lambda_spread,
        lambdas_agree,
        distinct_eigenfunction_count: classes.len(),
        span_dimension,
    })
}

/// Rank by modified Gram–Schmidt, dropping vectors whose residual falls
/// below `tol` times their length.
fn numerical_rank(vectors: &[Vec<f64>], tol: f64) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            continue;
        }
        let mut r = v.clone();
        for b in &basis {
            let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let rl = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rl > tol * len {
            r.iter_mut().for_each(|x| *x /= rl);
            basis.push(r);
        }
    }
    basis.len()
}
