//! Continuous piecewise-linear functions on a uniformly subdivided metric
//! graph, and the p-Rayleigh quotient with its gradient.
//!
//! All edge-ends meeting at a vertex share one node, so represented functions
//! are continuous; nodes on Dirichlet vertices are pinned to zero. The
//! numerator `∫|u'|^p` is exact (slopes are element-constant), the
//! denominator `∫|u|^p` uses 3-point Gauss per element.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::graph::{GraphPoint, MetricGraph};
use crate::ptrig::PValue;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error("mesh size must be positive and finite, got {0}")]
    InvalidMeshSize(f64),
    #[error("element counts do not match the edge count")]
    CountMismatch,
    #[error("the function is zero (L^p norm {0:e})")]
    ZeroFunction(f64),
    #[error("function has {got} values, mesh has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
}

/// Smallest `∫|u|^p` accepted as a non-zero function.
pub const ZERO_NORM: f64 = 1e-300;

/// One linear element between nodes `a` (towards the edge tail) and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub edge: usize,
    pub a: usize,
    pub b: usize,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMesh {
    pub elements: usize,
    pub h: f64,
    /// Node ids from tail to head; the first and last are vertex nodes.
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    graph: MetricGraph,
    edges: Vec<EdgeMesh>,
    elements: Vec<Element>,
    locations: Vec<GraphPoint>,
    constrained: Vec<bool>,
    dof_count: usize,
}

impl Mesh {
    /// Uniform subdivision with `ceil(ℓ_e / h_target)` elements per edge
    /// (at least 3 on loops).
    pub fn build(graph: &MetricGraph, h_target: f64) -> Result<Mesh, DiscretizeError> {
        Mesh::with_counts(graph, &element_counts(graph, h_target)?, true)
    }

    /// Like [`Mesh::build`] but without pinning Dirichlet vertices.
    pub fn build_unconstrained(graph: &MetricGraph, h_target: f64) -> Result<Mesh, DiscretizeError> {
        Mesh::with_counts(graph, &element_counts(graph, h_target)?, false)
    }

    /// Mesh with prescribed element counts per edge.
    pub fn with_counts(graph: &MetricGraph, counts: &[usize], constrain: bool) -> Result<Mesh, DiscretizeError> {
        if counts.len() != graph.edge_count() {
            return Err(DiscretizeError::CountMismatch);
        }
        let nv = graph.vertex_count();
        let mut locations: Vec<Option<GraphPoint>> = vec![None; nv];
        let mut edges = Vec::with_capacity(counts.len());
        let mut elements = Vec::new();
        let mut next = nv;
        for (k, (e, &n)) in graph.edges().iter().zip(counts).enumerate() {
            let n = n.max(if e.is_loop() { 3 } else { 1 });
            let h = e.length / n as f64;
            let mut nodes = Vec::with_capacity(n + 1);
            nodes.push(e.tail);
            locations[e.tail].get_or_insert(GraphPoint { edge: k, x: 0.0 });
            for i in 1..n {
                nodes.push(next);
                locations.push(Some(GraphPoint { edge: k, x: i as f64 * h }));
                next += 1;
            }
            nodes.push(e.head);
            locations[e.head].get_or_insert(GraphPoint { edge: k, x: e.length });
            for w in nodes.windows(2) {
                elements.push(Element { edge: k, a: w[0], b: w[1], h });
            }
            edges.push(EdgeMesh { elements: n, h, nodes });
        }
        let locations: Vec<GraphPoint> = locations
            .into_iter()
            .map(|l| l.expect("every vertex of a connected graph lies on an edge"))
            .collect();
        let mut constrained = vec![false; next];
        if constrain {
            for v in graph.dirichlet_vertices() {
                constrained[v] = true;
            }
        }
        let dof_count = constrained.iter().filter(|&&c| !c).count();
        Ok(Mesh {
            graph: graph.clone(),
            edges,
            elements,
            locations,
            constrained,
            dof_count,
        })
    }

    pub fn graph(&self) -> &MetricGraph {
        &self.graph
    }

    pub fn edge_meshes(&self) -> &[EdgeMesh] {
        &self.edges
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn node_count(&self) -> usize {
        self.constrained.len()
    }

    /// Number of unconstrained degrees of freedom.
    pub fn dof_count(&self) -> usize {
        self.dof_count
    }

    pub fn is_constrained(&self, node: usize) -> bool {
        self.constrained[node]
    }

    pub fn constrained_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.constrained[i]).collect()
    }

    /// Where a node sits. Vertex nodes report their first incident edge.
    pub fn location(&self, node: usize) -> GraphPoint {
        self.locations[node]
    }

    pub fn max_element_size(&self) -> f64 {
        self.edges.iter().map(|e| e.h).fold(0.0, f64::max)
    }
}

/// `ceil(ℓ_e / h)` per edge.
pub fn element_counts(graph: &MetricGraph, h_target: f64) -> Result<Vec<usize>, DiscretizeError> {
    if !(h_target.is_finite() && h_target > 0.0) {
        return Err(DiscretizeError::InvalidMeshSize(h_target));
    }
    Ok(graph
        .edges()
        .iter()
        .map(|e| {
            let n = (e.length / h_target).ceil();
            // guard against ℓ/h landing a hair above an integer
            let n = if n > 1.0 && e.length / (n - 1.0) <= h_target { n - 1.0 } else { n };
            (n as usize).max(1)
        })
        .collect())
}

/// A continuous piecewise-linear function on a mesh, zero on constrained nodes.
#[derive(Debug, Clone)]
pub struct DiscreteFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl DiscreteFunction {
    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.node_count();
        DiscreteFunction { mesh, values: vec![0.0; n] }
    }

    /// Wraps nodal values; constrained entries are forced to zero.
    pub fn from_nodal(mesh: Arc<Mesh>, mut values: Vec<f64>) -> Result<Self, DiscretizeError> {
        if values.len() != mesh.node_count() {
            return Err(DiscretizeError::LengthMismatch {
                expected: mesh.node_count(),
                got: values.len(),
            });
        }
        for (v, &c) in values.iter_mut().zip(&mesh.constrained) {
            if c {
                *v = 0.0;
            }
        }
        Ok(DiscreteFunction { mesh, values })
    }

    /// Nodal interpolant of `f(edge, x)`.
    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(usize, f64) -> f64) -> Self {
        let values = (0..mesh.node_count())
            .map(|i| {
                if mesh.constrained[i] {
                    0.0
                } else {
                    let loc = mesh.locations[i];
                    f(loc.edge, loc.x)
                }
            })
            .collect();
        DiscreteFunction { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// All nodal values, constrained ones included (they are zero).
    pub fn nodal(&self) -> &[f64] {
        &self.values
    }

    /// Values on the unconstrained degrees of freedom, in node order.
    pub fn dof_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.mesh.constrained)
            .filter(|(_, &c)| !c)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn scaled(&self, c: f64) -> DiscreteFunction {
        DiscreteFunction {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Value at a point of the graph.
    pub fn eval(&self, pt: &GraphPoint) -> f64 {
        let em = &self.mesh.edges[pt.edge];
        let t = (pt.x / em.h).clamp(0.0, em.elements as f64);
        let i = (t.floor() as usize).min(em.elements - 1);
        let xi = t - i as f64;
        (1.0 - xi) * self.values[em.nodes[i]] + xi * self.values[em.nodes[i + 1]]
    }

    /// Samples at every node of every edge as CSV `edge,x,u`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge,x,u\n");
        for (k, em) in self.mesh.edges.iter().enumerate() {
            let id = &self.mesh.graph.edge(k).id;
            for (i, &node) in em.nodes.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", id, fmt_sig(i as f64 * em.h), fmt_sig(self.values[node]));
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Formats with 12 significant digits.
pub fn fmt_sig(x: f64) -> String {
    let r = round_sig(x);
    if r == 0.0 || (1e-5..1e15).contains(&r.abs()) || !r.is_finite() {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.11e}", x).parse().unwrap_or(x)
}

// 3-point Gauss–Legendre on [0, 1]
pub(crate) const GAUSS_X: [f64; 3] = [0.112_701_665_379_258_31, 0.5, 0.887_298_334_620_741_7];
pub(crate) const GAUSS_W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// `|t|^e` with the cheap case `e == 1` short-circuited.
#[inline]
fn abs_pow(t: f64, e: f64) -> f64 {
    if e == 1.0 {
        t.abs()
    } else if t == 0.0 {
        0.0
    } else {
        t.abs().powf(e)
    }
}

/// `|t|^(p-2) t`, defined as 0 at `t = 0`.
#[inline]
pub fn signed_pow(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        abs_pow(t, p - 1.0).copysign(t)
    }
}

/// `∫|u'|^p` over the given elements.
pub(crate) fn energy_over(elements: &[Element], u: &[f64], p: f64) -> f64 {
    elements
        .iter()
        .map(|el| {
            let s = (u[el.b] - u[el.a]) / el.h;
            abs_pow(s, p) * el.h
        })
        .sum()
}

/// `∫|u|^p` over the given elements.
pub(crate) fn norm_over(elements: &[Element], u: &[f64], p: f64) -> f64 {
    elements
        .iter()
        .map(|el| {
            let (ua, ub) = (u[el.a], u[el.b]);
            let mut acc = 0.0;
            for q in 0..3 {
                let v = ua + GAUSS_X[q] * (ub - ua);
                acc += GAUSS_W[q] * abs_pow(v, p);
            }
            acc * el.h
        })
        .sum()
}

/// Energy, norm and the unscaled gradient pieces in one sweep:
/// `d_energy[i] = ∫|u'|^(p-2) u' φ_i'` and `d_norm[i] = ∫|u|^(p-2) u φ_i`,
/// accumulated into the given buffers (which must start at zero).
pub(crate) fn assemble(
    elements: &[Element],
    u: &[f64],
    p: f64,
    d_energy: &mut [f64],
    d_norm: &mut [f64],
) -> (f64, f64) {
    let mut energy = 0.0;
    let mut norm = 0.0;
    for el in elements {
        let (ua, ub) = (u[el.a], u[el.b]);
        let s = (ub - ua) / el.h;
        let flux = signed_pow(s, p);
        energy += flux * s * el.h;
        d_energy[el.b] += flux;
        d_energy[el.a] -= flux;
        let mut na = 0.0;
        let mut nb = 0.0;
        let mut nrm = 0.0;
        for q in 0..3 {
            let xi = GAUSS_X[q];
            let v = ua + xi * (ub - ua);
            let sv = signed_pow(v, p);
            let w = GAUSS_W[q] * el.h;
            nrm += w * sv * v;
            na += w * sv * (1.0 - xi);
            nb += w * sv * xi;
        }
        norm += nrm;
        d_norm[el.a] += na;
        d_norm[el.b] += nb;
    }
    (energy, norm)
}

/// `∫_Γ |u|^p`.
pub fn lp_norm_p(u: &DiscreteFunction, p: PValue) -> f64 {
    norm_over(&u.mesh.elements, &u.values, p.get())
}

/// `∫_Γ |u'|^p`, exact for piecewise-linear `u`.
pub fn dirichlet_energy_p(u: &DiscreteFunction, p: PValue) -> f64 {
    energy_over(&u.mesh.elements, &u.values, p.get())
}

/// `∫_{e} |u|^p` over one edge.
pub fn edge_lp_norm_p(u: &DiscreteFunction, p: PValue, edge: usize) -> f64 {
    let els: Vec<Element> = u.mesh.elements.iter().filter(|el| el.edge == edge).copied().collect();
    norm_over(&els, &u.values, p.get())
}

/// `∫_{e} |u'|^p` over one edge.
pub fn edge_energy_p(u: &DiscreteFunction, p: PValue, edge: usize) -> f64 {
    let els: Vec<Element> = u.mesh.elements.iter().filter(|el| el.edge == edge).copied().collect();
    energy_over(&els, &u.values, p.get())
}

/// `∫|u'|^p / ∫|u|^p`.
pub fn rayleigh_quotient(u: &DiscreteFunction, p: PValue) -> Result<f64, DiscretizeError> {
    let norm = lp_norm_p(u, p);
    if !(norm > ZERO_NORM) {
        return Err(DiscretizeError::ZeroFunction(norm));
    }
    Ok(dirichlet_energy_p(u, p) / norm)
}

/// Gradient of the Rayleigh quotient with respect to the nodal values:
/// `p [∫|u'|^(p-2) u' φ_i' - R(u) ∫|u|^(p-2) u φ_i] / ∫|u|^p`, zero on
/// constrained nodes.
pub fn rayleigh_gradient(u: &DiscreteFunction, p: PValue) -> Result<DiscreteFunction, DiscretizeError> {
    let n = u.mesh.node_count();
    let mut de = vec![0.0; n];
    let mut dn = vec![0.0; n];
    let (energy, norm) = assemble(&u.mesh.elements, &u.values, p.get(), &mut de, &mut dn);
    if !(norm > ZERO_NORM) {
        return Err(DiscretizeError::ZeroFunction(norm));
    }
    let r = energy / norm;
    let scale = p.get() / norm;
    let values = (0..n)
        .map(|i| {
            if u.mesh.constrained[i] {
                0.0
            } else {
                scale * (de[i] - r * dn[i])
            }
        })
        .collect();
    Ok(DiscreteFunction {
        mesh: u.mesh.clone(),
        values,
    })
}
