//! Compact metric graphs: vertices, edges carrying lengths, and a set of
//! Dirichlet vertices.
//!
//! Edges are stored with a direction, which only fixes where the edge
//! coordinate starts. Distances, spectra and everything downstream ignore it.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("the Dirichlet vertex set is empty")]
    EmptyDirichlet,
    #[error("the graph is disconnected")]
    Disconnected,
    #[error("edge `{edge}` has non-positive or non-finite length {length}")]
    InvalidLength { edge: String, length: f64 },
    #[error("edge `{edge}` references unknown vertex `{vertex}`")]
    UnknownVertex { edge: String, vertex: String },
    #[error("Dirichlet set references unknown vertex `{0}`")]
    UnknownDirichletVertex(String),
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("duplicate vertex id `{0}`")]
    DuplicateVertex(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(String),
    #[error("the graph has no vertices")]
    NoVertices,
    #[error("the vertex set is empty")]
    EmptyVertexSet,
    #[error("coordinate {x} lies outside [0, {length}] on edge `{edge}`")]
    CoordinateOutOfRange { edge: String, x: f64, length: f64 },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

impl GraphError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::EmptyDirichlet => "empty_dirichlet",
            GraphError::Disconnected => "disconnected",
            GraphError::InvalidLength { .. } => "non_positive_length",
            GraphError::UnknownVertex { .. } => "unknown_vertex",
            GraphError::UnknownDirichletVertex(_) => "unknown_vertex",
            GraphError::UnknownEdge(_) => "unknown_edge",
            GraphError::DuplicateVertex(_) => "duplicate_vertex",
            GraphError::DuplicateEdge(_) => "duplicate_edge",
            GraphError::NoVertices => "no_vertices",
            GraphError::EmptyVertexSet => "empty_set",
            GraphError::CoordinateOutOfRange { .. } => "coordinate_out_of_range",
            GraphError::Parse { .. } => "parse_error",
        }
    }
}

/// An edge with its endpoints given as vertex indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub length: f64,
}

impl Edge {
    pub fn is_loop(&self) -> bool {
        self.tail == self.head
    }
}

/// Edge description by vertex ids, used to build a [`MetricGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
}

impl EdgeSpec {
    pub fn new(id: impl Into<String>, from: impl Into<String>, to: impl Into<String>, length: f64) -> Self {
        EdgeSpec {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            length,
        }
    }
}

/// The on-disk graph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub dirichlet: Vec<String>,
}

/// A validated compact connected metric graph with a non-empty Dirichlet set.
///
/// Immutable once built; every constructor runs [`MetricGraph::validate`].
#[derive(Debug, Clone)]
pub struct MetricGraph {
    vertices: Vec<String>,
    edges: Vec<Edge>,
    dirichlet: Vec<bool>,
    vertex_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
}

/// A location on the graph: an edge and a coordinate measured from its tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphPoint {
    pub edge: usize,
    pub x: f64,
}

impl MetricGraph {
    pub fn new<V, D>(vertices: V, edges: Vec<EdgeSpec>, dirichlet: D) -> Result<Self, GraphError>
    where
        V: IntoIterator,
        V::Item: Into<String>,
        D: IntoIterator,
        D::Item: Into<String>,
    {
        let vertices: Vec<String> = vertices.into_iter().map(Into::into).collect();
        if vertices.is_empty() {
            return Err(GraphError::NoVertices);
        }
        let mut vertex_index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if vertex_index.insert(v.clone(), i).is_some() {
                return Err(GraphError::DuplicateVertex(v.clone()));
            }
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut built = Vec::with_capacity(edges.len());
        for (k, e) in edges.into_iter().enumerate() {
            let lookup = |name: &str| {
                vertex_index
                    .get(name)
                    .copied()
                    .ok_or_else(|| GraphError::UnknownVertex {
                        edge: e.id.clone(),
                        vertex: name.to_string(),
                    })
            };
            let tail = lookup(&e.from)?;
            let head = lookup(&e.to)?;
            if edge_index.insert(e.id.clone(), k).is_some() {
                return Err(GraphError::DuplicateEdge(e.id));
            }
            built.push(Edge {
                id: e.id,
                tail,
                head,
                length: e.length,
            });
        }
        let mut mask = vec![false; vertices.len()];
        for d in dirichlet {
            let d = d.into();
            let i = *vertex_index
                .get(&d)
                .ok_or(GraphError::UnknownDirichletVertex(d))?;
            mask[i] = true;
        }
        let graph = MetricGraph {
            vertices,
            edges: built,
            dirichlet: mask,
            vertex_index,
            edge_index,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Checks every structural invariant: positive finite lengths, a non-empty
    /// Dirichlet set and connectedness.
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.vertices.is_empty() {
            return Err(GraphError::NoVertices);
        }
        for e in &self.edges {
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(GraphError::InvalidLength {
                    edge: e.id.clone(),
                    length: e.length,
                });
            }
        }
        if !self.dirichlet.iter().any(|&d| d) {
            return Err(GraphError::EmptyDirichlet);
        }
        if !self.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.vertices.len();
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(_, w) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Incident (edge, other endpoint) pairs per vertex. A loop shows up twice.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.tail].push((k, e.head));
            adj[e.head].push((k, e.tail));
        }
        adj
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> &Edge {
        &self.edges[k]
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_id(&self, v: usize) -> &str {
        &self.vertices[v]
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }

    pub fn edge_index(&self, id: &str) -> Result<usize, GraphError> {
        self.edge_index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownEdge(id.to_string()))
    }

    pub fn is_dirichlet(&self, v: usize) -> bool {
        self.dirichlet[v]
    }

    /// Indices of the Dirichlet vertices, ascending.
    pub fn dirichlet_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&v| self.dirichlet[v]).collect()
    }

    /// Degree with loops counted twice.
    pub fn degree(&self, v: usize) -> usize {
        self.edges
            .iter()
            .map(|e| usize::from(e.tail == v) + usize::from(e.head == v))
            .sum()
    }

    /// Correctly rounded, so a graph and its double agree up to the exact
    /// factor 2.
    pub fn total_length(&self) -> f64 {
        exact_sum(self.edges.iter().map(|e| e.length))
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.length)
            .fold(f64::INFINITY, f64::min)
    }

    /// Builds a point on edge `id` at coordinate `x` from its tail.
    pub fn point(&self, id: &str, x: f64) -> Result<GraphPoint, GraphError> {
        let edge = self.edge_index(id)?;
        let length = self.edges[edge].length;
        if !(0.0..=length).contains(&x) {
            return Err(GraphError::CoordinateOutOfRange {
                edge: id.to_string(),
                x,
                length,
            });
        }
        Ok(GraphPoint { edge, x })
    }

    /// The point sitting on vertex `v`, or `None` for an isolated vertex
    /// (impossible on a valid graph with at least one edge).
    pub fn vertex_point(&self, v: usize) -> Option<GraphPoint> {
        self.edges.iter().enumerate().find_map(|(k, e)| {
            if e.tail == v {
                Some(GraphPoint { edge: k, x: 0.0 })
            } else if e.head == v {
                Some(GraphPoint { edge: k, x: e.length })
            } else {
                None
            }
        })
    }

    /// The vertex a point sits on, if its coordinate is an endpoint.
    pub fn point_vertex(&self, pt: &GraphPoint) -> Option<usize> {
        let e = &self.edges[pt.edge];
        if pt.x <= 0.0 {
            Some(e.tail)
        } else if pt.x >= e.length {
            Some(e.head)
        } else {
            None
        }
    }

    fn check_point(&self, pt: &GraphPoint) -> Result<(), GraphError> {
        let e = self
            .edges
            .get(pt.edge)
            .ok_or_else(|| GraphError::UnknownEdge(format!("#{}", pt.edge)))?;
        if !(0.0..=e.length).contains(&pt.x) {
            return Err(GraphError::CoordinateOutOfRange {
                edge: e.id.clone(),
                x: pt.x,
                length: e.length,
            });
        }
        Ok(())
    }

    /// Shortest-path distance from each vertex to the nearest source, where a
    /// source is a vertex with an initial offset.
    pub fn vertex_distances(&self, sources: &[(usize, f64)]) -> Vec<f64> {
        let n = self.vertices.len();
        let adj = self.adjacency();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        for &(v, d0) in sources {
            if d0 < dist[v] {
                dist[v] = d0;
                heap.push(State { cost: d0, vertex: v });
            }
        }
        while let Some(State { cost, vertex }) = heap.pop() {
            if cost > dist[vertex] {
                continue;
            }
            for &(k, w) in &adj[vertex] {
                let next = cost + self.edges[k].length;
                if next < dist[w] {
                    dist[w] = next;
                    heap.push(State { cost: next, vertex: w });
                }
            }
        }
        dist
    }

    /// Geodesic distance between two points of the metric graph.
    pub fn distance(&self, a: &GraphPoint, b: &GraphPoint) -> Result<f64, GraphError> {
        self.check_point(a)?;
        self.check_point(b)?;
        let ea = &self.edges[a.edge];
        let dist = self.vertex_distances(&[(ea.tail, a.x), (ea.head, ea.length - a.x)]);
        let eb = &self.edges[b.edge];
        let mut best = (dist[eb.tail] + b.x).min(dist[eb.head] + eb.length - b.x);
        if a.edge == b.edge {
            best = best.min((a.x - b.x).abs());
        }
        Ok(best)
    }

    /// Largest distance from a point of the graph to the vertex set `set`,
    /// together with a point attaining it.
    ///
    /// Exact: vertex distances come from a multi-source label-setting search;
    /// on each edge the distance is the lower envelope of two affine
    /// functions whose maximum has a closed form.
    pub fn max_distance_to_set(&self, set: &[usize]) -> Result<(f64, GraphPoint), GraphError> {
        if set.is_empty() {
            return Err(GraphError::EmptyVertexSet);
        }
        let sources: Vec<(usize, f64)> = set.iter().map(|&v| (v, 0.0)).collect();
        let dist = self.vertex_distances(&sources);
        let mut best = (f64::NEG_INFINITY, GraphPoint { edge: 0, x: 0.0 });
        for (k, e) in self.edges.iter().enumerate() {
            let (dt, dh, len) = (dist[e.tail], dist[e.head], e.length);
            let x = (0.5 * (dh + len - dt)).clamp(0.0, len);
            let value = (dt + x).min(dh + len - x);
            if value > best.0 {
                best = (value, GraphPoint { edge: k, x });
            }
        }
        Ok(best)
    }

    /// Distance from a point to the Dirichlet set.
    pub fn distance_to_dirichlet(&self, pt: &GraphPoint, dirichlet_dist: &[f64]) -> f64 {
        let e = &self.edges[pt.edge];
        (dirichlet_dist[e.tail] + pt.x).min(dirichlet_dist[e.head] + e.length - pt.x)
    }

    /// Vertices with exactly one adjacent vertex (a loop makes a vertex
    /// adjacent to itself).
    pub fn terminal_vertices(&self) -> BTreeSet<usize> {
        let mut neighbours = vec![BTreeSet::new(); self.vertices.len()];
        for e in &self.edges {
            neighbours[e.tail].insert(e.head);
            neighbours[e.head].insert(e.tail);
        }
        neighbours
            .iter()
            .enumerate()
            .filter(|(_, nb)| nb.len() == 1)
            .map(|(v, _)| v)
            .collect()
    }

    /// Adds a reversed copy of every edge. All degrees of the result are even.
    pub fn double_graph(&self) -> MetricGraph {
        let mut edges = self.edges.clone();
        let mut used: BTreeSet<String> = edges.iter().map(|e| e.id.clone()).collect();
        for e in &self.edges {
            let mut id = format!("{}~rev", e.id);
            while used.contains(&id) {
                id.push('\'');
            }
            used.insert(id.clone());
            edges.push(Edge {
                id,
                tail: e.head,
                head: e.tail,
                length: e.length,
            });
        }
        self.with_edges(edges)
    }

    /// Same graph with edge `k` set to `length`.
    pub fn with_edge_length(&self, k: usize, length: f64) -> Result<MetricGraph, GraphError> {
        let mut edges = self.edges.clone();
        edges[k].length = length;
        let g = self.with_edges(edges);
        g.validate()?;
        Ok(g)
    }

    /// Same topology with every length multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<MetricGraph, GraphError> {
        let edges = self
            .edges
            .iter()
            .map(|e| Edge {
                length: e.length * factor,
                ..e.clone()
            })
            .collect();
        let g = self.with_edges(edges);
        g.validate()?;
        Ok(g)
    }

    fn with_edges(&self, edges: Vec<Edge>) -> MetricGraph {
        let edge_index = edges
            .iter()
            .enumerate()
            .map(|(k, e)| (e.id.clone(), k))
            .collect();
        MetricGraph {
            vertices: self.vertices.clone(),
            edges,
            dirichlet: self.dirichlet.clone(),
            vertex_index: self.vertex_index.clone(),
            edge_index,
        }
    }

    /// Same graph with a different Dirichlet set.
    pub fn with_dirichlet<D>(&self, dirichlet: D) -> Result<MetricGraph, GraphError>
    where
        D: IntoIterator,
        D::Item: Into<String>,
    {
        MetricGraph::new(self.vertices.clone(), self.edge_specs(), dirichlet)
    }

    pub fn edge_specs(&self) -> Vec<EdgeSpec> {
        self.edges
            .iter()
            .map(|e| EdgeSpec::new(&e.id, &self.vertices[e.tail], &self.vertices[e.head], e.length))
            .collect()
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            vertices: self.vertices.clone(),
            edges: self.edge_specs(),
            dirichlet: self
                .dirichlet_vertices()
                .into_iter()
                .map(|v| self.vertices[v].clone())
                .collect(),
        }
    }

    /// Equality of vertex sets, Dirichlet sets and edges, ignoring edge order.
    pub fn same_as(&self, other: &MetricGraph) -> bool {
        let key = |g: &MetricGraph| {
            let mut edges = g.edge_specs();
            edges.sort_by(|a, b| a.id.cmp(&b.id));
            let mut verts = g.vertices.clone();
            verts.sort();
            let mut dir = g.to_document().dirichlet;
            dir.sort();
            (verts, edges, dir)
        };
        key(self) == key(other)
    }
}

impl TryFrom<GraphDocument> for MetricGraph {
    type Error = GraphError;

    fn try_from(doc: GraphDocument) -> Result<Self, Self::Error> {
        MetricGraph::new(doc.vertices, doc.edges, doc.dirichlet)
    }
}

/// Correctly rounded sum (Shewchuk's partials with a half-way fix-up).
pub(crate) fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = 2.0 * lo;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Parses and validates a graph document.
pub fn load_graph(text: &str) -> Result<MetricGraph, GraphError> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    doc.try_into()
}

pub fn save_graph(graph: &MetricGraph) -> String {
    serde_json::to_string_pretty(&graph.to_document()).expect("graph document serializes")
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    cost: f64,
    vertex: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| self.vertex.cmp(&other.vertex))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Small constructors for the graphs that keep coming up in tests, examples
/// and the acceptance suite.
pub mod shapes {
    use super::{EdgeSpec, MetricGraph};

    /// One edge `v1 -> v2`.
    pub fn interval(length: f64, dirichlet: &[&str]) -> MetricGraph {
        MetricGraph::new(["v1", "v2"], vec![EdgeSpec::new("e1", "v1", "v2", length)], dirichlet.iter().copied())
            .expect("valid interval")
    }

    /// Star with center `c` and leaves `l1..ln`, edges `c -> li`.
    pub fn star(legs: &[f64], dirichlet: &[&str]) -> MetricGraph {
        let mut vertices = vec!["c".to_string()];
        let mut edges = Vec::new();
        for (i, &len) in legs.iter().enumerate() {
            let leaf = format!("l{}", i + 1);
            edges.push(EdgeSpec::new(format!("e{}", i + 1), "c", leaf.clone(), len));
            vertices.push(leaf);
        }
        MetricGraph::new(vertices, edges, dirichlet.iter().copied()).expect("valid star")
    }

    /// Path `v1 - v2 - ... - v(n+1)` with the given edge lengths.
    pub fn path(lengths: &[f64], dirichlet: &[&str]) -> MetricGraph {
        let vertices: Vec<String> = (1..=lengths.len() + 1).map(|i| format!("v{i}")).collect();
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| EdgeSpec::new(format!("e{}", i + 1), format!("v{}", i + 1), format!("v{}", i + 2), len))
            .collect();
        MetricGraph::new(vertices, edges, dirichlet.iter().copied()).expect("valid path")
    }

    /// A single loop at `v`, Dirichlet at `v`.
    pub fn looped(length: f64) -> MetricGraph {
        MetricGraph::new(["v"], vec![EdgeSpec::new("e1", "v", "v", length)], ["v"]).expect("valid loop")
    }
}
