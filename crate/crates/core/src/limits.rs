//! The p → ∞ and p → 1 limits of the first eigenvalue.
//!
//! `λ_p^{1/p}` tends to the reciprocal of the largest distance from a point
//! of the graph to the Dirichlet set, and `λ_p` tends to the Cheeger
//! constant `inf Per(D)/|D|`. Both limits are computed exactly here; the
//! convergence reports only compare them with finite-p solves.
//!
//! Perimeter of an edge set `D` at a vertex with `k` edge-ends in `D` and
//! `m` outside: `k` at a Dirichlet vertex (every end jumps to zero), and
//! `min(k, m)` otherwise (the vertex is on whichever side needs fewer
//! jumps). A cut point inside an edge counts 1.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::eigensolver::{solve_first_eigenpair, Eigenpair, SolverError, SolverOptions};
use crate::graph::{exact_sum, GraphPoint, MetricGraph};
use crate::ptrig::PValue;

/// Largest edge count accepted by [`cheeger_constant`].
pub const ENUMERATION_CAP: usize = 20;

/// Largest edge count accepted by [`cheeger_bruteforce`].
pub const BRUTEFORCE_CAP: usize = 10;

/// Largest number of grid cells per edge in [`cheeger_bruteforce`].
pub const GRID_CAP: usize = 1 << 20;

const TIE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("{count} edges exceed the enumeration cap of {cap}")]
    TooManyEdges { count: usize, cap: usize },
    #[error("grid step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl LimitError {
    pub fn code(&self) -> &'static str {
        match self {
            LimitError::TooManyEdges { .. } => "too_many_edges",
            LimitError::InvalidStep(_) => "invalid_step",
            LimitError::InvalidInput(_) => "invalid_input",
            LimitError::Solver(e) => e.code(),
        }
    }
}

/// `1 / max_x d(x, V_D)` and a point where the maximum is attained.
pub fn lambda_infinity(graph: &MetricGraph) -> (f64, GraphPoint) {
    let (d, pt) = graph
        .max_distance_to_set(&graph.dirichlet_vertices())
        .expect("a valid graph has Dirichlet vertices");
    (1.0 / d, pt)
}

/// A connected union of full edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheegerSet {
    /// Edge ids in graph order.
    pub edges: Vec<String>,
    pub measure: f64,
    pub perimeter: u32,
    pub ratio: f64,
}

/// Perimeter contribution of one vertex.
fn vertex_perimeter(dirichlet: bool, inside: u32, outside: u32) -> u32 {
    if dirichlet {
        inside
    } else {
        inside.min(outside)
    }
}

/// Perimeter of the full-edge set `mask`.
fn perimeter(graph: &MetricGraph, mask: u64) -> u32 {
    let n = graph.vertex_count();
    let mut inside = vec![0u32; n];
    let mut outside = vec![0u32; n];
    for (k, e) in graph.edges().iter().enumerate() {
        let ends = if mask >> k & 1 == 1 { &mut inside } else { &mut outside };
        ends[e.tail] += 1;
        ends[e.head] += 1;
    }
    (0..n)
        .map(|v| vertex_perimeter(graph.is_dirichlet(v), inside[v], outside[v]))
        .sum()
}

fn is_connected(graph: &MetricGraph, mask: u64) -> bool {
    let first = mask.trailing_zeros() as usize;
    let mut reached = 1u64 << first;
    let mut grown = true;
    while grown {
        grown = false;
        for (k, e) in graph.edges().iter().enumerate() {
            if mask >> k & 1 == 0 || reached >> k & 1 == 1 {
                continue;
            }
            let touches = graph.edges().iter().enumerate().any(|(j, f)| {
                reached >> j & 1 == 1 && (f.tail == e.tail || f.tail == e.head || f.head == e.tail || f.head == e.head)
            });
            if touches {
                reached |= 1 << k;
                grown = true;
            }
        }
    }
    reached == mask
}

/// Edge indices of `mask` in increasing order.
fn members(mask: u64) -> impl Iterator<Item = usize> {
    (0..64).filter(move |k| mask >> k & 1 == 1)
}

/// `a` precedes `b` when its sorted edge list is lexicographically smaller.
fn lex_less(a: u64, b: u64) -> bool {
    members(a).lt(members(b))
}

/// Exact Cheeger constant by enumerating connected full-edge subsets.
///
/// Ties within a relative `1e-12` go to the lexicographically smallest set.
pub fn cheeger_constant(graph: &MetricGraph) -> Result<CheegerSet, LimitError> {
    let m = graph.edge_count();
    if m > ENUMERATION_CAP {
        return Err(LimitError::TooManyEdges {
            count: m,
            cap: ENUMERATION_CAP,
        });
    }
    let candidate = |mask: u64| -> Option<(f64, u64)> {
        if !is_connected(graph, mask) {
            return None;
        }
        let measure = exact_sum(members(mask).map(|k| graph.edge(k).length));
        Some((f64::from(perimeter(graph, mask)) / measure, mask))
    };
    let better = |a: (f64, u64), b: (f64, u64)| {
        let scale = a.0.abs().max(b.0.abs());
        if (a.0 - b.0).abs() <= TIE * scale {
            if lex_less(a.1, b.1) {
                a
            } else {
                b
            }
        } else if a.0 < b.0 {
            a
        } else {
            b
        }
    };
    let (_, mask) = (1u64..1 << m)
        .into_par_iter()
        .filter_map(candidate)
        .reduce_with(better)
        .expect("a graph has at least one edge");
    Ok(cheeger_set(graph, mask))
}

fn cheeger_set(graph: &MetricGraph, mask: u64) -> CheegerSet {
    let measure = exact_sum(members(mask).map(|k| graph.edge(k).length));
    let perimeter = perimeter(graph, mask);
    CheegerSet {
        edges: members(mask).map(|k| graph.edge(k).id.clone()).collect(),
        measure,
        perimeter,
        ratio: f64::from(perimeter) / measure,
    }
}

/// The part of one edge kept by a grid candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Empty,
    Full,
    /// `[0, b]` with `b` the last grid point before the head.
    Tail,
    /// `[a, ℓ]` with `a` the first grid point after the tail.
    Head,
    /// `[a, b]` strictly inside.
    Inner,
}

const PIECES: [Piece; 5] = [Piece::Empty, Piece::Full, Piece::Tail, Piece::Head, Piece::Inner];

impl Piece {
    fn cuts(self) -> u32 {
        match self {
            Piece::Empty | Piece::Full => 0,
            Piece::Tail | Piece::Head => 1,
            Piece::Inner => 2,
        }
    }

    fn touches_tail(self) -> bool {
        matches!(self, Piece::Full | Piece::Tail)
    }

    fn touches_head(self) -> bool {
        matches!(self, Piece::Full | Piece::Head)
    }

    /// Smallest number of grid cells the piece leaves out.
    fn missing_cells(self) -> usize {
        self.cuts() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridInterval {
    pub edge: String,
    pub from: f64,
    pub to: f64,
}

/// Best set found by [`cheeger_bruteforce`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCheegerSet {
    pub intervals: Vec<GridInterval>,
    pub measure: f64,
    pub perimeter: u32,
    pub ratio: f64,
    /// Cut points strictly inside edges.
    pub interior_cuts: u32,
    /// Grid step actually used on each edge, in graph order.
    pub cells: Vec<f64>,
}

/// Minimizes `Per/|D|` over unions of at most one grid interval per edge.
///
/// Edge `e` is split into `ceil(ℓ_e / step)` equal cells. For a fixed choice
/// of which edge ends each interval touches the perimeter is fixed, so only
/// the longest interval of each kind is tried.
pub fn cheeger_bruteforce(graph: &MetricGraph, step: f64) -> Result<GridCheegerSet, LimitError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(LimitError::InvalidStep(step));
    }
    let m = graph.edge_count();
    if m > BRUTEFORCE_CAP {
        return Err(LimitError::TooManyEdges {
            count: m,
            cap: BRUTEFORCE_CAP,
        });
    }
    let mut cells = Vec::with_capacity(m);
    for e in graph.edges() {
        let n = (e.length / step).ceil();
        if n > GRID_CAP as f64 {
            return Err(LimitError::InvalidInput(format!("grid on edge {} is too fine", e.id)));
        }
        cells.push((n as usize).max(1));
    }
    let allowed = |k: usize, piece: Piece| match piece {
        Piece::Empty | Piece::Full => true,
        Piece::Tail | Piece::Head => cells[k] >= 2,
        Piece::Inner => cells[k] >= 3,
    };
    let measure_of = |k: usize, piece: Piece| match piece {
        Piece::Empty => 0.0,
        _ => {
            let len = graph.edge(k).length;
            len - piece.missing_cells() as f64 * len / cells[k] as f64
        }
    };
    let total = 5usize.pow(m as u32);
    let decode = |mut code: usize| {
        let mut pieces = vec![Piece::Empty; m];
        for p in pieces.iter_mut() {
            *p = PIECES[code % 5];
            code /= 5;
        }
        pieces
    };
    let evaluate = |code: usize| -> Option<(f64, usize)> {
        let pieces = decode(code);
        if pieces.iter().all(|&p| p == Piece::Empty) {
            return None;
        }
        if pieces.iter().enumerate().any(|(k, &p)| !allowed(k, p)) {
            return None;
        }
        let per = grid_perimeter(graph, &pieces);
        let measure = exact_sum(pieces.iter().enumerate().map(|(k, &p)| measure_of(k, p)));
        Some((f64::from(per) / measure, code))
    };
    let (_, code) = (0..total)
        .into_par_iter()
        .filter_map(evaluate)
        .reduce_with(|a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
        .expect("a full edge is always a candidate");
    let pieces = decode(code);
    let mut intervals = Vec::new();
    for (k, &p) in pieces.iter().enumerate() {
        let e = graph.edge(k);
        let cell = e.length / cells[k] as f64;
        let span = match p {
            Piece::Empty => continue,
            Piece::Full => (0.0, e.length),
            Piece::Tail => (0.0, e.length - cell),
            Piece::Head => (cell, e.length),
            Piece::Inner => (cell, e.length - cell),
        };
        intervals.push(GridInterval {
            edge: e.id.clone(),
            from: span.0,
            to: span.1,
        });
    }
    let per = grid_perimeter(graph, &pieces);
    let measure = exact_sum(pieces.iter().enumerate().map(|(k, &p)| measure_of(k, p)));
    Ok(GridCheegerSet {
        intervals,
        measure,
        perimeter: per,
        ratio: f64::from(per) / measure,
        interior_cuts: pieces.iter().map(|p| p.cuts()).sum(),
        cells: graph
            .edges()
            .iter()
            .zip(&cells)
            .map(|(e, &n)| e.length / n as f64)
            .collect(),
    })
}

fn grid_perimeter(graph: &MetricGraph, pieces: &[Piece]) -> u32 {
    let n = graph.vertex_count();
    let mut inside = vec![0u32; n];
    let mut outside = vec![0u32; n];
    for (e, &p) in graph.edges().iter().zip(pieces) {
        if p.touches_tail() {
            inside[e.tail] += 1;
        } else {
            outside[e.tail] += 1;
        }
        if p.touches_head() {
            inside[e.head] += 1;
        } else {
            outside[e.head] += 1;
        }
    }
    let at_vertices: u32 = (0..n)
        .map(|v| vertex_perimeter(graph.is_dirichlet(v), inside[v], outside[v]))
        .sum();
    at_vertices + pieces.iter().map(|p| p.cuts()).sum::<u32>()
}

/// Change in `Per/|D|` caused by removing one grid cell from `set`.
pub fn grid_slack(set: &CheegerSet, step: f64) -> f64 {
    let shrunk = (set.measure - step).max(f64::MIN_POSITIVE);
    f64::from(set.perimeter) / shrunk - set.ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitKind {
    /// Compares `λ_p^{1/p}` with `1 / max d(·, V_D)`.
    Infinity,
    /// Compares `λ_p` with the Cheeger constant.
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRow {
    pub p: f64,
    pub lambda: f64,
    /// `λ_p^{1/p}` for the p → ∞ report, `λ_p` otherwise.
    pub value: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub converged: bool,
}

/// Rows are ordered by approach to the limit: increasing p toward ∞,
/// decreasing p toward 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub kind: LimitKind,
    pub target: f64,
    pub rows: Vec<LimitRow>,
    /// The last gap is below the first.
    pub gaps_decrease_overall: bool,
    pub converged: bool,
}

fn check_p_list(ps: &[f64], range: (f64, f64), what: &str) -> Result<Vec<PValue>, LimitError> {
    if ps.is_empty() {
        return Err(LimitError::InvalidInput("empty p list".into()));
    }
    let mut out = Vec::with_capacity(ps.len());
    for &p in ps {
        if !(p >= range.0 && p <= range.1) {
            return Err(LimitError::InvalidInput(format!(
                "p = {p} outside [{}, {}] for the {what} report",
                range.0, range.1
            )));
        }
        out.push(PValue::new(p).map_err(|e| LimitError::InvalidInput(e.to_string()))?);
    }
    Ok(out)
}

fn solve_all(graph: &MetricGraph, ps: &[PValue], opts: &SolverOptions) -> Result<Vec<Eigenpair>, LimitError> {
    ps.par_iter()
        .map(|&p| match solve_first_eigenpair(graph, p, opts) {
            Ok(pair) => Ok(pair),
            Err(SolverError::NotConverged(best)) => Ok(*best),
            Err(e) => Err(LimitError::Solver(e)),
        })
        .collect()
}

fn report(kind: LimitKind, target: f64, pairs: Vec<Eigenpair>) -> LimitReport {
    let mut rows: Vec<LimitRow> = pairs
        .into_iter()
        .map(|pair| {
            let p = pair.p.get();
            let value = match kind {
                LimitKind::Infinity => pair.lambda.powf(1.0 / p),
                LimitKind::One => pair.lambda,
            };
            let gap = (value - target).abs();
            LimitRow {
                p,
                lambda: pair.lambda,
                value,
                gap,
                relative_gap: gap / target.abs(),
                converged: pair.converged,
            }
        })
        .collect();
    match kind {
        LimitKind::Infinity => rows.sort_by(|a, b| a.p.total_cmp(&b.p)),
        LimitKind::One => rows.sort_by(|a, b| b.p.total_cmp(&a.p)),
    }
    rows.dedup_by(|a, b| a.p == b.p);
    let gaps_decrease_overall = rows.len() > 1 && rows[rows.len() - 1].gap < rows[0].gap;
    LimitReport {
        kind,
        target,
        converged: rows.iter().all(|r| r.converged),
        rows,
        gaps_decrease_overall,
    }
}

/// `λ_p^{1/p}` against `Λ_∞` for each p in `ps`.
pub fn infinity_convergence(graph: &MetricGraph, ps: &[f64], opts: &SolverOptions) -> Result<LimitReport, LimitError> {
    let ps = check_p_list(ps, (crate::eigensolver::P_MIN, crate::eigensolver::P_MAX), "p → ∞")?;
    let (target, _) = lambda_infinity(graph);
    Ok(report(LimitKind::Infinity, target, solve_all(graph, &ps, opts)?))
}

/// `λ_p` against the Cheeger constant for each p in `ps ⊂ [1.05, 1.5]`.
pub fn one_convergence(graph: &MetricGraph, ps: &[f64], opts: &SolverOptions) -> Result<LimitReport, LimitError> {
    let ps = check_p_list(ps, (crate::eigensolver::P_MIN, 1.5), "p → 1")?;
    let target = cheeger_constant(graph)?.ratio;
    Ok(report(LimitKind::One, target, solve_all(graph, &ps, opts)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::shapes::*;
    use crate::graph::{EdgeSpec, MetricGraph};

    fn three_star(a: f64, b: f64) -> MetricGraph {
        star(&[a, b, b], &["l1", "l2", "l3"])
    }

    #[test]
    fn infinity_examples() {
        assert_eq!(lambda_infinity(&interval(1.0, &["v1"])).0, 1.0);
        assert_eq!(lambda_infinity(&star(&[2.0, 2.0, 2.0], &["c"])).0, 0.5);
        let (v, pt) = lambda_infinity(&path(&[1.0, 2.0], &["v1", "v3"]));
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pt.edge, 1);
        assert!((pt.x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_star_sets() {
        let s = cheeger_constant(&three_star(1.0, 1.0)).unwrap();
        assert_eq!(s.ratio, 1.0);
        assert_eq!(s.perimeter, 3);
        assert_eq!(s.edges, vec!["e1", "e2", "e3"]);
        let s = cheeger_constant(&three_star(5.0, 1.0)).unwrap();
        assert_eq!(s.ratio, 0.4);
        assert_eq!(s.perimeter, 2);
        assert_eq!(s.edges, vec!["e1"]);
        let s = cheeger_constant(&three_star(4.0, 1.0)).unwrap();
        assert_eq!(s.ratio, 0.5);
    }

    #[test]
    fn single_edge_constant() {
        let s = cheeger_constant(&interval(1.0, &["v1"])).unwrap();
        assert_eq!((s.ratio, s.perimeter), (1.0, 1));
        let s = cheeger_constant(&interval(1.0, &["v1", "v2"])).unwrap();
        assert_eq!((s.ratio, s.perimeter), (2.0, 2));
    }

    #[test]
    fn dirichlet_vertex_inside_counts_every_end() {
        let g = path(&[1.0, 1.0], &["v1", "v2", "v3"]);
        let s = cheeger_constant(&g).unwrap();
        assert_eq!(s.ratio, 2.0);
        assert_eq!(perimeter(&g, 0b11), 4);
    }

    #[test]
    fn loop_and_parallel_edges() {
        let g = looped(2.0);
        let s = cheeger_constant(&g).unwrap();
        assert!(s.ratio > 0.0 && (s.ratio * s.measure - f64::from(s.perimeter)).abs() < 1e-12);
        let g = MetricGraph::new(
            ["a", "b"],
            vec![EdgeSpec::new("x", "a", "b", 1.0), EdgeSpec::new("y", "a", "b", 3.0)],
            ["a"],
        )
        .unwrap();
        // both edges: only the two ends at a jump
        assert_eq!(perimeter(&g, 0b11), 2);
        assert_eq!(cheeger_constant(&g).unwrap().ratio, 0.5);
    }

    #[test]
    fn enumeration_cap() {
        let lengths = vec![1.0; 21];
        let g = star(&lengths, &["c"]);
        assert!(matches!(cheeger_constant(&g), Err(LimitError::TooManyEdges { .. })));
    }

    #[test]
    fn bruteforce_on_examples() {
        let b = cheeger_bruteforce(&three_star(5.0, 1.0), 0.05).unwrap();
        assert_eq!(b.ratio, 0.4);
        assert_eq!(b.interior_cuts, 0);
        let b = cheeger_bruteforce(&interval(1.0, &["v1"]), 0.05).unwrap();
        assert_eq!((b.ratio, b.interior_cuts), (1.0, 0));
        assert_eq!(b.intervals, vec![GridInterval { edge: "e1".into(), from: 0.0, to: 1.0 }]);
        assert!(cheeger_bruteforce(&interval(1.0, &["v1"]), 0.0).is_err());
    }

    #[test]
    fn slack_is_positive() {
        let s = cheeger_constant(&three_star(1.0, 1.0)).unwrap();
        let d = grid_slack(&s, 0.02);
        assert!(d > 0.0 && d < 0.01);
    }

    #[test]
    fn p_list_validation() {
        let g = interval(1.0, &["v1"]);
        let o = SolverOptions::new(0.05);
        assert!(matches!(infinity_convergence(&g, &[], &o), Err(LimitError::InvalidInput(_))));
        assert!(matches!(one_convergence(&g, &[2.0], &o), Err(LimitError::InvalidInput(_))));
        assert!(matches!(infinity_convergence(&g, &[100.0], &o), Err(LimitError::InvalidInput(_))));
    }

    #[test]
    fn single_row_report() {
        let g = interval(1.0, &["v1"]);
        let r = infinity_convergence(&g, &[2.0], &SolverOptions::new(0.01)).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(!r.gaps_decrease_overall);
        assert!((r.rows[0].value - r.rows[0].lambda.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rows_follow_approach_order() {
        let g = interval(1.0, &["v1"]);
        let r = one_convergence(&g, &[1.2, 1.4, 1.3], &SolverOptions::new(0.01)).unwrap();
        let ps: Vec<f64> = r.rows.iter().map(|r| r.p).collect();
        assert_eq!(ps, vec![1.4, 1.3, 1.2]);
        assert_eq!(r.target, 1.0);
    }
}
