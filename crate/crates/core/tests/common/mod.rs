#![allow(dead_code)]

use plap::graph::{EdgeSpec, MetricGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Connected graph with at most `max_vertices` vertices and `max_edges`
/// edges (loops and parallel edges allowed), lengths in `[lo, hi]` and a
/// random non-empty Dirichlet set.
pub fn random_graph(seed: u64, max_vertices: usize, max_edges: usize, lo: f64, hi: f64) -> MetricGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_vertices);
    let m = rng.gen_range(n - 1..=max_edges.max(n - 1));
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut ends = Vec::with_capacity(m);
    for i in 1..n {
        ends.push((rng.gen_range(0..i), i));
    }
    while ends.len() < m {
        ends.push((rng.gen_range(0..n), rng.gen_range(0..n)));
    }
    let edges = ends
        .into_iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            EdgeSpec::new(format!("e{k}"), &names[a], &names[b], rng.gen_range(lo..=hi))
        })
        .collect();
    let mut dirichlet: Vec<String> = names.iter().filter(|_| rng.gen_bool(0.35)).cloned().collect();
    if dirichlet.is_empty() {
        dirichlet.push(names[rng.gen_range(0..n)].clone());
    }
    MetricGraph::new(names, edges, dirichlet).expect("random graph is valid")
}

/// `(π_p/2)^p (p-1)` with `π_p = 2π / (p sin(π/p))` written out directly.
pub fn quarter_wave(p: f64, len: f64) -> f64 {
    let pi_p = 2.0 * std::f64::consts::PI / (p * (std::f64::consts::PI / p).sin());
    (pi_p / (2.0 * len)).powf(p) * (p - 1.0)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
