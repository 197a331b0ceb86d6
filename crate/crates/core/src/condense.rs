//! Direct solver for symmetric systems whose sparsity follows a graph mesh:
//! interior nodes of an edge form a tridiagonal chain, and chains meet only
//! at vertex nodes. Chains are eliminated onto the vertex nodes and the
//! small Schur complement is solved densely.

use crate::discretize::Mesh;

/// Tridiagonal LU with partial pivoting, in the layout of LAPACK `gttrf`.
struct Tridiagonal {
    dl: Vec<f64>,
    d: Vec<f64>,
    du: Vec<f64>,
    du2: Vec<f64>,
    swapped: Vec<bool>,
}

impl Tridiagonal {
    fn factor(mut dl: Vec<f64>, mut d: Vec<f64>, mut du: Vec<f64>) -> Option<Self> {
        let n = d.len();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if d.iter().any(|v| !v.is_finite()) {
            return None;
        }
        // the systems solved here are singular along the current iterate;
        // an exactly vanishing pivot is nudged instead of rejected
        let scale = d.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for v in d.iter_mut() {
            if *v == 0.0 {
                *v = f64::EPSILON * scale;
            }
        }
        Some(Tridiagonal { dl, d, du, du2, swapped })
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] -= self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// Dense Gaussian elimination with partial pivoting; `a` is row-major.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))?;
        if !a[piv * n + k].is_finite() {
            return None;
        }
        if a[piv * n + k] == 0.0 {
            let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            a[piv * n + k] = f64::EPSILON * scale;
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            b.swap(k, piv);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            if f != 0.0 {
                for j in k..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k * n + j] * b[j];
        }
        b[k] = s / a[k * n + k];
    }
    Some(b)
}

/// Symmetric matrix on the free nodes of a set of edges, stored as a
/// diagonal plus one off-diagonal entry per element.
pub(crate) struct MeshMatrix<'a> {
    mesh: &'a Mesh,
    edges: &'a [usize],
    free: &'a [bool],
    pub diag: Vec<f64>,
    /// Indexed like `mesh.elements()`.
    pub off: Vec<f64>,
}

impl<'a> MeshMatrix<'a> {
    pub fn new(mesh: &'a Mesh, edges: &'a [usize], free: &'a [bool]) -> Self {
        MeshMatrix {
            mesh,
            edges,
            free,
            diag: vec![0.0; mesh.node_count()],
            off: vec![0.0; mesh.elements().len()],
        }
    }

    /// Solves `A x = b` on the free nodes; other entries of `x` are zero.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let mesh = self.mesh;
        let nv = mesh.graph().vertex_count();
        // dense index of each free vertex node
        let mut slot = vec![usize::MAX; nv];
        let mut nf = 0;
        for e in self.edges {
            let em = &mesh.edge_meshes()[*e];
            for &v in [em.nodes[0], em.nodes[em.nodes.len() - 1]].iter() {
                if self.free[v] && slot[v] == usize::MAX {
                    slot[v] = nf;
                    nf += 1;
                }
            }
        }
        let mut s = vec![0.0; nf * nf];
        let mut rhs = vec![0.0; nf];
        for v in 0..nv {
            if slot[v] != usize::MAX {
                s[slot[v] * nf + slot[v]] = self.diag[v];
                rhs[slot[v]] = b[v];
            }
        }
        let first_element = self.first_elements();
        let mut chains = Vec::with_capacity(self.edges.len());
        for &e in self.edges {
            let em = &mesh.edge_meshes()[e];
            let k0 = first_element[e];
            let (tail, head) = (em.nodes[0], em.nodes[em.nodes.len() - 1]);
            let interior = &em.nodes[1..em.nodes.len() - 1];
            if interior.is_empty() {
                if self.free[tail] && self.free[head] {
                    let c = self.off[k0];
                    s[slot[tail] * nf + slot[head]] += c;
                    s[slot[head] * nf + slot[tail]] += c;
                }
                chains.push(None);
                continue;
            }
            let m = interior.len();
            let d: Vec<f64> = interior.iter().map(|&n| self.diag[n]).collect();
            let offs: Vec<f64> = (1..m).map(|j| self.off[k0 + j]).collect();
            let lu = Tridiagonal::factor(offs.clone(), d, offs)?;
            // couplings of the first and last interior node to the vertices
            let c_tail = self.off[k0];
            let c_head = self.off[k0 + m];
            let mut y = interior.iter().map(|&n| b[n]).collect::<Vec<f64>>();
            lu.solve(&mut y);
            // (vertex, coupling, position in the chain, A_II^{-1} c e_pos)
            let mut ends: Vec<(usize, f64, usize, Vec<f64>)> = Vec::new();
            for (v, c, pos) in [(tail, c_tail, 0), (head, c_head, m - 1)] {
                if !self.free[v] {
                    continue;
                }
                let mut col = vec![0.0; m];
                col[pos] = c;
                lu.solve(&mut col);
                ends.push((v, c, pos, col));
            }
            for (v, cv, pos_v, _) in &ends {
                for (w, _, _, colw) in &ends {
                    s[slot[*v] * nf + slot[*w]] -= cv * colw[*pos_v];
                }
                rhs[slot[*v]] -= cv * y[*pos_v];
            }
            chains.push(Some((y, ends.into_iter().map(|(v, _, _, col)| (v, col)).collect::<Vec<_>>())));
        }
        let xv = if nf > 0 { dense_solve(s, rhs, nf)? } else { Vec::new() };
        let mut x = vec![0.0; b.len()];
        for v in 0..nv {
            if slot[v] != usize::MAX {
                x[v] = xv[slot[v]];
            }
        }
        for (&e, chain) in self.edges.iter().zip(chains) {
            let Some((y, ends)) = chain else { continue };
            let em = &mesh.edge_meshes()[e];
            let interior = &em.nodes[1..em.nodes.len() - 1];
            // x_I = A_II^{-1} b_I - Σ_v A_II^{-1} (c_v e_v) x_v
            let mut xi = y;
            for (v, col) in &ends {
                let xv = x[*v];
                xi.iter_mut().zip(col).for_each(|(a, c)| *a -= c * xv);
            }
            for (&n, val) in interior.iter().zip(xi) {
                x[n] = val;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(x)
    }

    fn first_elements(&self) -> Vec<usize> {
        let mut first = vec![usize::MAX; self.mesh.graph().edge_count()];
        for (k, el) in self.mesh.elements().iter().enumerate().rev() {
            first[el.edge] = k;
        }
        first
    }
}
