use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, conjugate_gradient, dot, LinearOperator, RMat, SymEigen};
use crate::qhd::GraphLaplacian;

/// Smallest eigenpairs of a Laplacian from deflated inverse subspace iteration.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal columns matching `values`.
    pub vectors: RMat,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Next eigenvalue above the computed ones, when it exists.
    pub next_value: Option<f64>,
    pub clusters: Vec<Cluster>,
}

/// A run of numerically coincident eigenvalues `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub start: usize,
    pub len: usize,
}

/// Groups ascending values whose consecutive gaps are below `gap_tol`.
pub fn find_clusters(values: &[f64], gap_tol: f64) -> Vec<Cluster> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        if i == values.len() || values[i] - values[i - 1] > gap_tol {
            if i - start > 1 {
                out.push(Cluster { start, len: i - start });
            }
            start = i;
        }
    }
    out
}

/// Modified Gram-Schmidt (two passes) against `fixed` and then within `x`.
fn orthonormalize(x: &mut RMat, fixed: &[Vec<f64>]) {
    for _ in 0..2 {
        for j in 0..x.ncols() {
            let mut col = x.col_as_slice(j).to_vec();
            linalg::project_out(&mut col, fixed);
            for k in 0..j {
                let q = x.col_as_slice(k);
                let c = dot(q, &col);
                col.iter_mut().zip(q).for_each(|(v, qi)| *v -= c * qi);
            }
            let nrm = linalg::norm(&col);
            let col: Vec<f64> = if nrm > 1e-300 {
                col.iter().map(|v| v / nrm).collect()
            } else {
                col
            };
            x.col_as_slice_mut(j).copy_from_slice(&col);
        }
    }
}

/// Computes the `n` smallest eigenpairs of `lap` (nullspace included) by
/// inverse subspace iteration with CG solves on the deflated Laplacian, until
/// `‖Lv − λv‖ ≤ tol·‖L‖` for every returned pair and for the next one.
pub fn smallest_eigenpairs(lap: &GraphLaplacian, n: usize, tol: f64, max_iter: usize, seed: u64) -> Result<Eigenpairs> {
    let dim = lap.dim();
    if n == 0 || n > dim {
        return Err(Error::InvalidArgument(format!("eigenpair count {n} outside 1..={dim}")));
    }
    let null = lap.nullspace();
    let k0 = null.len();
    let lnorm = norm_bound(lap);
    let free_dim = dim - k0;
    // wanted: the non-null pairs plus one more to locate the cut
    let wanted = (n.saturating_sub(k0) + 1).min(free_dim);
    let block = (wanted + wanted.clamp(2, 6)).min(free_dim);
    let mut values: Vec<f64> = vec![0.0; n.min(k0)];
    let mut vectors = RMat::zeros(dim, n);
    for (j, z) in null.iter().take(n).enumerate() {
        vectors.col_as_slice_mut(j).copy_from_slice(z);
    }
    let mut residuals = vec![0.0; n.min(k0)];
    if block == 0 {
        let clusters = find_clusters(&values, 1e-8 * lnorm);
        return Ok(Eigenpairs {
            values,
            vectors,
            residuals,
            iterations: 0,
            next_value: None,
            clusters,
        });
    }
    let mut x = RMat::zeros(dim, block);
    for j in 0..block {
        let r = linalg::random_vector(dim, seed.wrapping_add(j as u64));
        x.col_as_slice_mut(j).copy_from_slice(&r);
    }
    orthonormalize(&mut x, null);
    let mut iterations = 0;
    let (theta, ritz, res) = loop {
        // Rayleigh-Ritz on the current block
        let lx = lap.apply_block(&x);
        let mut h = x.transpose() * &lx;
        linalg::symmetrize(&mut h);
        let e = SymEigen::new(&h)?;
        let ritz = &x * &e.vectors;
        let lritz = &lx * &e.vectors;
        let res: Vec<f64> = (0..block)
            .map(|j| {
                let (a, b) = (lritz.col_as_slice(j), ritz.col_as_slice(j));
                a.iter()
                    .zip(b)
                    .map(|(ai, bi)| (ai - e.values[j] * bi).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let converged = block == free_dim || res[..wanted].iter().all(|&r| r <= tol * lnorm);
        if converged {
            break (e.values, ritz, res);
        }
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::NotConverged {
                method: "inverse subspace iteration",
                iterations: max_iter,
                residual: res[..wanted].iter().fold(0.0_f64, |m, &r| m.max(r)) / lnorm,
            });
        }
        let mut y = RMat::zeros(dim, block);
        for j in 0..block {
            let (sol, _) = conjugate_gradient(lap, ritz.col_as_slice(j), null, 1e-13, 10 * dim + 100)?;
            y.col_as_slice_mut(j).copy_from_slice(&sol);
        }
        orthonormalize(&mut y, null);
        x = y;
    };
    let extra = n.saturating_sub(k0);
    for j in 0..extra {
        values.push(theta[j]);
        residuals.push(res[j] / lnorm);
        vectors.col_as_slice_mut(k0 + j).copy_from_slice(ritz.col_as_slice(j));
    }
    let next_value = if n < dim { Some(theta[extra]) } else { None };
    let mut all = values.clone();
    all.extend(next_value);
    let clusters = find_clusters(&all, 1e-8 * lnorm);
    Ok(Eigenpairs {
        values,
        vectors,
        residuals,
        iterations,
        next_value,
        clusters,
    })
}

/// Gershgorin bound on `‖L‖₂`.
pub fn norm_bound(lap: &GraphLaplacian) -> f64 {
    match lap.as_sparse() {
        Some(s) => s.max_abs_row_sum(),
        None => {
            let d = lap.to_dense();
            (0..d.nrows())
                .map(|i| (0..d.ncols()).map(|j| d[(i, j)].abs()).sum::<f64>())
                .fold(0.0, f64::max)
        }
    }
}
