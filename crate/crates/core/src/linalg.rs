//! Dense and sparse linear-algebra plumbing shared by every module.
//!
//! Dense work goes through `faer`; the sparse side is a minimal CSR type
//! because the only sparse matrices in play are incidence products with a
//! handful of entries per row.

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use faer::c64;

use crate::error::{Error, Result};

pub type RMat = Mat<f64>;
pub type CMat = Mat<c64>;

/// A real linear map acting on vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }

    /// Applies the map to each column of `block`.
    fn apply_block(&self, block: &RMat) -> RMat {
        let mut out = RMat::zeros(self.dim(), block.ncols());
        for j in 0..block.ncols() {
            self.apply(block.col_as_slice(j), out.col_as_slice_mut(j));
        }
        out
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl Csr {
    /// Builds from unsorted triplets, summing duplicates and dropping exact zeros.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut data: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(sorted.len());
        for (i, j, v) in sorted {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                row_of.push(i);
                last = Some((i, j));
            }
        }
        let mut keep_idx = Vec::with_capacity(indices.len());
        let mut keep_val = Vec::with_capacity(indices.len());
        for ((j, v), i) in indices.into_iter().zip(data).zip(row_of) {
            if v != 0.0 {
                indptr[i + 1] += 1;
                keep_idx.push(j);
                keep_val.push(v);
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices: keep_idx,
            data: keep_val,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Iterates over `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.data[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn to_dense(&self) -> RMat {
        let mut m = RMat::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Frobenius-type largest row sum of absolute values (an upper bound on the 2-norm
    /// for symmetric matrices).
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }
}

impl LinearOperator for Csr {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y)
    }

    fn apply_block(&self, block: &RMat) -> RMat {
        let mut out = RMat::zeros(self.nrows, block.ncols());
        for i in 0..self.nrows {
            for (k, v) in self.row(i) {
                for j in 0..block.ncols() {
                    out[(i, j)] += v * block[(k, j)];
                }
            }
        }
        out
    }
}

impl LinearOperator for RMat {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        dense_matvec(self, x, y)
    }

    fn apply_block(&self, block: &RMat) -> RMat {
        self * block
    }
}

pub fn dense_matvec(a: &RMat, x: &[f64], y: &mut [f64]) {
    assert_eq!(a.ncols(), x.len());
    assert_eq!(a.nrows(), y.len());
    y.iter_mut().for_each(|v| *v = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (yi, aij) in y.iter_mut().zip(a.col_as_slice(j)) {
            *yi += aij * xj;
        }
    }
}

pub fn complex_matvec(a: &CMat, x: &[c64]) -> Vec<c64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![c64::new(0.0, 0.0); a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        for (yi, &aij) in y.iter_mut().zip(a.col_as_slice(j)) {
            *yi += aij * xj;
        }
    }
    y
}

/// `A^H x`
pub fn complex_matvec_adjoint(a: &CMat, x: &[c64]) -> Vec<c64> {
    assert_eq!(a.nrows(), x.len());
    (0..a.ncols())
        .map(|j| a.col_as_slice(j).iter().zip(x).map(|(aij, xi)| aij.conj() * xi).sum())
        .collect()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn cnorm(x: &[c64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn to_complex(a: &RMat) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| c64::new(a[(i, j)], 0.0))
}

/// Splits a complex matrix into real and imaginary parts.
pub fn split_complex(a: &CMat) -> (RMat, RMat) {
    (
        RMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].re),
        RMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].im),
    )
}

pub fn join_complex(re: &RMat, im: &RMat) -> CMat {
    CMat::from_fn(re.nrows(), re.ncols(), |i, j| c64::new(re[(i, j)], im[(i, j)]))
}

/// `A B` for real `A`, complex `B`, with two real products.
pub fn real_times_complex(a: &RMat, b: &CMat) -> CMat {
    let (re, im) = split_complex(b);
    join_complex(&(a * &re), &(a * &im))
}

/// `B A` for complex `B`, real `A`.
pub fn complex_times_real(b: &CMat, a: &RMat) -> CMat {
    let (re, im) = split_complex(b);
    join_complex(&(&re * a), &(&im * a))
}

pub fn frobenius(a: &RMat) -> f64 {
    a.norm_l2()
}

pub fn cfrobenius(a: &CMat) -> f64 {
    a.norm_l2()
}

/// `‖a − b‖_F / max(‖a‖_F, tiny)`
pub fn rel_diff(a: &RMat, b: &RMat) -> f64 {
    let d = a - b;
    d.norm_l2() / a.norm_l2().max(f64::MIN_POSITIVE)
}

pub fn crel_diff(a: &CMat, b: &CMat) -> f64 {
    let d = a - b;
    d.norm_l2() / a.norm_l2().max(f64::MIN_POSITIVE)
}

pub fn max_abs(a: &RMat) -> f64 {
    a.norm_max()
}

/// `y += a·x`
pub fn axpy(y: &mut RMat, a: f64, x: &RMat) {
    for j in 0..x.ncols() {
        for (yi, xi) in y.col_as_slice_mut(j).iter_mut().zip(x.col_as_slice(j)) {
            *yi += a * xi;
        }
    }
}

pub fn scale_in_place(y: &mut RMat, a: f64) {
    for j in 0..y.ncols() {
        y.col_as_slice_mut(j).iter_mut().for_each(|v| *v *= a);
    }
}

pub fn symmetrize(a: &mut RMat) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Eigendecomposition of a real symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: RMat,
}

impl SymEigen {
    pub fn new(a: &RMat) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidArgument(format!(
                "eigendecomposition of a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let evd = a
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Decomposition(format!("{e:?}")))?;
        let s = evd.S();
        let values: Vec<f64> = (0..a.nrows()).map(|i| s[i]).collect();
        Ok(SymEigen {
            values,
            vectors: evd.U().to_owned(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(g(λ)) Vᵀ`
    pub fn function(&self, g: impl Fn(f64) -> f64) -> RMat {
        let weights: Vec<f64> = self.values.iter().map(|&l| g(l)).collect();
        self.weighted(&weights)
    }

    /// `V diag(w) Vᵀ`
    pub fn weighted(&self, w: &[f64]) -> RMat {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for (j, &wj) in w.iter().enumerate() {
            for v in scaled.col_as_slice_mut(j) {
                *v *= wj;
            }
        }
        let mut out = &scaled * self.vectors.transpose();
        debug_assert_eq!(out.nrows(), n);
        symmetrize(&mut out);
        out
    }

    pub fn max_abs_eigenvalue(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Square root and inverse square root of an SPD matrix.
pub fn spd_sqrt_pair(a: &RMat) -> Result<(RMat, RMat)> {
    let eig = SymEigen::new(a)?;
    let min = eig.values.first().copied().unwrap_or(0.0);
    if !(min > 0.0) {
        return Err(Error::NotSpd(format!("smallest eigenvalue {min:e}")));
    }
    Ok((eig.function(f64::sqrt), eig.function(|l| 1.0 / l.sqrt())))
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, treating eigenvalues
/// below `rel_tol·max|λ|` as zero.
pub fn sym_pinv(a: &RMat, rel_tol: f64) -> Result<RMat> {
    let eig = SymEigen::new(a)?;
    let cut = rel_tol * eig.max_abs_eigenvalue();
    Ok(eig.function(|l| if l.abs() > cut { 1.0 / l } else { 0.0 }))
}

/// Numerical rank from singular values with relative threshold.
pub fn rank(a: &RMat, rel_tol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    Ok(s.iter().filter(|&&v| v > rel_tol * smax).count())
}

/// Singular values in non-increasing order.
pub fn singular_values(a: &RMat) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values().map_err(|e| Error::Decomposition(format!("{e:?}")))
}

pub fn complex_singular_values(a: &CMat) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values().map_err(|e| Error::Decomposition(format!("{e:?}")))
}

/// Cholesky factor of an SPD matrix, reused for repeated solves.
pub struct SpdSolver {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl SpdSolver {
    pub fn new(a: &RMat) -> Result<Self> {
        let llt = a.llt(Side::Lower).map_err(|e| Error::NotSpd(format!("{e:?}")))?;
        Ok(SpdSolver { llt })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        use faer::linalg::solvers::Solve;
        let mut m = faer::MatMut::from_column_major_slice_mut(x, x.len(), 1);
        self.llt.solve_in_place(&mut m);
    }

    pub fn solve_block(&self, b: &RMat) -> RMat {
        use faer::linalg::solvers::Solve;
        self.llt.solve(b)
    }
}

/// Outcome of a Krylov solve.
#[derive(Debug, Clone)]
pub struct KrylovStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate gradients on an SPD (or PSD with known nullspace) operator.
///
/// `nullspace` holds orthonormal vectors; the right-hand side and iterates
/// are kept orthogonal to them, which yields the minimum-norm solution.
pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    b: &[f64],
    nullspace: &[Vec<f64>],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, KrylovStats)> {
    let n = op.dim();
    let deflate = |v: &mut [f64]| project_out(v, nullspace);
    let mut r = b.to_vec();
    deflate(&mut r);
    let bnorm = norm(&r);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            KrylovStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        deflate(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotConverged {
                method: "conjugate gradient",
                iterations: it,
                residual: rr.sqrt() / bnorm,
            });
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * bnorm {
            deflate(&mut x);
            return Ok((
                x,
                KrylovStats {
                    iterations: it,
                    relative_residual: rr_new.sqrt() / bnorm,
                },
            ));
        }
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
    }
    Err(Error::NotConverged {
        method: "conjugate gradient",
        iterations: max_iter,
        residual: rr.sqrt() / bnorm,
    })
}

/// Removes the components of `v` along the orthonormal vectors `basis`.
pub fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for z in basis {
        let c = dot(z, v);
        v.iter_mut().zip(z).for_each(|(vi, zi)| *vi -= c * zi);
    }
}

/// Largest eigenvalue magnitude of a symmetric operator by power iteration.
pub fn symmetric_norm_estimate(op: &dyn LinearOperator, rel_tol: f64, max_iter: usize, seed: u64) -> Result<f64> {
    let n = op.dim();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![0.0; n];
    let mut est = 0.0;
    for _ in 0..max_iter {
        // Iterate with A² so sign-alternating dominant pairs still converge.
        op.apply(&x, &mut y);
        op.apply(&y, &mut x);
        let nrm = norm(&x);
        if nrm == 0.0 {
            return Ok(0.0);
        }
        let new = nrm.sqrt();
        x.iter_mut().for_each(|v| *v /= nrm);
        if (new - est).abs() <= rel_tol * new {
            return Ok(new);
        }
        est = new;
    }
    Err(Error::NotConverged {
        method: "power iteration",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Spectral norm of a complex matrix by power iteration on `AᴴA`.
pub fn complex_norm_estimate(a: &CMat, rel_tol: f64, max_iter: usize, seed: u64) -> Result<f64> {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<c64> = (0..n)
        .map(|_| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let nx = cnorm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut est = 0.0;
    for _ in 0..max_iter {
        let y = complex_matvec(a, &x);
        let z = complex_matvec_adjoint(a, &y);
        let nz = cnorm(&z);
        if nz == 0.0 {
            return Ok(0.0);
        }
        let new = nz.sqrt();
        x = z.into_iter().map(|v| v / nz).collect();
        if (new - est).abs() <= rel_tol * new {
            return Ok(new);
        }
        est = new;
    }
    Err(Error::NotConverged {
        method: "power iteration",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton on the Legendre recurrence).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Seeded random vector with entries uniform in `[-1, 1)`.
pub fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()
}
