//! Loop/Star incidence matrices, graph Laplacians and quasi-Helmholtz projectors.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, conjugate_gradient, Csr, LinearOperator, RMat, SymEigen};
use crate::mesh::BasisTopology;

/// Above this dimension the pseudo-inverse is applied by deflated CG.
pub const DENSE_PINV_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IncidenceKind {
    Sigma,
    Lambda,
}

/// Sparse `{−1, 0, +1}` matrix with exactly one `+1` and one `−1` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    pub kind: IncidenceKind,
    ncols: usize,
    /// `(plus column, minus column)` per row.
    rows: Vec<(usize, usize)>,
}

/// Star-to-RWG matrix: `+1` at `c_plus`, `−1` at `c_minus`.
pub fn sigma_matrix(topo: &BasisTopology) -> IncidenceMatrix {
    IncidenceMatrix {
        kind: IncidenceKind::Sigma,
        ncols: topo.n_triangles,
        rows: topo.edges.iter().map(|e| (e.c_plus, e.c_minus)).collect(),
    }
}

/// Loop-to-RWG matrix: `+1` at the edge tail, `−1` at the edge head (both as
/// traversed by `c_plus`), which makes `ΣᵀΛ = 0`.
pub fn lambda_matrix(topo: &BasisTopology) -> IncidenceMatrix {
    IncidenceMatrix {
        kind: IncidenceKind::Lambda,
        ncols: topo.n_vertices,
        rows: topo.edges.iter().map(|e| (e.tail, e.head)).collect(),
    }
}

impl IncidenceMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn rows(&self) -> &[(usize, usize)] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        let (p, m) = self.rows[i];
        (p == j) as i8 - (m == j) as i8
    }

    pub fn to_csr(&self) -> Csr {
        let trip: Vec<_> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, &(p, m))| [(i, p, 1.0), (i, m, -1.0)])
            .collect();
        Csr::from_triplets(self.nrows(), self.ncols, &trip)
    }

    pub fn to_dense(&self) -> RMat {
        let mut d = RMat::zeros(self.nrows(), self.ncols);
        for (i, &(p, m)) in self.rows.iter().enumerate() {
            d[(i, p)] += 1.0;
            d[(i, m)] -= 1.0;
        }
        d
    }

    /// `y = X x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&(p, m)| x[p] - x[m]).collect()
    }

    /// `y = Xᵀ x`
    pub fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (&(p, m), xi) in self.rows.iter().zip(x) {
            y[p] += xi;
            y[m] -= xi;
        }
        y
    }

    /// `XᵀY` for another incidence matrix over the same rows, in exact integers.
    pub fn transpose_times(&self, other: &IncidenceMatrix) -> Vec<Vec<i64>> {
        let mut out = vec![vec![0i64; other.ncols]; self.ncols];
        for (i, &(p, m)) in self.rows.iter().enumerate() {
            let (q, r) = other.rows[i];
            out[p][q] += 1;
            out[p][r] -= 1;
            out[m][q] -= 1;
            out[m][r] += 1;
        }
        out
    }

    /// Column sets of the connected components of the column graph.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.ncols).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(a, b) in &self.rows {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for j in 0..self.ncols {
            let r = find(&mut parent, j);
            groups.entry(r).or_default().push(j);
        }
        groups.into_values().collect()
    }

    /// The column removed per connected component to reach full column rank
    /// (the last column of each component).
    pub fn removable_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self
            .components()
            .iter()
            .map(|c| *c.last().expect("non-empty component"))
            .collect();
        cols.sort_unstable();
        cols
    }
}

/// Which basis a Laplacian was formed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LaplacianBase {
    Sigma,
    Lambda,
    NormalizedSigma,
    NormalizedLambda,
}

#[derive(Debug, Clone)]
enum Storage {
    Sparse(Csr),
    Dense(RMat),
}

/// `XᵀX` with its known nullspace and a lazily computed eigendecomposition.
#[derive(Debug)]
pub struct GraphLaplacian {
    pub base: LaplacianBase,
    storage: Storage,
    nullspace: Vec<Vec<f64>>,
    eig: OnceLock<SymEigen>,
}

impl Clone for GraphLaplacian {
    fn clone(&self) -> Self {
        let eig = OnceLock::new();
        if let Some(e) = self.eig.get() {
            let _ = eig.set(e.clone());
        }
        GraphLaplacian {
            base: self.base,
            storage: self.storage.clone(),
            nullspace: self.nullspace.clone(),
            eig,
        }
    }
}

/// Combinatorial Laplacian `XᵀX`; its nullspace is spanned by the
/// component indicator vectors.
pub fn graph_laplacian(x: &IncidenceMatrix) -> GraphLaplacian {
    let mut trip = Vec::with_capacity(4 * x.nrows());
    for &(p, m) in x.rows() {
        trip.extend([(p, p, 1.0), (m, m, 1.0), (p, m, -1.0), (m, p, -1.0)]);
    }
    let n = x.ncols();
    let nullspace = x
        .components()
        .into_iter()
        .map(|c| {
            let mut v = vec![0.0; n];
            let s = 1.0 / (c.len() as f64).sqrt();
            c.iter().for_each(|&j| v[j] = s);
            v
        })
        .collect();
    GraphLaplacian {
        base: match x.kind {
            IncidenceKind::Sigma => LaplacianBase::Sigma,
            IncidenceKind::Lambda => LaplacianBase::Lambda,
        },
        storage: Storage::Sparse(Csr::from_triplets(n, n, &trip)),
        nullspace,
        eig: OnceLock::new(),
    }
}

impl GraphLaplacian {
    /// `XᵀX` for a dense basis whose nullity is known (`nullity` zero eigenvalues).
    pub fn from_dense_basis(base: LaplacianBase, x: &RMat, nullity: usize) -> Result<Self> {
        let mut l = x.transpose() * x;
        linalg::symmetrize(&mut l);
        let eig = SymEigen::new(&l)?;
        let nullspace = (0..nullity).map(|j| eig.vectors.col_as_slice(j).to_vec()).collect();
        let cell = OnceLock::new();
        let _ = cell.set(eig);
        Ok(GraphLaplacian {
            base,
            storage: Storage::Dense(l),
            nullspace,
            eig: cell,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.storage {
            Storage::Sparse(s) => s.nrows(),
            Storage::Dense(d) => d.nrows(),
        }
    }

    pub fn nullspace_dim(&self) -> usize {
        self.nullspace.len()
    }

    /// Orthonormal nullspace basis.
    pub fn nullspace(&self) -> &[Vec<f64>] {
        &self.nullspace
    }

    pub fn to_dense(&self) -> RMat {
        match &self.storage {
            Storage::Sparse(s) => s.to_dense(),
            Storage::Dense(d) => d.clone(),
        }
    }

    pub fn as_sparse(&self) -> Option<&Csr> {
        match &self.storage {
            Storage::Sparse(s) => Some(s),
            Storage::Dense(_) => None,
        }
    }

    /// Full eigendecomposition (ascending), computed once.
    pub fn eigen(&self) -> Result<&SymEigen> {
        if let Some(e) = self.eig.get() {
            return Ok(e);
        }
        let e = SymEigen::new(&self.to_dense())?;
        Ok(self.eig.get_or_init(|| e))
    }

    /// Eigenvalues with the known nullspace entries clamped to exactly zero.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let mut v = self.eigen()?.values.clone();
        v.iter_mut().take(self.nullspace_dim()).for_each(|x| *x = 0.0);
        Ok(v)
    }

    /// `L⁺` as a dense matrix.
    pub fn pinv_dense(&self) -> Result<RMat> {
        let e = self.eigen()?;
        let k = self.nullspace_dim();
        let w: Vec<f64> = e
            .values
            .iter()
            .enumerate()
            .map(|(i, &l)| if i < k { 0.0 } else { 1.0 / l })
            .collect();
        Ok(e.weighted(&w))
    }
}

impl LinearOperator for GraphLaplacian {
    fn dim(&self) -> usize {
        GraphLaplacian::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match &self.storage {
            Storage::Sparse(s) => s.matvec(x, y),
            Storage::Dense(d) => linalg::dense_matvec(d, x, y),
        }
    }
}

/// Minimum-norm solution `L⁺v`.
pub fn laplacian_pinv_apply(l: &GraphLaplacian, v: &[f64]) -> Result<Vec<f64>> {
    if l.dim() <= DENSE_PINV_CAP {
        let e = l.eigen()?;
        let k = l.nullspace_dim();
        let mut out = vec![0.0; l.dim()];
        for j in k..e.dim() {
            let col = e.vectors.col_as_slice(j);
            let c = linalg::dot(col, v) / e.values[j];
            out.iter_mut().zip(col).for_each(|(o, u)| *o += c * u);
        }
        Ok(out)
    } else {
        conjugate_gradient(l, v, l.nullspace(), 1e-12, 10 * l.dim()).map(|(x, _)| x)
    }
}

/// `X (XᵀX)⁺ Xᵀ` from a dense basis and the eigendecomposition of its Laplacian,
/// restricted to eigenvalue indices in `keep` (ascending positions).
pub(crate) fn spectral_projector(x: &RMat, eig: &SymEigen, keep: impl Iterator<Item = usize>) -> RMat {
    let idx: Vec<usize> = keep.collect();
    let mut v = RMat::zeros(eig.dim(), idx.len());
    for (c, &j) in idx.iter().enumerate() {
        let s = 1.0 / eig.values[j].sqrt();
        for (dst, src) in v.col_as_slice_mut(c).iter_mut().zip(eig.vectors.col_as_slice(j)) {
            *dst = s * src;
        }
    }
    let b = x * &v;
    let mut p = &b * b.transpose();
    linalg::symmetrize(&mut p);
    p
}

/// The five quasi-Helmholtz projectors.
#[derive(Debug, Clone)]
pub struct ProjectorSet {
    pub p_sigma: RMat,
    pub p_lambda_h: RMat,
    pub pd_lambda: RMat,
    pub pd_sigma_h: RMat,
    pub p_h: RMat,
    pub normalized: bool,
}

impl ProjectorSet {
    /// Builds the projectors from (possibly normalized) dense Σ and Λ and
    /// their Laplacians.
    pub fn from_bases(
        sigma: &RMat,
        sigma_lap: &GraphLaplacian,
        lambda: &RMat,
        lambda_lap: &GraphLaplacian,
        normalized: bool,
    ) -> Result<Self> {
        let n = sigma.nrows();
        if lambda.nrows() != n {
            return Err(Error::InvalidArgument("Σ and Λ row counts differ".into()));
        }
        let es = sigma_lap.eigen()?;
        let el = lambda_lap.eigen()?;
        let p_sigma = spectral_projector(sigma, es, sigma_lap.nullspace_dim()..es.dim());
        let pd_lambda = spectral_projector(lambda, el, lambda_lap.nullspace_dim()..el.dim());
        let id = RMat::identity(n, n);
        let p_lambda_h = &id - &p_sigma;
        let pd_sigma_h = &id - &pd_lambda;
        let p_h = &p_lambda_h - &pd_lambda;
        Ok(ProjectorSet {
            p_sigma,
            p_lambda_h,
            pd_lambda,
            pd_sigma_h,
            p_h,
            normalized,
        })
    }

    pub fn dim(&self) -> usize {
        self.p_sigma.nrows()
    }

    /// Dimension of the harmonic subspace (trace of `P^H`).
    pub fn harmonic_dim(&self) -> f64 {
        (0..self.dim()).map(|i| self.p_h[(i, i)]).sum()
    }
}

/// Combinatorial projector set.
pub fn projectors(sigma: &IncidenceMatrix, lambda: &IncidenceMatrix) -> Result<ProjectorSet> {
    ProjectorSet::from_bases(
        &sigma.to_dense(),
        &graph_laplacian(sigma),
        &lambda.to_dense(),
        &graph_laplacian(lambda),
        false,
    )
}

/// `Σ̃ = G^{−1/2} Σ G_p^{1/2}`, `Λ̃ = G^{1/2} Λ G_λ^{−1/2}` plus the Gram roots.
#[derive(Debug, Clone)]
pub struct NormalizedBases {
    pub sigma: RMat,
    pub lambda: RMat,
    pub g_sqrt: RMat,
    pub g_inv_sqrt: RMat,
}

pub fn normalized_bases(
    sigma: &IncidenceMatrix,
    lambda: &IncidenceMatrix,
    g: &RMat,
    g_p: &Csr,
    g_lambda: &RMat,
) -> Result<NormalizedBases> {
    let (g_sqrt, g_inv_sqrt) = linalg::spd_sqrt_pair(g)?;
    let (_, gl_inv_sqrt) = linalg::spd_sqrt_pair(g_lambda)?;
    let mut s = &g_inv_sqrt * sigma.to_dense();
    for j in 0..s.ncols() {
        let d = g_p.get(j, j);
        if !(d > 0.0) {
            return Err(Error::NotSpd(format!("patch Gram entry {j} is {d}")));
        }
        let r = d.sqrt();
        s.col_as_slice_mut(j).iter_mut().for_each(|v| *v *= r);
    }
    let l = &g_sqrt * lambda.to_dense() * &gl_inv_sqrt;
    Ok(NormalizedBases {
        sigma: s,
        lambda: l,
        g_sqrt,
        g_inv_sqrt,
    })
}

impl NormalizedBases {
    pub fn sigma_laplacian(&self, nullity: usize) -> Result<GraphLaplacian> {
        GraphLaplacian::from_dense_basis(LaplacianBase::NormalizedSigma, &self.sigma, nullity)
    }

    pub fn lambda_laplacian(&self, nullity: usize) -> Result<GraphLaplacian> {
        GraphLaplacian::from_dense_basis(LaplacianBase::NormalizedLambda, &self.lambda, nullity)
    }

    /// Coefficients `(l̃, s̃)` with `j̃ = Λ̃ l̃ + Σ̃ s̃` on simply connected surfaces.
    pub fn decompose(
        &self,
        sigma_lap: &GraphLaplacian,
        lambda_lap: &GraphLaplacian,
        j: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let lt = mat_t_vec(&self.lambda, j);
        let st = mat_t_vec(&self.sigma, j);
        Ok((
            laplacian_pinv_apply(lambda_lap, &lt)?,
            laplacian_pinv_apply(sigma_lap, &st)?,
        ))
    }
}

pub(crate) fn mat_t_vec(a: &RMat, x: &[f64]) -> Vec<f64> {
    (0..a.ncols()).map(|j| linalg::dot(a.col_as_slice(j), x)).collect()
}

/// Drops the listed columns.
pub fn remove_columns(x: &RMat, cols: &[usize]) -> RMat {
    let keep: Vec<usize> = (0..x.ncols()).filter(|j| !cols.contains(j)).collect();
    RMat::from_fn(x.nrows(), keep.len(), |i, c| x[(i, keep[c])])
}
