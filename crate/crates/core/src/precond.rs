//! EFIE preconditioners from dyadically sampled filters.
//!
//! Both families split the spectrum of a graph Laplacian `L = XᵀX` into bands
//! of ranks `[α^l, α^{l+1} − 1]` and rescale each band by a sampled power of
//! its smallest eigenvalue (or, in the norm-scaled variant, by the inverse
//! square root of the operator norm restricted to the band):
//!
//! * filtered Loop-Star: `W = [√c_Λ Λ_{p,α}  √c_Σ Σ_{p,α}]`, system `Wᵀ T W`;
//! * quasi-Helmholtz filters: `Q = √b_Λ Q^Λ + i √b_Σ Q^Σ + √b_H P^H`, system `Q T Q`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::efie::{normalize_with, OperatorSet};
use crate::filters::{band_combination, band_windows, EigenvalueSampler, FilterBackend, SamplerKind};
use crate::linalg::{self, c64, CMat, RMat};
use crate::mesh::{gram_patch, gram_pyramid, gram_rwg, BasisTopology, TriangleMesh};
use crate::qhd::{
    graph_laplacian, lambda_matrix, normalized_bases, remove_columns, sigma_matrix, GraphLaplacian, ProjectorSet,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Sigma,
    Lambda,
}

/// Band layout and per-band weights for one side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DyadicSampling {
    pub alpha: usize,
    pub side: Side,
    /// Interior filtering indices `α^l − 1 < N_X`; the terminal band ends at `N_X`.
    pub level_indices: Vec<usize>,
    /// Rank (1-based, ascending) whose eigenvalue weights each band.
    pub sample_ranks: Vec<usize>,
    pub eigen_samples: Vec<f64>,
    pub exponent: f64,
    /// One per band, `level_indices.len() + 1` in total.
    pub level_weights: Vec<f64>,
    pub dim: usize,
}

impl DyadicSampling {
    pub fn n_bands(&self) -> usize {
        self.level_weights.len()
    }
}

/// Cuts `α^l − 1` for `l ≥ 1` while below `n`.
pub fn dyadic_cuts(alpha: usize, n: usize) -> Vec<usize> {
    let mut cuts = Vec::new();
    let mut p = alpha;
    while p - 1 < n {
        if p >= 2 {
            cuts.push(p - 1);
        }
        p = match p.checked_mul(alpha) {
            Some(v) => v,
            None => break,
        };
    }
    cuts
}

/// Samples `λ_{rank}^{exponent}` at the first rank of every dyadic band.
///
/// Ranks inside the nullspace are replaced by the first nonzero rank
/// (`nullity + 1`): the band's nullspace part is annihilated by `X` anyway.
pub fn build_dyadic_sampling(
    sampler: &EigenvalueSampler,
    nullity: usize,
    alpha: usize,
    side: Side,
    exponent: f64,
) -> Result<DyadicSampling> {
    if alpha < 2 {
        return Err(Error::InvalidArgument(format!("alpha must be at least 2, got {alpha}")));
    }
    let dim = sampler.dim();
    if dim <= nullity {
        return Err(Error::InvalidArgument("Laplacian has no nonzero eigenvalues".into()));
    }
    let level_indices = dyadic_cuts(alpha, dim);
    let mut sample_ranks = Vec::with_capacity(level_indices.len() + 1);
    let mut start = 1usize;
    for l in 0..=level_indices.len() {
        sample_ranks.push(start.max(nullity + 1));
        start = level_indices.get(l).map_or(start, |b| b + 1);
    }
    let eigen_samples: Vec<f64> = sample_ranks.iter().map(|&r| sampler.value_at_rank(r)).collect();
    let level_weights: Vec<f64> = eigen_samples
        .iter()
        .map(|&v| if exponent == 0.0 { 1.0 } else { v.powf(exponent) })
        .collect();
    if let Some((i, w)) = level_weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w > 0.0))
    {
        return Err(Error::Decomposition(format!(
            "band {i} weight {w} from eigenvalue sample {}",
            eigen_samples[i]
        )));
    }
    Ok(DyadicSampling {
        alpha,
        side,
        level_indices,
        sample_ranks,
        eigen_samples,
        exponent,
        level_weights,
        dim,
    })
}

/// Mesh-level preconditioner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecondConfig {
    pub alpha: usize,
    pub backend: FilterBackend,
    pub sampler: SamplerKind,
    /// Use Gram-normalized bases and operators.
    pub normalized: bool,
    pub norm_tol: f64,
    pub norm_max_iter: usize,
    pub seed: u64,
}

impl Default for PrecondConfig {
    fn default() -> Self {
        PrecondConfig {
            alpha: 2,
            backend: FilterBackend::ExactSvd,
            sampler: SamplerKind::Exact,
            normalized: false,
            norm_tol: 1e-3,
            norm_max_iter: 200,
            seed: 0,
        }
    }
}

/// Frequency-independent bases, Laplacians, projectors and eigenvalue samplers.
pub struct PrecondContext {
    pub config: PrecondConfig,
    pub sigma: RMat,
    pub lambda: RMat,
    pub sigma_lap: GraphLaplacian,
    pub lambda_lap: GraphLaplacian,
    pub projectors: ProjectorSet,
    pub removable_sigma: Vec<usize>,
    pub removable_lambda: Vec<usize>,
    pub genus_zero: bool,
    pub g_inv_sqrt: Option<RMat>,
    sigma_sampler: EigenvalueSampler,
    lambda_sampler: EigenvalueSampler,
}

impl PrecondContext {
    pub fn new(mesh: &TriangleMesh, topo: &BasisTopology, config: PrecondConfig) -> Result<Self> {
        if config.alpha < 2 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be at least 2, got {}",
                config.alpha
            )));
        }
        let s = sigma_matrix(topo);
        let l = lambda_matrix(topo);
        let removable_sigma = s.removable_columns();
        let removable_lambda = l.removable_columns();
        let components = removable_sigma.len();
        let euler = mesh.n_vertices() as i64 - topo.n_edges() as i64 + mesh.n_triangles() as i64;
        let genus_zero = euler == 2 * components as i64;
        let (sigma, lambda, sigma_lap, lambda_lap, g_inv_sqrt) = if config.normalized {
            let nb = normalized_bases(
                &s,
                &l,
                &gram_rwg(mesh, topo).to_dense(),
                &gram_patch(mesh),
                &gram_pyramid(mesh).to_dense(),
            )?;
            let sl = nb.sigma_laplacian(components)?;
            let ll = nb.lambda_laplacian(components)?;
            (nb.sigma.clone(), nb.lambda.clone(), sl, ll, Some(nb.g_inv_sqrt))
        } else {
            (
                s.to_dense(),
                l.to_dense(),
                graph_laplacian(&s),
                graph_laplacian(&l),
                None,
            )
        };
        let projectors = ProjectorSet::from_bases(&sigma, &sigma_lap, &lambda, &lambda_lap, config.normalized)?;
        let sigma_sampler = EigenvalueSampler::new(&sigma_lap, config.sampler, config.seed)?;
        let lambda_sampler = EigenvalueSampler::new(&lambda_lap, config.sampler, config.seed ^ 1)?;
        Ok(PrecondContext {
            config,
            sigma,
            lambda,
            sigma_lap,
            lambda_lap,
            projectors,
            removable_sigma,
            removable_lambda,
            genus_zero,
            g_inv_sqrt,
            sigma_sampler,
            lambda_sampler,
        })
    }

    fn side(&self, side: Side) -> (&RMat, &GraphLaplacian, &EigenvalueSampler) {
        match side {
            Side::Sigma => (&self.sigma, &self.sigma_lap, &self.sigma_sampler),
            Side::Lambda => (&self.lambda, &self.lambda_lap, &self.lambda_sampler),
        }
    }

    /// Normalizes `ops` when the context is normalized, otherwise returns a copy.
    pub fn prepare(&self, ops: &OperatorSet) -> OperatorSet {
        match (&self.g_inv_sqrt, ops.normalized) {
            (Some(g), false) => normalize_with(ops, g),
            _ => ops.clone(),
        }
    }

    pub fn sampling(&self, side: Side, exponent: f64) -> Result<DyadicSampling> {
        let (_, lap, sampler) = self.side(side);
        build_dyadic_sampling(sampler, lap.nullspace_dim(), self.config.alpha, side, exponent)
    }

    fn cutoffs(&self, side: Side, sampling: &DyadicSampling) -> Vec<f64> {
        let (_, _, sampler) = self.side(side);
        sampling
            .level_indices
            .iter()
            .map(|&b| sampler.cutoff_below_rank(b))
            .collect()
    }

    /// Weighted band sum `Ω = Σ_l w_l (χ_{b_l} − χ_{b_{l−1}})`.
    pub fn band_operator(&self, sampling: &DyadicSampling) -> Result<RMat> {
        let (_, lap, _) = self.side(sampling.side);
        let cutoffs = self.cutoffs(sampling.side, sampling);
        band_combination(
            lap,
            &self.config.backend,
            &sampling.level_indices,
            Some(&cutoffs),
            &sampling.level_weights,
        )
    }

    /// `X_{p,α} = X Ω` with the listed columns dropped.
    pub fn filtered_ls_basis(&self, sampling: &DyadicSampling, remove: &[usize]) -> Result<RMat> {
        let (x, _, _) = self.side(sampling.side);
        Ok(remove_columns(&(x * self.band_operator(sampling)?), remove))
    }

    /// `Q^X_{p,α} = X L⁺ Ω Xᵀ`.
    pub fn filter_sum(&self, sampling: &DyadicSampling) -> Result<RMat> {
        let (x, lap, _) = self.side(sampling.side);
        let core = lap.pinv_dense()? * self.band_operator(sampling)?;
        let mut q = x * core * x.transpose();
        linalg::symmetrize(&mut q);
        Ok(q)
    }

    /// Standard (unfiltered) Loop-Star: unit weights.
    pub fn loop_star(&self, ops: &OperatorSet) -> Result<PreconditionerBundle> {
        self.w_variant(ops, Variant::LoopStar, 0.0, 0.0)
    }

    /// Filtered Loop-Star with exponents `−3/4` (Σ) and `−1/4` (Λ).
    pub fn filtered_loop_star(&self, ops: &OperatorSet) -> Result<PreconditionerBundle> {
        self.w_variant(ops, Variant::FilteredLoopStar, -0.75, -0.25)
    }

    fn w_variant(&self, ops: &OperatorSet, variant: Variant, es: f64, el: f64) -> Result<PreconditionerBundle> {
        if !self.genus_zero {
            return Err(Error::InvalidArgument(
                "the Loop-Star variants need a simply connected surface; use the filter variant".into(),
            ));
        }
        let ss = self.sampling(Side::Sigma, es)?;
        let sl = self.sampling(Side::Lambda, el)?;
        let sigma_p = self.filtered_ls_basis(&ss, &self.removable_sigma)?;
        let lambda_p = self.filtered_ls_basis(&sl, &self.removable_lambda)?;
        let mut b = build_w(ops, &sigma_p, &lambda_p, &self.config)?;
        b.meta.variant = variant;
        b.meta.removed_columns = RemovedColumns {
            sigma: self.removable_sigma.clone(),
            lambda: self.removable_lambda.clone(),
        };
        b.meta.isolated_values = self.removable_sigma.len() + self.removable_lambda.len();
        b.meta.samplings = vec![ss, sl];
        b.g_inv_sqrt = self.g_inv_sqrt.clone();
        Ok(b)
    }

    /// Standard quasi-Helmholtz projector preconditioner (unit weights).
    pub fn qh_projectors(&self, ops: &OperatorSet) -> Result<PreconditionerBundle> {
        self.q_variant(ops, Variant::QhProjectors, 0.0, 0.0)
    }

    /// Quasi-Helmholtz filters with exponents `−1/4` (Σ) and `+1/4` (Λ).
    pub fn qh_filters(&self, ops: &OperatorSet) -> Result<PreconditionerBundle> {
        self.q_variant(ops, Variant::QhFilters, -0.25, 0.25)
    }

    fn q_variant(&self, ops: &OperatorSet, variant: Variant, es: f64, el: f64) -> Result<PreconditionerBundle> {
        let ss = self.sampling(Side::Sigma, es)?;
        let sl = self.sampling(Side::Lambda, el)?;
        let q_sigma = self.filter_sum(&ss)?;
        let q_lambda = self.filter_sum(&sl)?;
        let mut b = build_q(ops, q_sigma, q_lambda, &self.projectors, &self.config)?;
        b.meta.variant = variant;
        b.meta.samplings = vec![ss, sl];
        b.g_inv_sqrt = self.g_inv_sqrt.clone();
        Ok(b)
    }

    /// Quasi-Helmholtz filters with per-band norm-based weights
    /// `b_l = ‖ΔP_l Th ΔP_l‖^{−1/2}` (Σ) and `d_l = ‖ΔP_l Ts ΔP_l‖^{−1/2}` (Λ).
    ///
    /// Bands whose projector vanishes (those inside the nullspace) are dropped;
    /// a nonzero band on which the operator vanishes is an error.
    pub fn qh_filters_norm_scaled(&self, ops: &OperatorSet) -> Result<PreconditionerBundle> {
        let mut samplings = Vec::new();
        let mut parts = Vec::new();
        let mut band_weights = Vec::new();
        for (side, op) in [(Side::Sigma, &ops.th), (Side::Lambda, &ops.ts)] {
            let sampling = self.sampling(side, 0.0)?;
            let (x, lap, _) = self.side(side);
            let cutoffs = self.cutoffs(side, &sampling);
            let bands = band_windows(lap, &self.config.backend, &sampling.level_indices, Some(&cutoffs))?;
            let pinv = lap.pinv_dense()?;
            let op_norm = self.norm(op.nrows(), |v| linalg::complex_matvec(op, v))?;
            let mut core = RMat::zeros(lap.dim(), lap.dim());
            let mut weights = Vec::with_capacity(bands.len());
            let cores: Vec<RMat> = bands.iter().map(|b| &pinv * b).collect();
            let scale = cores.iter().map(linalg::frobenius).fold(0.0_f64, f64::max);
            let nullity = lap.nullspace_dim();
            let band_ends: Vec<usize> = sampling.level_indices.iter().copied().chain([lap.dim()]).collect();
            for (l, m) in cores.iter().enumerate() {
                // bands inside the nullspace are empty whatever the backend leaks
                if band_ends[l] <= nullity || linalg::frobenius(m) <= 1e-10 * scale {
                    weights.push(0.0);
                    continue;
                }
                // ΔP v = X (M (Xᵀ v))
                let apply_p = |v: &[c64]| -> Vec<c64> {
                    let (re, im): (Vec<f64>, Vec<f64>) = v.iter().map(|z| (z.re, z.im)).unzip();
                    let f = |u: &[f64]| x_apply(x, m, u);
                    f(&re).into_iter().zip(f(&im)).map(|(a, b)| c64::new(a, b)).collect()
                };
                let nrm = self.norm(op.nrows(), |v| apply_p(&linalg::complex_matvec(op, &apply_p(v))))?;
                if !(nrm > 1e-12 * op_norm) {
                    return Err(Error::ZeroBlock(l));
                }
                let w = nrm.powf(-0.5);
                linalg::axpy(&mut core, w, m);
                weights.push(w);
            }
            let mut q = x * core * x.transpose();
            linalg::symmetrize(&mut q);
            parts.push(q);
            band_weights.push(weights);
            samplings.push(sampling);
        }
        let q_lambda = parts.pop().expect("two sides");
        let q_sigma = parts.pop().expect("two sides");
        let mut b = build_q(ops, q_sigma, q_lambda, &self.projectors, &self.config)?;
        b.meta.variant = Variant::QhFiltersNormScaled;
        b.meta.samplings = samplings;
        b.meta.band_norm_weights = Some(band_weights);
        b.g_inv_sqrt = self.g_inv_sqrt.clone();
        Ok(b)
    }

    fn norm(&self, n: usize, apply: impl Fn(&[c64]) -> Vec<c64>) -> Result<f64> {
        symmetric_block_norm(
            n,
            apply,
            self.config.norm_tol,
            self.config.norm_max_iter,
            self.config.seed,
        )
    }
}

/// `X (M (Xᵀ u))` for real `u`.
fn x_apply(x: &RMat, m: &RMat, u: &[f64]) -> Vec<f64> {
    let xt: Vec<f64> = (0..x.ncols()).map(|j| linalg::dot(x.col_as_slice(j), u)).collect();
    let mut mx = vec![0.0; m.nrows()];
    linalg::dense_matvec(m, &xt, &mut mx);
    let mut out = vec![0.0; x.nrows()];
    linalg::dense_matvec(x, &mx, &mut out);
    out
}

/// `‖A‖₂` of a complex-symmetric map by power iteration on `AᴴA`, using
/// `Aᴴ v = conj(A conj(v))`.
pub fn symmetric_block_norm(
    n: usize,
    apply: impl Fn(&[c64]) -> Vec<c64>,
    rel_tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let r = linalg::random_vector(2 * n, seed);
    let mut x: Vec<c64> = (0..n).map(|i| c64::new(r[i], r[n + i])).collect();
    let nx = linalg::cnorm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut est = 0.0;
    for _ in 0..max_iter {
        let y = apply(&x);
        let yc: Vec<c64> = y.iter().map(|v| v.conj()).collect();
        let z: Vec<c64> = apply(&yc).into_iter().map(|v| v.conj()).collect();
        let nz = linalg::cnorm(&z);
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Identity,
    LoopStar,
    FilteredLoopStar,
    QhProjectors,
    QhFilters,
    QhFiltersNormScaled,
}

impl Variant {
    pub fn is_q(self) -> bool {
        matches!(
            self,
            Variant::QhProjectors | Variant::QhFilters | Variant::QhFiltersNormScaled
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RemovedColumns {
    pub sigma: Vec<usize>,
    pub lambda: Vec<usize>,
}

/// Serializable description of a bundle.
#[derive(Debug, Clone, Serialize)]
pub struct BundleMeta {
    pub variant: Variant,
    pub alpha: usize,
    pub backend: String,
    pub normalized: bool,
    /// `c_Σ`, `c_Λ` or `b_Λ`, `b_Σ`, `b_H`.
    pub scaling: BTreeMap<String, f64>,
    pub removed_columns: RemovedColumns,
    /// Singular values created by column removal, excluded from condition numbers.
    pub isolated_values: usize,
    /// Whether the Σ term carries the imaginary unit.
    pub i_rotation: bool,
    pub samplings: Vec<DyadicSampling>,
    pub band_norm_weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub enum PrecondMap {
    Real(RMat),
    Complex(CMat),
}

impl PrecondMap {
    pub fn nrows(&self) -> usize {
        match self {
            PrecondMap::Real(m) => m.nrows(),
            PrecondMap::Complex(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            PrecondMap::Real(m) => m.ncols(),
            PrecondMap::Complex(m) => m.ncols(),
        }
    }

    fn apply(&self, x: &[c64]) -> Vec<c64> {
        match self {
            PrecondMap::Real(m) => linalg::complex_matvec(&linalg::to_complex(m), x),
            PrecondMap::Complex(m) => linalg::complex_matvec(m, x),
        }
    }

    /// `Mᵀ x` (no conjugation).
    fn apply_t(&self, x: &[c64]) -> Vec<c64> {
        let col = |j: usize| -> c64 {
            match self {
                PrecondMap::Real(m) => m.col_as_slice(j).iter().zip(x).map(|(a, b)| b * *a).sum(),
                PrecondMap::Complex(m) => m.col_as_slice(j).iter().zip(x).map(|(a, b)| a * b).sum(),
            }
        };
        (0..self.ncols()).map(col).collect()
    }
}

/// Quasi-Helmholtz parts kept for structural zeroing.
#[derive(Debug, Clone)]
struct QParts {
    q_sigma: RMat,
    b_sigma: f64,
}

/// A left/right map `M` with system `Mᵀ T M ĵ = Mᵀ ṽ`.
#[derive(Debug, Clone)]
pub struct PreconditionerBundle {
    pub meta: BundleMeta,
    pub map: PrecondMap,
    g_inv_sqrt: Option<RMat>,
    q_parts: Option<QParts>,
}

impl PreconditionerBundle {
    /// The identity map: the system is `T j = v` itself.
    pub fn identity(n: usize) -> Self {
        PreconditionerBundle {
            meta: BundleMeta {
                variant: Variant::Identity,
                alpha: 0,
                backend: "none".into(),
                normalized: false,
                scaling: BTreeMap::new(),
                removed_columns: RemovedColumns::default(),
                isolated_values: 0,
                i_rotation: false,
                samplings: Vec::new(),
                band_norm_weights: None,
            },
            map: PrecondMap::Real(RMat::identity(n, n)),
            g_inv_sqrt: None,
            q_parts: None,
        }
    }

    /// Maps preconditioned unknowns back to RWG coefficients, `j = G^{−1/2} M ĵ`.
    pub fn to_rwg(&self, jhat: &[c64]) -> Vec<c64> {
        let j = self.map.apply(jhat);
        match &self.g_inv_sqrt {
            Some(g) => linalg::complex_matvec(&linalg::to_complex(g), &j),
            None => j,
        }
    }
}

fn sandwich_real(w: &RMat, a: &CMat) -> CMat {
    linalg::real_times_complex(&w.transpose().to_owned(), &linalg::complex_times_real(a, w))
}

/// `W = [√c_Λ Λ_{p,α}  √c_Σ Σ_{p,α}]` with `c_Σ = ‖Σ_pᵀ Th Σ_p‖⁻¹`, `c_Λ = ‖Λ_pᵀ Ts Λ_p‖⁻¹`.
///
/// The bases must already have their dependent columns removed.
pub fn build_w(
    ops: &OperatorSet,
    sigma_p: &RMat,
    lambda_p: &RMat,
    cfg: &PrecondConfig,
) -> Result<PreconditionerBundle> {
    let n = ops.ts.nrows();
    if sigma_p.nrows() != n || lambda_p.nrows() != n {
        return Err(Error::InvalidArgument("basis rows must match the operator size".into()));
    }
    let norm = |x: &RMat, a: &CMat, label: usize| -> Result<f64> {
        let block = sandwich_real(x, a);
        let v = symmetric_block_norm(
            block.nrows(),
            |u| linalg::complex_matvec(&block, u),
            cfg.norm_tol,
            cfg.norm_max_iter,
            cfg.seed,
        )?;
        if !(v > 0.0) {
            return Err(Error::ZeroBlock(label));
        }
        Ok(v)
    };
    let c_sigma = 1.0 / norm(sigma_p, &ops.th, 0)?;
    let c_lambda = 1.0 / norm(lambda_p, &ops.ts, 1)?;
    let (nl, ns) = (lambda_p.ncols(), sigma_p.ncols());
    let (rl, rs) = (c_lambda.sqrt(), c_sigma.sqrt());
    let w = RMat::from_fn(n, nl + ns, |i, j| {
        if j < nl {
            rl * lambda_p[(i, j)]
        } else {
            rs * sigma_p[(i, j - nl)]
        }
    });
    let mut scaling = BTreeMap::new();
    scaling.insert("c_sigma".to_string(), c_sigma);
    scaling.insert("c_lambda".to_string(), c_lambda);
    Ok(PreconditionerBundle {
        meta: BundleMeta {
            variant: Variant::FilteredLoopStar,
            alpha: cfg.alpha,
            backend: cfg.backend.name().into(),
            normalized: ops.normalized,
            scaling,
            removed_columns: RemovedColumns::default(),
            isolated_values: 0,
            i_rotation: false,
            samplings: Vec::new(),
            band_norm_weights: None,
        },
        map: PrecondMap::Real(w),
        g_inv_sqrt: None,
        q_parts: None,
    })
}

/// `Q = √b_Λ Q^Λ + i √b_Σ Q^Σ + √b_H P^H` with the `b` constants from
/// operator norms; the `P^H` term is absent when the harmonic space is empty.
pub fn build_q(
    ops: &OperatorSet,
    q_sigma: RMat,
    q_lambda: RMat,
    projectors: &ProjectorSet,
    cfg: &PrecondConfig,
) -> Result<PreconditionerBundle> {
    let n = ops.ts.nrows();
    if q_sigma.nrows() != n || q_lambda.nrows() != n || projectors.dim() != n {
        return Err(Error::InvalidArgument(
            "filter sizes must match the operator size".into(),
        ));
    }
    let norm = |p: &RMat, a: &CMat, label: usize| -> Result<f64> {
        let block = sandwich_real(p, a);
        let v = symmetric_block_norm(
            n,
            |u| linalg::complex_matvec(&block, u),
            cfg.norm_tol,
            cfg.norm_max_iter,
            cfg.seed,
        )?;
        if !(v > 0.0) {
            return Err(Error::ZeroBlock(label));
        }
        Ok(v)
    };
    let b_lambda = 1.0 / norm(&q_lambda, &ops.ts, 0)?;
    let b_sigma = 1.0 / norm(&q_sigma, &ops.th, 1)?;
    let has_h = projectors.harmonic_dim() > 0.5;
    let b_h = if has_h {
        Some(1.0 / norm(&projectors.p_h, &ops.ts, 2)?)
    } else {
        None
    };
    let (rl, rs, rh) = (b_lambda.sqrt(), b_sigma.sqrt(), b_h.map_or(0.0, f64::sqrt));
    let q = CMat::from_fn(n, n, |i, j| {
        let re = rl * q_lambda[(i, j)] + if has_h { rh * projectors.p_h[(i, j)] } else { 0.0 };
        c64::new(re, rs * q_sigma[(i, j)])
    });
    let mut scaling = BTreeMap::new();
    scaling.insert("b_lambda".to_string(), b_lambda);
    scaling.insert("b_sigma".to_string(), b_sigma);
    if let Some(b) = b_h {
        scaling.insert("b_h".to_string(), b);
    }
    Ok(PreconditionerBundle {
        meta: BundleMeta {
            variant: Variant::QhFilters,
            alpha: cfg.alpha,
            backend: cfg.backend.name().into(),
            normalized: ops.normalized,
            scaling,
            removed_columns: RemovedColumns::default(),
            isolated_values: 0,
            i_rotation: true,
            samplings: Vec::new(),
            band_norm_weights: None,
        },
        map: PrecondMap::Complex(q),
        g_inv_sqrt: None,
        q_parts: Some(QParts { q_sigma, b_sigma }),
    })
}

/// The preconditioned matrix `Mᵀ T M` and right-hand side `Mᵀ ṽ`.
#[derive(Debug, Clone)]
pub struct PreconditionedSystem {
    pub matrix: CMat,
    pub rhs: Vec<c64>,
}

/// Assembles `Mᵀ T M`; with `zeroing`, the quasi-Helmholtz variants drop the
/// terms `Th Q^Λ`, `Q^Λ Th`, `P^H Th`, `Th P^H`, which vanish in exact arithmetic:
/// `Q T Q = Q Ts Q − b_Σ Q^Σ Th Q^Σ`.
pub fn preconditioned_system(bundle: &PreconditionerBundle, ops: &OperatorSet, zeroing: bool) -> PreconditionedSystem {
    let rhs = bundle.map.apply_t(&ops.v);
    let matrix = match (&bundle.map, &bundle.q_parts) {
        (PrecondMap::Complex(q), Some(parts)) if zeroing => {
            let mut m = q * &ops.ts * q;
            let th = sandwich_real(&parts.q_sigma, &ops.th);
            m.col_iter_mut()
                .zip(th.col_iter())
                .for_each(|(mc, tc)| mc.iter_mut().zip(tc.iter()).for_each(|(a, b)| *a -= *b * parts.b_sigma));
            m
        }
        (PrecondMap::Complex(q), _) => q.transpose() * ops.t() * q,
        (PrecondMap::Real(w), _) => sandwich_real(w, &ops.t()),
    };
    PreconditionedSystem { matrix, rhs }
}

/// Preconditioned system with structural zeroing applied.
pub fn apply_stability_zeroing(bundle: &PreconditionerBundle, ops: &OperatorSet) -> PreconditionedSystem {
    preconditioned_system(bundle, ops, true)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub zeroing: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-6,
            max_iter: 2000,
            zeroing: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub variant: Variant,
    pub iterations: usize,
    pub relative_residual: f64,
    /// `‖T j − v‖/‖v‖` of the mapped-back solution.
    pub system_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub j: Vec<c64>,
    pub report: SolveReport,
}

/// Conjugate orthogonal CG for complex-symmetric `A`; returns the iterate,
/// iteration count and final relative residual.
pub fn cocg(a: &CMat, b: &[c64], tol: f64, max_iter: usize) -> (Vec<c64>, usize, f64) {
    let n = b.len();
    let zero = c64::new(0.0, 0.0);
    let bn = linalg::cnorm(b);
    let mut x = vec![zero; n];
    if bn == 0.0 {
        return (x, 0, 0.0);
    }
    let bdot = |u: &[c64], v: &[c64]| -> c64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rho = bdot(&r, &r);
    let mut res = 1.0;
    for it in 1..=max_iter {
        let q = linalg::complex_matvec(a, &p);
        let mu = bdot(&p, &q);
        if mu.norm() == 0.0 || rho.norm() == 0.0 {
            return (x, it, res);
        }
        let alpha = rho / mu;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        res = linalg::cnorm(&r) / bn;
        if res <= tol {
            return (x, it, res);
        }
        let rho_new = bdot(&r, &r);
        let beta = rho_new / rho;
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    (x, max_iter, res)
}

/// Solves `Mᵀ T M ĵ = Mᵀ ṽ` by COCG and maps back to RWG coefficients.
///
/// `ops` must be the operator set the bundle was built from (normalized if
/// the bundle is).
pub fn solve_preconditioned(
    bundle: &PreconditionerBundle,
    ops: &OperatorSet,
    opts: &SolveOptions,
) -> Result<SolveOutcome> {
    let sys = preconditioned_system(bundle, ops, opts.zeroing);
    let (jhat, iterations, res) = cocg(&sys.matrix, &sys.rhs, opts.tol, opts.max_iter);
    let converged = res <= opts.tol;
    if !converged {
        return Err(Error::NotConverged {
            method: "COCG",
            iterations,
            residual: res,
        });
    }
    let jm = bundle.map.apply(&jhat);
    let t = ops.t();
    let tj = linalg::complex_matvec(&t, &jm);
    let vn = linalg::cnorm(&ops.v).max(f64::MIN_POSITIVE);
    let system_residual = tj
        .iter()
        .zip(&ops.v)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / vn;
    Ok(SolveOutcome {
        j: bundle.to_rwg(&jhat),
        report: SolveReport {
            variant: bundle.meta.variant,
            iterations,
            relative_residual: res,
            system_residual,
            converged,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efie::{assemble_operators, WaveContext};
    use crate::mesh::{build_basis_topology, icosphere, torus};

    #[test]
    fn dyadic_levels_for_four() {
        assert_eq!(dyadic_cuts(2, 4), vec![1, 3]);
        assert_eq!(dyadic_cuts(3, 10), vec![2, 8]);
        assert_eq!(dyadic_cuts(2, 1), Vec::<usize>::new());
        let s = EigenvalueSampler::Exact(vec![0.0, 1.0, 2.0, 4.0]);
        let d = build_dyadic_sampling(&s, 1, 2, Side::Sigma, -0.5).unwrap();
        assert_eq!(d.level_indices, vec![1, 3]);
        assert_eq!(d.sample_ranks, vec![2, 2, 4]);
        assert_eq!(d.level_weights, vec![1.0, 1.0, 0.5]);
        let flat = build_dyadic_sampling(&s, 1, 2, Side::Sigma, 0.0).unwrap();
        assert!(flat.level_weights.iter().all(|&w| w == 1.0));
        assert!(build_dyadic_sampling(&s, 1, 1, Side::Sigma, 0.0).is_err());
    }

    #[test]
    fn unit_weights_telescope() {
        let mesh = icosphere(1, 1.0).unwrap();
        let topo = build_basis_topology(&mesh);
        let ctx = PrecondContext::new(&mesh, &topo, PrecondConfig::default()).unwrap();
        let s = ctx.sampling(Side::Sigma, 0.0).unwrap();
        let q = ctx.filter_sum(&s).unwrap();
        assert!(linalg::rel_diff(&q, &ctx.projectors.p_sigma) < 1e-10);
        let basis = ctx.filtered_ls_basis(&s, &[]).unwrap();
        assert!(linalg::rel_diff(&basis, &ctx.sigma) < 1e-10);
    }

    #[test]
    fn w_annihilation_and_q_structure() {
        let mesh = icosphere(1, 1.0).unwrap();
        let topo = build_basis_topology(&mesh);
        let ctx = PrecondContext::new(&mesh, &topo, PrecondConfig::default()).unwrap();
        let ops = assemble_operators(&mesh, &topo, &WaveContext::vacuum(1e7).unwrap());
        let sl = ctx.sampling(Side::Lambda, -0.25).unwrap();
        let ss = ctx.sampling(Side::Sigma, -0.75).unwrap();
        let lp = ctx.filtered_ls_basis(&sl, &ctx.removable_lambda).unwrap();
        let sp = ctx.filtered_ls_basis(&ss, &ctx.removable_sigma).unwrap();
        let cross = lp.transpose() * &sp;
        assert!(linalg::max_abs(&cross) < 1e-10 * linalg::max_abs(&sp));
        let w = ctx.filtered_loop_star(&ops).unwrap();
        assert_eq!(w.map.ncols(), topo.n_edges());
        let q = ctx.qh_filters(&ops).unwrap();
        assert!(!q.meta.scaling.contains_key("b_h"));
        let zeroed = apply_stability_zeroing(&q, &ops);
        let full = preconditioned_system(&q, &ops, false);
        assert!(linalg::crel_diff(&zeroed.matrix, &full.matrix) < 1e-8);
    }

    #[test]
    fn torus_gets_harmonic_term_and_rejects_w() {
        let mesh = torus(1.0, 0.4, 10, 5).unwrap();
        let topo = build_basis_topology(&mesh);
        let ctx = PrecondContext::new(&mesh, &topo, PrecondConfig::default()).unwrap();
        let ops = assemble_operators(&mesh, &topo, &WaveContext::vacuum(1e7).unwrap());
        assert!(ctx.filtered_loop_star(&ops).is_err());
        let q = ctx.qh_filters(&ops).unwrap();
        assert!(q.meta.scaling["b_h"] > 0.0);
    }

    #[test]
    fn identity_bundle_matches_plain_solve() {
        let mesh = icosphere(1, 1.0).unwrap();
        let topo = build_basis_topology(&mesh);
        let ops = assemble_operators(&mesh, &topo, &WaveContext::vacuum(1e8).unwrap());
        let id = PreconditionerBundle::identity(topo.n_edges());
        let opts = SolveOptions {
            tol: 1e-10,
            max_iter: 5000,
            zeroing: true,
        };
        let out = solve_preconditioned(&id, &ops, &opts).unwrap();
        assert!(out.report.system_residual < 1e-9);
    }

    #[test]
    fn zero_operator_block_is_an_error() {
        let mesh = icosphere(1, 1.0).unwrap();
        let topo = build_basis_topology(&mesh);
        let ctx = PrecondContext::new(&mesh, &topo, PrecondConfig::default()).unwrap();
        let mut ops = assemble_operators(&mesh, &topo, &WaveContext::vacuum(1e7).unwrap());
        ops.th = CMat::zeros(ops.th.nrows(), ops.th.ncols());
        assert!(matches!(ctx.qh_filters_norm_scaled(&ops), Err(Error::ZeroBlock(_))));
    }
}
