//! Laplacian-filtered matrices and quasi-Helmholtz Laplacian filters.
//!
//! Every backend approximates the same spectral window `χ_n(L)`, the
//! orthogonal projector onto the eigenvectors of the `n` smallest
//! eigenvalues of `L = XᵀX`. From it:
//!
//! * `(XᵀX)_n = L χ_n(L)`
//! * `(XᵀX)⁺_n = L⁺ χ_n(L)`
//! * `X_n = X (XᵀX)⁺ (XᵀX)_n = X χ_n(L)`

mod butterworth;
mod chebyshev;
mod estimate;
mod power;

use serde::{Deserialize, Serialize};

pub use butterworth::{butterworth_apply, butterworth_profile, root_pairs, ButterworthFactors};
pub use chebyshev::{chebyshev_t, ChebyshevExpansion};
pub use estimate::{
    heuristic_cutoff, pinv_norm_estimate, sigma_n_estimate, EigenvalueSampler, KpmCounter, SamplerKind, LOW_RANKS,
};
pub use power::{find_clusters, norm_bound, smallest_eigenpairs, Cluster, Eigenpairs};

use crate::error::{Error, Result};
use crate::linalg::{self, LinearOperator, RMat, SymEigen};
use crate::qhd::{laplacian_pinv_apply, GraphLaplacian, ProjectorSet};

/// Relative gap below which a cut is flagged as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterBackend {
    ExactSvd,
    PowerMethod {
        #[serde(default = "default_power_tol")]
        tol: f64,
    },
    Butterworth {
        order: usize,
        /// Caps the number of roots of unity kept in the factorization.
        #[serde(default)]
        truncation: Option<usize>,
    },
    Chebyshev {
        butterworth_order: usize,
        poly_count: usize,
    },
}

fn default_power_tol() -> f64 {
    1e-10
}

impl FilterBackend {
    pub fn name(&self) -> &'static str {
        match self {
            FilterBackend::ExactSvd => "svd",
            FilterBackend::PowerMethod { .. } => "power-method",
            FilterBackend::Butterworth { .. } => "butterworth",
            FilterBackend::Chebyshev { .. } => "chebyshev",
        }
    }
}

/// Filtering index plus backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFilterSpec {
    pub n: usize,
    pub backend: FilterBackend,
    /// Cutoff `x_c` for the smooth backends; the `‖L⁺‖` heuristic is used when absent.
    #[serde(default)]
    pub cutoff_estimate: Option<f64>,
}

impl SpectralFilterSpec {
    pub fn new(n: usize, backend: FilterBackend) -> Self {
        SpectralFilterSpec {
            n,
            backend,
            cutoff_estimate: None,
        }
    }

    pub fn with_cutoff(mut self, x_c: f64) -> Self {
        self.cutoff_estimate = Some(x_c);
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n == 0 || self.n > dim {
            return Err(Error::InvalidArgument(format!(
                "filtering index {} outside 1..={dim}",
                self.n
            )));
        }
        match self.backend {
            FilterBackend::Butterworth { order: 0, .. }
            | FilterBackend::Chebyshev {
                butterworth_order: 0, ..
            }
            | FilterBackend::Chebyshev { poly_count: 0, .. } => Err(Error::InvalidArgument(
                "filter order and polynomial count must be positive".into(),
            )),
            FilterBackend::PowerMethod { tol } if !(tol > 0.0) => {
                Err(Error::InvalidArgument("power-method tolerance must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// What was built and how well.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterMeta {
    pub backend: String,
    pub n: usize,
    pub cutoff: Option<f64>,
    pub order: Option<usize>,
    pub poly_count: Option<usize>,
    /// Largest relative eigen-residual (power method) or expansion error bound.
    pub accuracy: Option<f64>,
    pub iterations: Option<usize>,
    pub degenerate_cut: bool,
    pub clusters: Vec<Cluster>,
}

enum Window<'a> {
    Identity,
    Eigen(RMat),
    Butterworth(ButterworthFactors<'a>),
    Chebyshev(ChebyshevExpansion),
}

/// A filtered Laplacian `(XᵀX)_n` together with its window and pseudo-inverse.
pub struct FilteredOperator<'a> {
    lap: &'a GraphLaplacian,
    window: Window<'a>,
    pub meta: FilterMeta,
}

impl<'a> FilteredOperator<'a> {
    pub fn laplacian(&self) -> &GraphLaplacian {
        self.lap
    }

    /// `χ_n(L) v`
    pub fn apply_window(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.window {
            Window::Identity => Ok(v.to_vec()),
            Window::Eigen(q) => {
                let c = crate::qhd::mat_t_vec(q, v);
                let mut y = vec![0.0; v.len()];
                linalg::dense_matvec(q, &c, &mut y);
                Ok(y)
            }
            Window::Butterworth(b) => b.apply(v),
            Window::Chebyshev(c) => Ok(c.apply(self.lap, v)),
        }
    }

    /// `χ_n(L) B`
    pub fn apply_window_block(&self, b: &RMat) -> Result<RMat> {
        match &self.window {
            Window::Identity => Ok(b.clone()),
            Window::Eigen(q) => Ok(q * (q.transpose() * b)),
            Window::Butterworth(f) => f.apply_block(b),
            Window::Chebyshev(c) => Ok(c.apply_block(self.lap, b)),
        }
    }

    /// `(XᵀX)_n v`
    pub fn apply_filtered(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.lap.apply_vec(&self.apply_window(v)?))
    }

    /// `(XᵀX)⁺_n v`
    pub fn apply_filtered_pinv(&self, v: &[f64]) -> Result<Vec<f64>> {
        laplacian_pinv_apply(self.lap, &self.apply_window(v)?)
    }

    pub fn window_dense(&self) -> Result<RMat> {
        let n = self.lap.dim();
        let mut w = self.apply_window_block(&RMat::identity(n, n))?;
        linalg::symmetrize(&mut w);
        Ok(w)
    }

    pub fn filtered_dense(&self) -> Result<RMat> {
        let mut m = self.lap.to_dense() * self.window_dense()?;
        linalg::symmetrize(&mut m);
        Ok(m)
    }

    pub fn filtered_pinv_dense(&self) -> Result<RMat> {
        let mut m = self.lap.pinv_dense()? * self.window_dense()?;
        linalg::symmetrize(&mut m);
        Ok(m)
    }
}

impl LinearOperator for FilteredOperator<'_> {
    fn dim(&self) -> usize {
        self.lap.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.apply_filtered(x) {
            Ok(v) => y.copy_from_slice(&v),
            Err(_) => y.iter_mut().for_each(|v| *v = f64::NAN),
        }
    }
}

fn eigen_window(eig: &SymEigen, n: usize) -> RMat {
    RMat::from_fn(eig.dim(), n, |i, j| eig.vectors[(i, j)])
}

fn is_degenerate_cut(values: &[f64], n: usize, scale: f64) -> bool {
    n < values.len() && (values[n] - values[n - 1]).abs() <= DEGENERATE_GAP * scale.max(f64::MIN_POSITIVE)
}

/// Exact window from the dense spectrum of `XᵀX` (the squared singular values of `X`).
pub fn svd_filtered_laplacian(lap: &GraphLaplacian, n: usize) -> Result<FilteredOperator<'_>> {
    SpectralFilterSpec::new(n, FilterBackend::ExactSvd).validate(lap.dim())?;
    let eig = lap.eigen()?;
    let values = lap.eigenvalues()?;
    let top = values.last().copied().unwrap_or(0.0);
    let clusters = find_clusters(&values, DEGENERATE_GAP * top);
    let meta = FilterMeta {
        backend: "svd".into(),
        n,
        degenerate_cut: is_degenerate_cut(&values, n, top),
        clusters,
        ..Default::default()
    };
    let window = if n == lap.dim() {
        Window::Identity
    } else {
        Window::Eigen(eigen_window(eig, n))
    };
    Ok(FilteredOperator { lap, window, meta })
}

/// Window from the `n` smallest eigenpairs computed by inverse subspace iteration.
pub fn power_method_filter(lap: &GraphLaplacian, n: usize, tol: f64) -> Result<FilteredOperator<'_>> {
    SpectralFilterSpec::new(n, FilterBackend::PowerMethod { tol }).validate(lap.dim())?;
    let ep = smallest_eigenpairs(lap, n, tol, 5000, 0x9e37)?;
    let scale = norm_bound(lap);
    let degenerate_cut = ep
        .next_value
        .is_some_and(|next| (next - ep.values[n - 1]).abs() <= 1e-8 * scale);
    let meta = FilterMeta {
        backend: "power-method".into(),
        n,
        accuracy: Some(ep.residuals.iter().fold(0.0, |m: f64, &r| m.max(r))),
        iterations: Some(ep.iterations),
        degenerate_cut,
        clusters: ep.clusters.clone(),
        ..Default::default()
    };
    Ok(FilteredOperator {
        lap,
        window: Window::Eigen(ep.vectors),
        meta,
    })
}

/// Butterworth window `(I + (L/x_c)^m)^{-1}` by its factorized form.
pub fn butterworth_filter(
    lap: &GraphLaplacian,
    n: usize,
    x_c: f64,
    order: usize,
    truncation: Option<usize>,
) -> Result<FilteredOperator<'_>> {
    let f = ButterworthFactors::new(lap, x_c, order, truncation)?;
    let meta = FilterMeta {
        backend: "butterworth".into(),
        n,
        cutoff: Some(x_c),
        order: Some(f.order),
        ..Default::default()
    };
    Ok(FilteredOperator {
        lap,
        window: Window::Butterworth(f),
        meta,
    })
}

/// Chebyshev expansion of the Butterworth window on `[0, 1.1·σ_max]`.
pub fn chebyshev_filter(
    lap: &GraphLaplacian,
    n: usize,
    x_c: f64,
    order: usize,
    poly_count: usize,
) -> Result<FilteredOperator<'_>> {
    if !(x_c > 0.0) || order == 0 || poly_count == 0 {
        return Err(Error::InvalidArgument(
            "Chebyshev filter needs x_c > 0, m ≥ 1, n_c ≥ 1".into(),
        ));
    }
    let upper = chebyshev_upper(lap)?;
    let exp = ChebyshevExpansion::from_fn(|x| butterworth_profile(x, x_c, order), upper, poly_count);
    let meta = FilterMeta {
        backend: "chebyshev".into(),
        n,
        cutoff: Some(x_c),
        order: Some(order),
        poly_count: Some(poly_count),
        accuracy: Some(expansion_error(&exp, |x| butterworth_profile(x, x_c, order))),
        ..Default::default()
    };
    Ok(FilteredOperator {
        lap,
        window: Window::Chebyshev(exp),
        meta,
    })
}

/// Builds a Chebyshev-window operator from precomputed coefficients.
pub fn chebyshev_operator<'a>(
    lap: &'a GraphLaplacian,
    exp: ChebyshevExpansion,
    meta: FilterMeta,
) -> FilteredOperator<'a> {
    FilteredOperator {
        lap,
        window: Window::Chebyshev(exp),
        meta,
    }
}

/// `1.1 ×` the power-iteration estimate of `σ_max(L)`.
pub fn chebyshev_upper(lap: &GraphLaplacian) -> Result<f64> {
    let est = linalg::symmetric_norm_estimate(lap, 1e-8, 5000, 0xc0ffee)?;
    Ok(1.1 * est)
}

/// Max deviation of the expansion from `f` on a fine grid of its interval.
fn expansion_error(exp: &ChebyshevExpansion, f: impl Fn(f64) -> f64) -> f64 {
    (0..=2000)
        .map(|i| {
            let x = exp.upper * i as f64 / 2000.0;
            (exp.eval(x) - f(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Dispatches on `spec.backend`.
pub fn build_filter<'a>(lap: &'a GraphLaplacian, spec: &SpectralFilterSpec) -> Result<FilteredOperator<'a>> {
    spec.validate(lap.dim())?;
    let cutoff = || -> Result<f64> {
        match spec.cutoff_estimate {
            Some(x) => Ok(x),
            None => heuristic_cutoff(lap, spec.n),
        }
    };
    match spec.backend {
        FilterBackend::ExactSvd => svd_filtered_laplacian(lap, spec.n),
        FilterBackend::PowerMethod { tol } => power_method_filter(lap, spec.n, tol),
        FilterBackend::Butterworth { order, truncation } => {
            if spec.n == lap.dim() {
                return svd_identity(lap, "butterworth");
            }
            butterworth_filter(lap, spec.n, cutoff()?, order, truncation)
        }
        FilterBackend::Chebyshev {
            butterworth_order,
            poly_count,
        } => {
            if spec.n == lap.dim() {
                return svd_identity(lap, "chebyshev");
            }
            chebyshev_filter(lap, spec.n, cutoff()?, butterworth_order, poly_count)
        }
    }
}

/// At `n = N_X` every backend reduces to the identity window.
fn svd_identity<'a>(lap: &'a GraphLaplacian, name: &str) -> Result<FilteredOperator<'a>> {
    Ok(FilteredOperator {
        lap,
        window: Window::Identity,
        meta: FilterMeta {
            backend: name.into(),
            n: lap.dim(),
            ..Default::default()
        },
    })
}

/// Consecutive spectral bands `χ_{b_j}(L) − χ_{b_{j−1}}(L)`, `b_0 = 0`, for
/// interior cuts `b_1 < … < b_{J−1}` and the terminal `b_J = N_X`.
///
/// `cutoffs[j]` is the `x_c` used at cut `j` by the smooth backends; the
/// `‖L⁺‖` heuristic is used when absent.
pub fn band_windows(
    lap: &GraphLaplacian,
    backend: &FilterBackend,
    cuts: &[usize],
    cutoffs: Option<&[f64]>,
) -> Result<Vec<RMat>> {
    check_cuts(lap, cuts, cutoffs)?;
    let n = lap.dim();
    if let FilterBackend::ExactSvd = backend {
        let eig = lap.eigen()?;
        let bounds: Vec<usize> = std::iter::once(0).chain(cuts.iter().copied()).chain([n]).collect();
        return Ok(bounds
            .windows(2)
            .map(|w| {
                let v = RMat::from_fn(n, w[1] - w[0], |i, j| eig.vectors[(i, w[0] + j)]);
                &v * v.transpose()
            })
            .collect());
    }
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut prev = RMat::zeros(n, n);
    for (j, &b) in cuts.iter().enumerate() {
        let w = cut_window(lap, backend, b, cutoffs.map(|c| c[j]))?;
        out.push(&w - &prev);
        prev = w;
    }
    out.push(RMat::identity(n, n) - &prev);
    Ok(out)
}

/// `Σ_j w_j (χ_{b_j} − χ_{b_{j−1}})` as a dense symmetric matrix; see [`band_windows`].
pub fn band_combination(
    lap: &GraphLaplacian,
    backend: &FilterBackend,
    cuts: &[usize],
    cutoffs: Option<&[f64]>,
    weights: &[f64],
) -> Result<RMat> {
    check_cuts(lap, cuts, cutoffs)?;
    if weights.len() != cuts.len() + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} band weights for {} bands",
            weights.len(),
            cuts.len() + 1
        )));
    }
    let n = lap.dim();
    let mut out = match backend {
        FilterBackend::ExactSvd => {
            let eig = lap.eigen()?;
            let mut w = vec![0.0; n];
            let mut band = 0;
            for (rank, wr) in w.iter_mut().enumerate() {
                while band < cuts.len() && rank >= cuts[band] {
                    band += 1;
                }
                *wr = weights[band];
            }
            eig.weighted(&w)
        }
        FilterBackend::Chebyshev {
            butterworth_order,
            poly_count,
        } => {
            // one expansion: Σ_j (w_j − w_{j+1}) χ_{b_j} + w_J · 1
            let upper = chebyshev_upper(lap)?;
            let mut exps = Vec::with_capacity(cuts.len() + 1);
            for (j, &b) in cuts.iter().enumerate() {
                let x_c = match cutoffs {
                    Some(c) => c[j],
                    None => heuristic_cutoff(lap, b)?,
                };
                exps.push(ChebyshevExpansion::from_fn(
                    |x| butterworth_profile(x, x_c, *butterworth_order),
                    upper,
                    *poly_count,
                ));
            }
            exps.push(ChebyshevExpansion::from_fn(|_| 1.0, upper, 0));
            let terms: Vec<(f64, &ChebyshevExpansion)> = exps
                .iter()
                .enumerate()
                .map(|(j, e)| (weights[j] - weights.get(j + 1).copied().unwrap_or(0.0), e))
                .collect();
            ChebyshevExpansion::combine(&terms).apply_block(lap, &RMat::identity(n, n))
        }
        _ => {
            let bands = band_windows(lap, backend, cuts, cutoffs)?;
            let mut acc = RMat::zeros(n, n);
            for (b, w) in bands.iter().zip(weights) {
                linalg::axpy(&mut acc, *w, b);
            }
            acc
        }
    };
    linalg::symmetrize(&mut out);
    Ok(out)
}

fn check_cuts(lap: &GraphLaplacian, cuts: &[usize], cutoffs: Option<&[f64]>) -> Result<()> {
    let n = lap.dim();
    let ok = cuts.windows(2).all(|w| w[0] < w[1]) && cuts.iter().all(|&b| b >= 1 && b < n);
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "cuts must be strictly increasing inside 1..{n}: {cuts:?}"
        )));
    }
    if cutoffs.is_some_and(|c| c.len() != cuts.len()) {
        return Err(Error::InvalidArgument("one cutoff per cut required".into()));
    }
    Ok(())
}

fn cut_window(lap: &GraphLaplacian, backend: &FilterBackend, n: usize, x_c: Option<f64>) -> Result<RMat> {
    let mut spec = SpectralFilterSpec::new(n, backend.clone());
    spec.cutoff_estimate = x_c;
    build_filter(lap, &spec)?.window_dense()
}

/// `X_n = X (XᵀX)⁺ (XᵀX)_n`
pub fn filtered_loop_star(x: &RMat, op: &FilteredOperator) -> Result<RMat> {
    if x.ncols() != op.lap.dim() {
        return Err(Error::InvalidArgument("basis and Laplacian sizes differ".into()));
    }
    let w = op.apply_window_block(&x.transpose().to_owned())?;
    Ok(w.transpose().to_owned())
}

/// Which quasi-Helmholtz filter to form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectorKind {
    Sigma,
    LambdaH,
    DualLambda,
    DualSigmaH,
}

/// `X (XᵀX)⁺_n Xᵀ`, plus `P^H` for the `H`-completed kinds.
///
/// `x` must be Σ for `Sigma`/`DualSigmaH` and Λ for `LambdaH`/`DualLambda`.
pub fn filter_projector(x: &RMat, op: &FilteredOperator, kind: ProjectorKind, base: &ProjectorSet) -> Result<RMat> {
    let xt = x.transpose().to_owned();
    let core = op.apply_window_block(&(op.lap.pinv_dense()? * &xt))?;
    let mut p = x * core;
    linalg::symmetrize(&mut p);
    if matches!(kind, ProjectorKind::LambdaH | ProjectorKind::DualSigmaH) {
        p += &base.p_h;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_diff;
    use crate::mesh::{build_basis_topology, icosphere, tetrahedron};
    use crate::qhd::{graph_laplacian, lambda_matrix, projectors, sigma_matrix};

    #[test]
    fn full_index_is_unfiltered() {
        let topo = build_basis_topology(&icosphere(1, 1.0).unwrap());
        let s = sigma_matrix(&topo);
        let lap = graph_laplacian(&s);
        let op = svd_filtered_laplacian(&lap, lap.dim()).unwrap();
        assert!(rel_diff(&lap.to_dense(), &op.filtered_dense().unwrap()) < 1e-14);
    }

    #[test]
    fn tetrahedron_sigma_n2_matches_brute_force() {
        let topo = build_basis_topology(&tetrahedron());
        let s = sigma_matrix(&topo);
        let lap = graph_laplacian(&s);
        let op = svd_filtered_laplacian(&lap, 2).unwrap();
        // brute force: dense eigendecomposition of ΣᵀΣ, keep two smallest
        let d = s.to_dense();
        let l = d.transpose() * &d;
        let eig = SymEigen::new(&l).unwrap();
        let w: Vec<f64> = eig
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if i < 2 { v } else { 0.0 })
            .collect();
        let oracle = eig.weighted(&w);
        let got = op.filtered_dense().unwrap();
        assert!((&got - &oracle).norm_max() < 1e-12);
    }

    #[test]
    fn filtered_projector_limits() {
        let topo = build_basis_topology(&icosphere(1, 1.0).unwrap());
        let (s, l) = (sigma_matrix(&topo), lambda_matrix(&topo));
        let base = projectors(&s, &l).unwrap();
        let (sl, ll) = (graph_laplacian(&s), graph_laplacian(&l));
        let ps = filter_projector(
            &s.to_dense(),
            &svd_filtered_laplacian(&sl, sl.dim()).unwrap(),
            ProjectorKind::Sigma,
            &base,
        )
        .unwrap();
        assert!(rel_diff(&base.p_sigma, &ps) < 1e-10);
        let pl = filter_projector(
            &l.to_dense(),
            &svd_filtered_laplacian(&ll, ll.dim()).unwrap(),
            ProjectorKind::LambdaH,
            &base,
        )
        .unwrap();
        assert!(rel_diff(&base.p_lambda_h, &pl) < 1e-10);
    }
}
