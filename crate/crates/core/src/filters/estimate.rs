//! Cheap spectral estimates: the `‖L⁺‖` cutoff heuristic, stochastic
//! eigenvalue counting, and per-rank eigenvalue samplers.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::power::{norm_bound, smallest_eigenpairs};
use crate::error::{Error, Result};
use crate::linalg::{self, conjugate_gradient, LinearOperator};
use crate::qhd::GraphLaplacian;

struct DeflatedInverse<'a>(&'a GraphLaplacian);

impl LinearOperator for DeflatedInverse<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.0.dim();
        match conjugate_gradient(self.0, x, self.0.nullspace(), 1e-12, 10 * n + 100) {
            Ok((sol, _)) => y.copy_from_slice(&sol),
            Err(_) => y.iter_mut().for_each(|v| *v = f64::NAN),
        }
    }
}

/// `‖L⁺‖` by inverse power iteration on the deflated Laplacian.
pub fn pinv_norm_estimate(lap: &GraphLaplacian, seed: u64) -> Result<f64> {
    if lap.dim() <= lap.nullspace_dim() {
        return Ok(0.0);
    }
    let op = DeflatedInverse(lap);
    let est = linalg::symmetric_norm_estimate(&op, 1e-10, 2000, seed)?;
    if !est.is_finite() {
        return Err(Error::NotConverged {
            method: "inverse power iteration",
            iterations: 0,
            residual: f64::NAN,
        });
    }
    Ok(est)
}

/// `(N_X − n) / ‖L⁺‖`: the linear-growth estimate of the `n`-th largest
/// eigenvalue of `L`.
pub fn sigma_n_estimate(lap: &GraphLaplacian, n: usize) -> Result<f64> {
    let nx = lap.dim();
    if n > nx {
        return Err(Error::InvalidArgument(format!("n = {n} exceeds N_X = {nx}")));
    }
    if n == nx {
        return Ok(0.0);
    }
    Ok((nx - n) as f64 / pinv_norm_estimate(lap, 0x5eed)?)
}

/// Cutoff between the `n` smallest eigenvalues and the rest from the
/// `‖L⁺‖` heuristic: `(n − ½)/‖L⁺‖`.
pub fn heuristic_cutoff(lap: &GraphLaplacian, n: usize) -> Result<f64> {
    let nx = lap.dim();
    let hi = sigma_n_estimate(lap, nx - n.min(nx))?;
    let lo = sigma_n_estimate(lap, (nx + 1).saturating_sub(n).min(nx))?;
    Ok(0.5 * (hi + lo))
}

/// Kernel-polynomial estimate of the eigenvalue counting function
/// `N(x) = #{λ ≤ x}` with Jackson damping and Rademacher probes.
#[derive(Debug, Clone)]
pub struct KpmCounter {
    moments: Vec<f64>,
    upper: f64,
    dim: usize,
}

impl KpmCounter {
    pub fn new(lap: &GraphLaplacian, degree: usize, probes: usize, seed: u64) -> Result<Self> {
        let dim = lap.dim();
        let upper = 1.01 * norm_bound(lap).max(f64::MIN_POSITIVE);
        let scale = 2.0 / upper;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut moments = vec![0.0; degree + 1];
        let mut buf = vec![0.0; dim];
        for _ in 0..probes {
            let z: Vec<f64> = (0..dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let mut t_prev = z.clone();
            lap.apply(&z, &mut buf);
            let mut t_cur: Vec<f64> = buf.iter().zip(&z).map(|(l, x)| scale * l - x).collect();
            moments[0] += linalg::dot(&z, &t_prev);
            if degree >= 1 {
                moments[1] += linalg::dot(&z, &t_cur);
            }
            for m in moments.iter_mut().skip(2) {
                lap.apply(&t_cur, &mut buf);
                for i in 0..dim {
                    let next = 2.0 * (scale * buf[i] - t_cur[i]) - t_prev[i];
                    t_prev[i] = t_cur[i];
                    t_cur[i] = next;
                }
                *m += linalg::dot(&z, &t_cur);
            }
        }
        moments.iter_mut().for_each(|m| *m /= probes as f64);
        Ok(KpmCounter { moments, upper, dim })
    }

    fn jackson(k: usize, n: usize) -> f64 {
        let np = (n + 1) as f64;
        let k = k as f64;
        ((np - k) * (PI * k / np).cos() + (PI * k / np).sin() / (PI / np).tan()) / np
    }

    /// Estimated number of eigenvalues `≤ x`.
    pub fn count(&self, x: f64) -> f64 {
        let t = (2.0 * x / self.upper - 1.0).clamp(-1.0, 1.0);
        let phi = t.acos();
        let d = self.moments.len() - 1;
        let mut s = (PI - phi) / PI * self.moments[0];
        for k in 1..=d {
            let c = -2.0 * (k as f64 * phi).sin() / (k as f64 * PI);
            s += Self::jackson(k, d) * c * self.moments[k];
        }
        s.clamp(0.0, self.dim as f64)
    }

    /// Smallest `x` with `count(x) ≥ target` (bisection).
    pub fn invert(&self, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, self.upper);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.count(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// How eigenvalues at sampled ranks are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Dense eigendecomposition.
    Exact,
    /// Inverse subspace iteration at low ranks, stochastic counting above.
    Estimate,
}

/// Laplacian eigenvalues addressed by ascending rank (1-based).
#[derive(Debug, Clone)]
pub enum EigenvalueSampler {
    Exact(Vec<f64>),
    Estimate { low: Vec<f64>, kpm: KpmCounter, dim: usize },
}

/// Ranks up to this are resolved by subspace iteration in the estimate sampler.
pub const LOW_RANKS: usize = 24;

impl EigenvalueSampler {
    pub fn new(lap: &GraphLaplacian, kind: SamplerKind, seed: u64) -> Result<Self> {
        match kind {
            SamplerKind::Exact => Ok(EigenvalueSampler::Exact(lap.eigenvalues()?)),
            SamplerKind::Estimate => {
                let dim = lap.dim();
                let n_low = (LOW_RANKS + 1).min(dim);
                let low = smallest_eigenpairs(lap, n_low, 1e-6, 2000, seed)?.values;
                let kpm = KpmCounter::new(lap, 400, 24, seed ^ 0x6b706d)?;
                Ok(EigenvalueSampler::Estimate { low, kpm, dim })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EigenvalueSampler::Exact(v) => v.len(),
            EigenvalueSampler::Estimate { dim, .. } => *dim,
        }
    }

    /// The `j`-th smallest eigenvalue, `1 ≤ j ≤ dim`.
    pub fn value_at_rank(&self, j: usize) -> f64 {
        let j = j.clamp(1, self.dim());
        match self {
            EigenvalueSampler::Exact(v) => v[j - 1],
            EigenvalueSampler::Estimate { low, kpm, .. } => {
                if j <= low.len() {
                    low[j - 1]
                } else {
                    kpm.invert(j as f64 - 0.5)
                }
            }
        }
    }

    /// A threshold separating the `n` smallest eigenvalues from the rest.
    pub fn cutoff_below_rank(&self, n: usize) -> f64 {
        if n >= self.dim() {
            return f64::INFINITY;
        }
        0.5 * (self.value_at_rank(n) + self.value_at_rank(n + 1))
    }
}
