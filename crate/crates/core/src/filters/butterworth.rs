use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, LinearOperator, RMat, SpdSolver};
use crate::qhd::GraphLaplacian;

/// Dimension up to which the quadratic factors are solved by dense Cholesky.
const DENSE_FACTOR_CAP: usize = 3000;

/// Squared Butterworth profile `1 / (1 + (x/x_c)^m)`.
pub fn butterworth_profile(x: f64, x_c: f64, m: usize) -> f64 {
    1.0 / (1.0 + (x.abs() / x_c).powi(m as i32))
}

/// `cos θ_k` for each conjugate pair of roots `e^{iθ_k}` of `y^m = −1`
/// with `θ_k = (2k+1)π/m` in the upper half plane, plus whether the real
/// root `−1` is present (odd `m`).
pub fn root_pairs(m: usize) -> (Vec<f64>, bool) {
    let pairs = (0..m / 2).map(|k| ((2 * k + 1) as f64 * PI / m as f64).cos()).collect();
    (pairs, m % 2 == 1)
}

enum FactorSolver {
    Dense(SpdSolver),
    Iterative { cos: f64 },
}

/// `(I + (L/x_c)^m)^{-1}` as a product of real SPD quadratic factors
/// `(L/x_c)² − 2cos θ_k (L/x_c) + I` (and `L/x_c + I` for odd `m`).
pub struct ButterworthFactors<'a> {
    lap: &'a GraphLaplacian,
    pub x_c: f64,
    pub order: usize,
    factors: Vec<FactorSolver>,
    linear: Option<SpdSolver>,
}

/// Matrix-free `(L/x_c)² − 2cos θ (L/x_c) + I`.
struct Quadratic<'a> {
    lap: &'a GraphLaplacian,
    x_c: f64,
    cos: f64,
}

impl LinearOperator for Quadratic<'_> {
    fn dim(&self) -> usize {
        self.lap.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; x.len()];
        self.lap.apply(x, &mut t);
        t.iter_mut().for_each(|v| *v /= self.x_c);
        self.lap.apply(&t, y);
        for i in 0..x.len() {
            y[i] = y[i] / self.x_c - 2.0 * self.cos * t[i] + x[i];
        }
    }
}

impl<'a> ButterworthFactors<'a> {
    /// `truncation` caps the number of roots; `None` keeps the full product.
    pub fn new(lap: &'a GraphLaplacian, x_c: f64, m: usize, truncation: Option<usize>) -> Result<Self> {
        if !(x_c > 0.0) || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "Butterworth needs x_c > 0 and m ≥ 1 (got {x_c}, {m})"
            )));
        }
        let order = truncation.map_or(m, |t| t.min(m).max(1));
        let (pairs, odd) = root_pairs(order);
        // alternate amplifying (θ near 0) and damping (θ near π) factors so
        // partial products stay bounded
        let pairs: Vec<f64> = (0..pairs.len())
            .map(|i| {
                if i % 2 == 0 {
                    pairs[i / 2]
                } else {
                    pairs[pairs.len() - 1 - i / 2]
                }
            })
            .collect();
        let n = lap.dim();
        let dense = n <= DENSE_FACTOR_CAP;
        let y = if dense {
            let mut y = lap.to_dense();
            crate::linalg::scale_in_place(&mut y, 1.0 / x_c);
            Some(y)
        } else {
            None
        };
        let y2 = y.as_ref().map(|y| y * y);
        let mut factors = Vec::with_capacity(pairs.len());
        for &c in &pairs {
            match (&y, &y2) {
                (Some(y), Some(y2)) => {
                    let q = RMat::from_fn(n, n, |i, j| {
                        y2[(i, j)] - 2.0 * c * y[(i, j)] + if i == j { 1.0 } else { 0.0 }
                    });
                    factors.push(FactorSolver::Dense(SpdSolver::new(&q)?));
                }
                _ => factors.push(FactorSolver::Iterative { cos: c }),
            }
        }
        let linear = if odd {
            let y = y.unwrap_or_else(|| {
                let mut d = lap.to_dense();
                crate::linalg::scale_in_place(&mut d, 1.0 / x_c);
                d
            });
            let q = RMat::from_fn(n, n, |i, j| y[(i, j)] + if i == j { 1.0 } else { 0.0 });
            Some(SpdSolver::new(&q)?)
        } else {
            None
        };
        Ok(ButterworthFactors {
            lap,
            x_c,
            order,
            factors,
            linear,
        })
    }

    /// `f(L) v`
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut x = v.to_vec();
        for f in &self.factors {
            match f {
                FactorSolver::Dense(s) => s.solve_in_place(&mut x),
                FactorSolver::Iterative { cos } => {
                    let q = Quadratic {
                        lap: self.lap,
                        x_c: self.x_c,
                        cos: *cos,
                    };
                    x = conjugate_gradient(&q, &x, &[], 1e-13, 20 * x.len().max(50))?.0;
                }
            }
        }
        if let Some(s) = &self.linear {
            s.solve_in_place(&mut x);
        }
        Ok(x)
    }

    pub fn apply_block(&self, b: &RMat) -> Result<RMat> {
        if self.factors.iter().all(|f| matches!(f, FactorSolver::Dense(_))) {
            let mut x = b.clone();
            for f in &self.factors {
                if let FactorSolver::Dense(s) = f {
                    x = s.solve_block(&x);
                }
            }
            if let Some(s) = &self.linear {
                x = s.solve_block(&x);
            }
            return Ok(x);
        }
        let mut out = RMat::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let y = self.apply(b.col_as_slice(j))?;
            out.col_as_slice_mut(j).copy_from_slice(&y);
        }
        Ok(out)
    }
}

/// `(XᵀX)_n v ≈ L f(L) v` with a Butterworth window at `x_c`.
pub fn butterworth_apply(
    lap: &GraphLaplacian,
    x_c: f64,
    m: usize,
    truncation: Option<usize>,
    v: &[f64],
) -> Result<Vec<f64>> {
    let f = ButterworthFactors::new(lap, x_c, m, truncation)?;
    Ok(lap.apply_vec(&f.apply(v)?))
}
