use std::f64::consts::PI;

use crate::linalg::{axpy, scale_in_place, LinearOperator, RMat};

/// Truncated Chebyshev series of a scalar function on `[0, upper]`,
/// evaluated on a symmetric operator by the three-term recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevExpansion {
    /// `c_0 .. c_{n_c}`; the series is `Σ c_k T_k(y) − c_0/2`.
    pub coeffs: Vec<f64>,
    pub upper: f64,
}

/// `T_k(y)` by the recurrence `T_{k+1} = 2y T_k − T_{k−1}`.
pub fn chebyshev_t(k: usize, y: f64) -> f64 {
    let (mut t0, mut t1) = (1.0, y);
    if k == 0 {
        return t0;
    }
    for _ in 1..k {
        let t2 = 2.0 * y * t1 - t0;
        t0 = t1;
        t1 = t2;
    }
    t1
}

impl ChebyshevExpansion {
    /// Coefficients from `2·n_c`-point Gauss-Chebyshev quadrature of `f`.
    pub fn from_fn(f: impl Fn(f64) -> f64, upper: f64, poly_count: usize) -> Self {
        let m = 2 * poly_count.max(1);
        let samples: Vec<f64> = (0..m)
            .map(|j| {
                let y = (PI * (j as f64 + 0.5) / m as f64).cos();
                f(0.5 * upper * (y + 1.0))
            })
            .collect();
        let coeffs = (0..=poly_count)
            .map(|k| {
                2.0 / m as f64
                    * samples
                        .iter()
                        .enumerate()
                        .map(|(j, s)| s * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos())
                        .sum::<f64>()
            })
            .collect();
        ChebyshevExpansion { coeffs, upper }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let y = 2.0 * x / self.upper - 1.0;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * chebyshev_t(k, y))
            .sum::<f64>()
            - 0.5 * self.coeffs[0]
    }

    /// `Σ w_i · e_i` for expansions on the same interval.
    pub fn combine(terms: &[(f64, &ChebyshevExpansion)]) -> Self {
        let (_, first) = terms[0];
        let len = terms.iter().map(|(_, e)| e.coeffs.len()).max().unwrap_or(1);
        let mut coeffs = vec![0.0; len];
        for (w, e) in terms {
            assert!((e.upper - first.upper).abs() <= 1e-12 * first.upper);
            for (c, ek) in coeffs.iter_mut().zip(&e.coeffs) {
                *c += w * ek;
            }
        }
        ChebyshevExpansion {
            coeffs,
            upper: first.upper,
        }
    }

    pub fn apply(&self, op: &dyn LinearOperator, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let scale = 2.0 / self.upper;
        let mut out: Vec<f64> = v.iter().map(|x| 0.5 * self.coeffs[0] * x).collect();
        if self.coeffs.len() == 1 {
            return out;
        }
        let mut t_prev = v.to_vec();
        let mut t_cur = vec![0.0; n];
        op.apply(v, &mut t_cur);
        t_cur.iter_mut().zip(v).for_each(|(t, x)| *t = scale * *t - x);
        let mut buf = vec![0.0; n];
        for k in 1..self.coeffs.len() {
            let c = self.coeffs[k];
            out.iter_mut().zip(&t_cur).for_each(|(o, t)| *o += c * t);
            if k + 1 == self.coeffs.len() {
                break;
            }
            op.apply(&t_cur, &mut buf);
            for i in 0..n {
                let next = 2.0 * (scale * buf[i] - t_cur[i]) - t_prev[i];
                t_prev[i] = t_cur[i];
                t_cur[i] = next;
            }
        }
        out
    }

    pub fn apply_block(&self, op: &dyn LinearOperator, b: &RMat) -> RMat {
        let scale = 2.0 / self.upper;
        let mut out = b.clone();
        scale_in_place(&mut out, 0.5 * self.coeffs[0]);
        if self.coeffs.len() == 1 {
            return out;
        }
        let mut t_prev = b.clone();
        let mut t_cur = op.apply_block(b);
        scale_in_place(&mut t_cur, scale);
        axpy(&mut t_cur, -1.0, b);
        for k in 1..self.coeffs.len() {
            axpy(&mut out, self.coeffs[k], &t_cur);
            if k + 1 == self.coeffs.len() {
                break;
            }
            // next = 2(scale·L t_cur − t_cur) − t_prev, written into t_prev
            let lt = op.apply_block(&t_cur);
            for j in 0..lt.ncols() {
                let (l, c) = (lt.col_as_slice(j), t_cur.col_as_slice(j));
                for ((p, li), ci) in t_prev.col_as_slice_mut(j).iter_mut().zip(l).zip(c) {
                    *p = 2.0 * (scale * li - ci) - *p;
                }
            }
            std::mem::swap(&mut t_prev, &mut t_cur);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_values() {
        assert_eq!(chebyshev_t(2, 0.5), -0.5);
        assert!((chebyshev_t(3, 0.5) + 1.0).abs() < 1e-15);
        for k in 0..10 {
            let y: f64 = 0.3;
            assert!((chebyshev_t(k, y) - (k as f64 * y.acos()).cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn polynomials_are_reproduced() {
        let e = ChebyshevExpansion::from_fn(|x| 1.0 + x - 0.25 * x * x * x, 4.0, 6);
        for x in [0.0, 0.7, 2.0, 3.9] {
            assert!((e.eval(x) - (1.0 + x - 0.25 * x * x * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_and_scalar_paths_agree() {
        let d = RMat::from_fn(4, 4, |i, j| if i == j { i as f64 } else { 0.0 });
        let e = ChebyshevExpansion::from_fn(|x| (-x).exp(), 4.0, 20);
        let v = vec![1.0; 4];
        let y = e.apply(&d, &v);
        let yb = e.apply_block(&d, &RMat::from_fn(4, 1, |_, _| 1.0));
        for i in 0..4 {
            assert!((y[i] - e.eval(i as f64)).abs() < 1e-13);
            assert!((yb[(i, 0)] - y[i]).abs() < 1e-13);
        }
    }
}
