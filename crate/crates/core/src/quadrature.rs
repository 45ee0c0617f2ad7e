//! Quadrature rules on the reference triangle, expressed in barycentric
//! coordinates with weights summing to one (multiply by the area).

use crate::linalg::gauss_legendre;

#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Three-point edge-midpoint rule, exact for quadratics.
    pub fn midpoint3() -> Self {
        TriangleRule {
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![1.0 / 3.0; 3],
        }
    }

    /// Seven-point symmetric Gauss rule, exact for degree 5.
    pub fn gauss7() -> Self {
        let s15 = 15f64.sqrt();
        let a1 = (6.0 - s15) / 21.0;
        let a2 = (6.0 + s15) / 21.0;
        let w1 = (155.0 - s15) / 1200.0;
        let w2 = (155.0 + s15) / 1200.0;
        let b1 = 1.0 - 2.0 * a1;
        let b2 = 1.0 - 2.0 * a2;
        TriangleRule {
            points: vec![
                [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
                [b1, a1, a1],
                [a1, b1, a1],
                [a1, a1, b1],
                [b2, a2, a2],
                [a2, b2, a2],
                [a2, a2, b2],
            ],
            weights: vec![0.225, w1, w1, w1, w2, w2, w2],
        }
    }

    /// Collapsed (Duffy) tensor Gauss-Legendre rule with `n²` points,
    /// exact for polynomials of degree `2n − 2`.
    pub fn conical(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (xi, wi) in x.iter().zip(&w) {
            let u = 0.5 * (xi + 1.0);
            for (xj, wj) in x.iter().zip(&w) {
                let v = 0.5 * (xj + 1.0);
                let l1 = u;
                let l2 = (1.0 - u) * v;
                points.push([1.0 - l1 - l2, l1, l2]);
                // dA = (1−u) du dv on the unit right triangle of area 1/2
                weights.push(2.0 * 0.25 * wi * wj * (1.0 - u));
            }
        }
        TriangleRule { points, weights }
    }

    /// Rule for integrands with logarithmic derivative singularities along the
    /// whole boundary: the triangle is split at its centroid into three fans,
    /// each integrated with `n×n` Gauss-Legendre points graded toward the
    /// outer edge (power `q`) and toward both edge ends (sigmoidal, power `qv`).
    pub fn edge_graded(n: usize, q: f64, qv: f64) -> Self {
        let (x, w) = gauss_legendre(n);
        let c = [1.0 / 3.0; 3];
        let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut points = Vec::with_capacity(3 * n * n);
        let mut weights = Vec::with_capacity(3 * n * n);
        for e in 0..3 {
            let (a, b) = (corners[e], corners[(e + 1) % 3]);
            for (xi, wi) in x.iter().zip(&w) {
                let s = 0.5 * (xi + 1.0);
                let u = 1.0 - (1.0 - s).powf(q);
                let du = q * (1.0 - s).powf(q - 1.0);
                for (xj, wj) in x.iter().zip(&w) {
                    let t = 0.5 * (xj + 1.0);
                    let (tq, sq) = (t.powf(qv), (1.0 - t).powf(qv));
                    let v = tq / (tq + sq);
                    let dv = qv * (t * (1.0 - t)).powf(qv - 1.0) / (tq + sq).powi(2);
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = (1.0 - u) * c[k] + u * ((1.0 - v) * a[k] + v * b[k]);
                    }
                    points.push(p);
                    // each fan has a third of the area; dA/A_fan = 2u du dv
                    weights.push(0.25 * wi * wj * du * dv * 2.0 * u / 3.0);
                }
            }
        }
        TriangleRule { points, weights }
    }

    /// Splits every point of `self` over the 4 midpoint sub-triangles, `levels` times.
    pub fn subdivided(&self, levels: usize) -> Self {
        let mut rule = self.clone();
        for _ in 0..levels {
            let subs: [[[f64; 3]; 3]; 4] = [
                [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]],
                [[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.5, 0.5]],
                [[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]],
                [[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]],
            ];
            let mut points = Vec::with_capacity(rule.len() * 4);
            let mut weights = Vec::with_capacity(rule.len() * 4);
            for sub in &subs {
                for (p, w) in rule.points.iter().zip(&rule.weights) {
                    let mut q = [0.0; 3];
                    for (k, corner) in sub.iter().enumerate() {
                        for c in 0..3 {
                            q[c] += p[k] * corner[c];
                        }
                    }
                    points.push(q);
                    weights.push(0.25 * w);
                }
            }
            rule = TriangleRule { points, weights };
        }
        rule
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact ∫ λ1^a λ2^b over the reference triangle divided by its area:
    /// 2·a!·b!/(a+b+2)!.
    fn monomial_mean(a: u32, b: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        2.0 * f(a) * f(b) / f(a + b + 2)
    }

    fn check(rule: &TriangleRule, degree: u32) {
        let wsum: f64 = rule.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-14);
        for a in 0..=degree {
            for b in 0..=(degree - a) {
                let q: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
                    .sum();
                let exact = monomial_mean(a, b);
                assert!((q - exact).abs() < 1e-13, "a={a} b={b}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn gauss7_is_degree_five() {
        check(&TriangleRule::gauss7(), 5);
    }

    #[test]
    fn midpoint_is_degree_two() {
        check(&TriangleRule::midpoint3(), 2);
    }

    #[test]
    fn conical_degree() {
        for n in 2..8 {
            check(&TriangleRule::conical(n), (2 * n - 2) as u32);
        }
    }

    #[test]
    fn edge_graded_integrates_polynomials() {
        let rule = TriangleRule::edge_graded(14, 3.0, 2.0);
        let wsum: f64 = rule.weights.iter().sum();
        assert!((wsum - 1.0).abs() < 1e-8, "{wsum}");
        // ∫ λ₁² dA / A = 1/6
        let m2: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p[0] * p[0])
            .sum();
        assert!((m2 - 1.0 / 6.0).abs() < 1e-8, "{m2}");
    }

    #[test]
    fn subdivision_preserves_exactness() {
        check(&TriangleRule::gauss7().subdivided(2), 5);
    }
}
