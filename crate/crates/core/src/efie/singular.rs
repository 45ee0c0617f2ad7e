//! Triangle-pair integrals of the Helmholtz kernel `e^{ikR}/(4πR)` against
//! `1`, `r`, `r'` and `r·r'`, with singularity extraction for near pairs.

use std::f64::consts::PI;

use crate::geom::{self, Point};
use crate::linalg::c64;
use crate::quadrature::TriangleRule;

/// `∫_T ∫_S {1, r, r', r·r'} G(r, r') dS' dS` for observation triangle `T`
/// (unprimed) and source triangle `S` (primed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairIntegrals {
    pub j0: c64,
    pub jr: [c64; 3],
    pub jrp: [c64; 3],
    pub jrr: c64,
}

impl PairIntegrals {
    /// The same integrals with the roles of the two triangles exchanged.
    pub fn swapped(&self) -> Self {
        PairIntegrals {
            j0: self.j0,
            jr: self.jrp,
            jrp: self.jr,
            jrr: self.jrr,
        }
    }
}

/// Static potentials of a flat triangle at `r`:
/// `(∫_S 1/R dS', ∫_S (r' − r)/R dS')`.
pub fn static_potentials(r: Point, tri: &[Point; 3]) -> (f64, Point) {
    let nvec = geom::area_vector(tri[0], tri[1], tri[2]);
    let n = geom::normalize(nvec);
    let d = geom::dot(n, geom::sub(r, tri[0]));
    let ad = d.abs();
    let rho = geom::sub(r, geom::scale(n, d));
    let mut i0 = 0.0;
    let mut iv = [0.0; 3];
    let size = geom::dist(tri[0], tri[1]).max(geom::dist(tri[1], tri[2]));
    let tiny = 1e-12 * size;
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let l = geom::normalize(geom::sub(b, a));
        let u = geom::cross(l, n);
        let lp = geom::dot(geom::sub(b, rho), l);
        let lm = geom::dot(geom::sub(a, rho), l);
        let p0 = geom::dot(geom::sub(a, rho), u);
        let r02 = p0 * p0 + d * d;
        let rp = (lp * lp + r02).sqrt();
        let rm = (lm * lm + r02).sqrt();
        let r0 = r02.sqrt();
        // ln((R+ + l+)/(R− + l−)); for l < 0 use R + l = R0²/(R − l)
        let f = |l: f64, rr: f64| {
            if l >= 0.0 {
                (rr + l).ln()
            } else {
                2.0 * r0.ln() - (rr - l).ln()
            }
        };
        // on the edge line every use of the log carries a vanishing factor
        let lg = if r0 <= tiny { 0.0 } else { f(lp, rp) - f(lm, rm) };
        if p0.abs() > tiny {
            i0 += p0 * lg;
            if ad > tiny {
                i0 -= ad * ((p0 * lp / (r02 + ad * rp)).atan() - (p0 * lm / (r02 + ad * rm)).atan());
            }
        }
        let coef = 0.5 * (r02 * lg + lp * rp - lm * rm);
        iv = geom::add(iv, geom::scale(u, coef));
    }
    // (ρ' − ρ) is in-plane; r' − r = (ρ' − ρ) − d n̂
    (i0, geom::sub(iv, geom::scale(n, d * i0)))
}

/// Quadrature configuration for pair integrals.
#[derive(Debug, Clone)]
pub struct PairRules {
    pub far: TriangleRule,
    pub self_outer: TriangleRule,
    pub touching_outer: TriangleRule,
    pub near_outer: TriangleRule,
    pub remainder_inner: TriangleRule,
    /// Pairs with centroid distance below `near_factor × longest edge` use extraction.
    pub near_factor: f64,
}

impl Default for PairRules {
    fn default() -> Self {
        let g7 = TriangleRule::gauss7();
        PairRules {
            far: g7.clone(),
            self_outer: TriangleRule::edge_graded(14, 3.0, 2.0),
            touching_outer: TriangleRule::edge_graded(14, 3.0, 2.0),
            near_outer: g7.subdivided(2),
            remainder_inner: g7,
            near_factor: 2.0,
        }
    }
}

/// Relation between two triangles, selecting the integration strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Same,
    Touching,
    Near,
    Far,
}

fn mapped(rule: &TriangleRule, tri: &[Point; 3]) -> Vec<Point> {
    rule.points
        .iter()
        .map(|&l| geom::bary(tri[0], tri[1], tri[2], l))
        .collect()
}

#[inline]
fn expikr(k: f64, r: f64) -> c64 {
    let (s, c) = (k * r).sin_cos();
    c64::new(c, s)
}

/// `(e^{ikR} − 1)/R`, continuous at `R = 0`.
#[inline]
fn remainder_kernel(k: f64, r: f64) -> c64 {
    let x = k * r;
    if x.abs() < 1e-4 {
        // series: ik − k²R/2 − i k³R²/6
        c64::new(-0.5 * k * x, k * (1.0 - x * x / 6.0))
    } else {
        (expikr(k, r) - c64::new(1.0, 0.0)) / r
    }
}

fn cadd(a: [c64; 3], b: [c64; 3]) -> [c64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn cscale(p: Point, s: c64) -> [c64; 3] {
    [s * p[0], s * p[1], s * p[2]]
}

fn cdot(p: Point, v: [c64; 3]) -> c64 {
    v[0] * p[0] + v[1] * p[1] + v[2] * p[2]
}

/// Computes the pair integrals for observation triangle `t` and source `s`.
pub fn pair_integrals(
    t: &[Point; 3],
    s: &[Point; 3],
    area_t: f64,
    area_s: f64,
    k: f64,
    kind: PairKind,
    rules: &PairRules,
) -> PairIntegrals {
    let zero = c64::new(0.0, 0.0);
    let mut out = PairIntegrals {
        j0: zero,
        jr: [zero; 3],
        jrp: [zero; 3],
        jrr: zero,
    };
    let inv4pi = 1.0 / (4.0 * PI);
    if kind == PairKind::Far {
        let pt = mapped(&rules.far, t);
        let ps = mapped(&rules.far, s);
        for (r, wt) in pt.iter().zip(&rules.far.weights) {
            let mut k0 = zero;
            let mut k1 = [zero; 3];
            for (rp, ws) in ps.iter().zip(&rules.far.weights) {
                let rr = geom::dist(*r, *rp);
                let g = expikr(k, rr) * (ws * inv4pi / rr);
                k0 += g;
                k1 = cadd(k1, cscale(*rp, g));
            }
            accumulate(&mut out, *r, wt * area_t * area_s, k0, k1);
        }
        return out;
    }
    let outer = match kind {
        PairKind::Same => &rules.self_outer,
        PairKind::Touching => &rules.touching_outer,
        _ => &rules.near_outer,
    };
    let pt = mapped(outer, t);
    let ps = mapped(&rules.remainder_inner, s);
    for (r, wt) in pt.iter().zip(&outer.weights) {
        let (i0, iv) = static_potentials(*r, s);
        // static parts: ∫ 1/R and ∫ r'/R = r I0 + ∫ (r' − r)/R
        let mut k0 = c64::new(i0 * inv4pi, 0.0);
        let stat1 = geom::add(geom::scale(*r, i0), iv);
        let mut k1 = [
            c64::new(stat1[0] * inv4pi, 0.0),
            c64::new(stat1[1] * inv4pi, 0.0),
            c64::new(stat1[2] * inv4pi, 0.0),
        ];
        if k != 0.0 {
            for (rp, ws) in ps.iter().zip(&rules.remainder_inner.weights) {
                let g = remainder_kernel(k, geom::dist(*r, *rp)) * (ws * area_s * inv4pi);
                k0 += g;
                k1 = cadd(k1, cscale(*rp, g));
            }
        }
        // k0, k1 already carry the source area
        accumulate(&mut out, *r, wt * area_t, k0, k1);
    }
    if kind == PairKind::Same {
        // equal in exact arithmetic; averaging keeps Ts exactly symmetric
        for d in 0..3 {
            let m = 0.5 * (out.jr[d] + out.jrp[d]);
            out.jr[d] = m;
            out.jrp[d] = m;
        }
    }
    out
}

#[inline]
fn accumulate(out: &mut PairIntegrals, r: Point, w: f64, k0: c64, k1: [c64; 3]) {
    out.j0 += k0 * w;
    out.jr = cadd(out.jr, cscale(r, k0 * w));
    out.jrp = cadd(out.jrp, [k1[0] * w, k1[1] * w, k1[2] * w]);
    out.jrr += cdot(r, k1) * w;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_area(t: &[Point; 3]) -> f64 {
        geom::triangle_area(t[0], t[1], t[2])
    }

    /// Brute-force `∫ 1/R` and `∫ (r' − r)/R` over a triangle for a point off
    /// its plane, by a fine subdivided rule.
    fn brute_static(r: Point, tri: &[Point; 3]) -> (f64, Point) {
        let rule = TriangleRule::gauss7().subdivided(5);
        let a = tri_area(tri);
        let mut i0 = 0.0;
        let mut iv = [0.0; 3];
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let p = geom::bary(tri[0], tri[1], tri[2], *l);
            let d = geom::sub(p, r);
            let rr = geom::norm(d);
            i0 += w * a / rr;
            iv = geom::add(iv, geom::scale(d, w * a / rr));
        }
        (i0, iv)
    }

    #[test]
    fn static_potentials_match_brute_force_off_plane() {
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.9, 0.1]];
        for r in [[0.3, 0.3, 0.5], [2.0, -1.0, 0.7], [0.5, 0.5, -0.3], [1.5, 0.05, 0.4]] {
            let (a0, av) = static_potentials(r, &tri);
            let (b0, bv) = brute_static(r, &tri);
            assert!((a0 - b0).abs() < 1e-9 * b0, "{r:?}: {a0} vs {b0}");
            for c in 0..3 {
                assert!((av[c] - bv[c]).abs() < 1e-9 * b0, "{r:?}[{c}]");
            }
        }
    }

    #[test]
    fn in_plane_point_on_edge_line_is_finite() {
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let (i0, iv) = static_potentials([2.0, 0.0, 0.0], &tri);
        let (b0, _) = brute_static([2.0, 0.0, 1e-9], &tri);
        assert!(i0.is_finite() && iv.iter().all(|v| v.is_finite()));
        assert!((i0 - b0).abs() < 1e-7 * b0);
    }

    #[test]
    fn static_self_term_matches_closed_form() {
        // ∫_T∫_T 1/R = (4A²/3) Σ_cyc (1/a) ln(((a+b)² − c²)/(b² − (c − a)²))
        let tri = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let a = geom::dist(tri[1], tri[2]);
        let b = geom::dist(tri[2], tri[0]);
        let c = geom::dist(tri[0], tri[1]);
        let area = 0.5;
        let f = |x: f64, y: f64, z: f64| ((x + y).powi(2) - z * z).ln() / x - (y * y - (z - x).powi(2)).ln() / x;
        let closed = 4.0 * area * area / 3.0 * (f(a, b, c) + f(b, c, a) + f(c, a, b));
        let p = pair_integrals(&tri, &tri, area, area, 0.0, PairKind::Same, &PairRules::default());
        let got = p.j0.re * 4.0 * PI;
        assert!((got - closed).abs() < 1e-7 * closed, "{got} vs {closed}");
        assert_eq!(p.j0.im, 0.0);
    }

    #[test]
    fn near_and_far_paths_agree_at_moderate_distance() {
        let t = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let s = [[0.0, 0.0, 3.0], [1.0, 0.2, 3.1], [0.1, 1.0, 2.9]];
        let rules = PairRules {
            far: TriangleRule::gauss7().subdivided(2),
            ..Default::default()
        };
        let (at, as_) = (tri_area(&t), tri_area(&s));
        let far = pair_integrals(&t, &s, at, as_, 0.3, PairKind::Far, &rules);
        let near = pair_integrals(&t, &s, at, as_, 0.3, PairKind::Near, &rules);
        assert!((far.j0 - near.j0).norm() < 1e-7 * far.j0.norm());
        assert!((far.jrr - near.jrr).norm() < 1e-6 * far.jrr.norm());
    }

    #[test]
    fn swap_symmetry_of_touching_pair() {
        let t = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let s = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.4, -0.2, -0.8]];
        let rules = PairRules::default();
        let (at, as_) = (tri_area(&t), tri_area(&s));
        let a = pair_integrals(&t, &s, at, as_, 0.1, PairKind::Touching, &rules);
        let b = pair_integrals(&s, &t, as_, at, 0.1, PairKind::Touching, &rules).swapped();
        assert!((a.j0 - b.j0).norm() < 1e-6 * a.j0.norm());
        for c in 0..3 {
            assert!((a.jr[c] - b.jr[c]).norm() < 1e-6 * a.j0.norm());
        }
    }
}
