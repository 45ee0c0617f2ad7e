//! Dense EFIE assembly on RWG functions.
//!
//! With `G(r, r') = e^{ikR}/(4πR)` the blocks are
//!
//! ```text
//! [Ts]_mn = ik ∫∫ f_m(r)·f_n(r') G
//! [Th]_mn = 1/(ik) ∫∫ ∇·f_m(r) ∇'·f_n(r') G
//! [R]_cd  = 1/(A_c A_d) ∫_c ∫_d G
//! [v]_m   = −∫ f_m·E^i
//! ```
//!
//! so `Th = c Σ R Σᵀ` with `c = 1/(ik)`, and `T = Ts + Th`.

mod singular;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use singular::{pair_integrals, static_potentials, PairIntegrals, PairKind, PairRules};

use crate::geom::{self, Point};
use crate::linalg::{self, c64, CMat, Csr, RMat};
use crate::mesh::{gram_patch, gram_pyramid, gram_rwg, local_rwg, BasisTopology, TriangleMesh};
use crate::qhd::IncidenceMatrix;
use crate::quadrature::TriangleRule;
use crate::{Error, Result};

pub const EPS0: f64 = 8.8541878128e-12;
pub const MU0: f64 = 1.25663706212e-6;

/// Incident plane wave `E^i(r) = E0 p̂ e^{ik d̂·r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub direction: Point,
    pub polarization: Point,
    pub amplitude: f64,
}

impl Default for PlaneWave {
    fn default() -> Self {
        PlaneWave {
            direction: [0.0, 0.0, 1.0],
            polarization: [1.0, 0.0, 0.0],
            amplitude: 1.0,
        }
    }
}

impl PlaneWave {
    pub fn validate(&self) -> Result<()> {
        let (nd, np) = (geom::norm(self.direction), geom::norm(self.polarization));
        if (nd - 1.0).abs() > 1e-9 || (np - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "plane wave direction and polarization must be unit vectors".into(),
            ));
        }
        if geom::dot(self.direction, self.polarization).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "polarization must be orthogonal to propagation".into(),
            ));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument("amplitude must be finite".into()));
        }
        Ok(())
    }

    pub fn field(&self, k: f64, r: Point) -> [c64; 3] {
        let ph = k * geom::dot(self.direction, r);
        let e = c64::new(ph.cos(), ph.sin()) * self.amplitude;
        self.polarization.map(|p| e * p)
    }
}

/// Frequency, medium and excitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveContext {
    pub frequency: f64,
    pub k: f64,
    pub epsilon: f64,
    pub mu: f64,
    pub wave: PlaneWave,
}

impl WaveContext {
    /// Vacuum background with the default plane wave.
    pub fn vacuum(frequency: f64) -> Result<Self> {
        Self::new(frequency, EPS0, MU0, PlaneWave::default())
    }

    pub fn new(frequency: f64, epsilon: f64, mu: f64, wave: PlaneWave) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "frequency must be positive, got {frequency}"
            )));
        }
        if !(epsilon > 0.0 && mu > 0.0) {
            return Err(Error::InvalidArgument("epsilon and mu must be positive".into()));
        }
        wave.validate()?;
        Ok(WaveContext {
            frequency,
            k: 2.0 * PI * frequency * (mu * epsilon).sqrt(),
            epsilon,
            mu,
            wave,
        })
    }

    pub fn with_wave(mut self, wave: PlaneWave) -> Result<Self> {
        wave.validate()?;
        self.wave = wave;
        Ok(self)
    }

    /// The constant `c = 1/(ik)` in `Th = c Σ R Σᵀ`.
    pub fn th_constant(&self) -> c64 {
        c64::new(0.0, -1.0 / self.k)
    }
}

/// Assembled system blocks for one mesh and frequency.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub ts: CMat,
    pub th: CMat,
    pub r: CMat,
    pub g: Csr,
    pub g_p: Csr,
    pub g_lambda: Csr,
    pub v: Vec<c64>,
    pub k: f64,
    pub normalized: bool,
}

impl OperatorSet {
    /// `T = Ts + Th`.
    pub fn t(&self) -> CMat {
        &self.ts + &self.th
    }
}

fn classify(mesh: &TriangleMesh, t: usize, s: usize, near_factor: f64) -> PairKind {
    if t == s {
        return PairKind::Same;
    }
    let (a, b) = (mesh.triangles()[t], mesh.triangles()[s]);
    if a.iter().any(|v| b.contains(v)) {
        return PairKind::Touching;
    }
    let size = |tri: usize| {
        let c = mesh.corners(tri);
        (0..3).map(|i| geom::dist(c[i], c[(i + 1) % 3])).fold(0.0_f64, f64::max)
    };
    let d = geom::dist(mesh.centroid(t), mesh.centroid(s));
    if d < near_factor * size(t).max(size(s)) {
        PairKind::Near
    } else {
        PairKind::Far
    }
}

#[derive(Clone, Copy)]
struct Want {
    ts: bool,
    th: bool,
    r: bool,
}

struct Blocks {
    ts: Option<CMat>,
    th: Option<CMat>,
    r: Option<CMat>,
}

/// Single pass over triangle pairs `t ≤ s`, mirrored.
fn assemble_blocks(mesh: &TriangleMesh, topo: &BasisTopology, k: f64, want: Want, rules: &PairRules) -> Blocks {
    let n = topo.n_edges();
    let nt = mesh.n_triangles();
    let zero = c64::new(0.0, 0.0);
    let mut ts = want.ts.then(|| CMat::zeros(n, n));
    let mut th = want.th.then(|| CMat::zeros(n, n));
    let mut r = want.r.then(|| CMat::zeros(nt, nt));
    let ik = c64::new(0.0, k);
    let c = c64::new(0.0, -1.0 / k);
    let corners: Vec<[Point; 3]> = (0..nt).map(|t| mesh.corners(t)).collect();
    let areas: Vec<f64> = (0..nt).map(|t| mesh.area(t)).collect();
    let locals: Vec<_> = (0..nt).map(|t| local_rwg(mesh, topo, t)).collect();
    for t in 0..nt {
        for s in t..nt {
            let kind = classify(mesh, t, s, rules.near_factor);
            let p = pair_integrals(&corners[t], &corners[s], areas[t], areas[s], k, kind, rules);
            let inv_aa = 1.0 / (areas[t] * areas[s]);
            if let Some(r) = r.as_mut() {
                r[(t, s)] = p.j0 * inv_aa;
                if s != t {
                    r[(s, t)] = p.j0 * inv_aa;
                }
            }
            for &(mi, si, pi) in &locals[t] {
                for &(mj, sj, qj) in &locals[s] {
                    let w = si * sj * inv_aa;
                    if let Some(ts) = ts.as_mut() {
                        let mut acc = p.jrr;
                        for d in 0..3 {
                            acc -= qj[d] * p.jr[d] + pi[d] * p.jrp[d];
                        }
                        acc += p.j0 * geom::dot(pi, qj);
                        let val = ik * acc * (0.25 * w);
                        ts[(mi, mj)] += val;
                        if s != t {
                            ts[(mj, mi)] += val;
                        }
                    }
                    if let Some(th) = th.as_mut() {
                        let val = if w == 0.0 { zero } else { c * p.j0 * w };
                        th[(mi, mj)] += val;
                        if s != t {
                            th[(mj, mi)] += val;
                        }
                    }
                }
            }
        }
    }
    Blocks { ts, th, r }
}

/// Vector-potential block.
pub fn assemble_ts(mesh: &TriangleMesh, topo: &BasisTopology, ctx: &WaveContext) -> CMat {
    let want = Want {
        ts: true,
        th: false,
        r: false,
    };
    assemble_blocks(mesh, topo, ctx.k, want, &PairRules::default())
        .ts
        .expect("requested")
}

/// Scalar-potential block, assembled directly from RWG divergences.
pub fn assemble_th(mesh: &TriangleMesh, topo: &BasisTopology, ctx: &WaveContext) -> CMat {
    let want = Want {
        ts: false,
        th: true,
        r: false,
    };
    assemble_blocks(mesh, topo, ctx.k, want, &PairRules::default())
        .th
        .expect("requested")
}

/// Scalar-potential block as `c Σ R Σᵀ`.
pub fn assemble_th_factorized(sigma: &IncidenceMatrix, r: &CMat, ctx: &WaveContext) -> CMat {
    let s = linalg::to_complex(&sigma.to_dense());
    let c = ctx.th_constant();
    let mut th = &s * r * s.transpose();
    th.col_iter_mut().for_each(|col| col.iter_mut().for_each(|v| *v *= c));
    th
}

/// Patch single-layer matrix.
pub fn assemble_single_layer_patch(mesh: &TriangleMesh, ctx: &WaveContext) -> CMat {
    let topo = crate::mesh::build_basis_topology(mesh);
    let want = Want {
        ts: false,
        th: false,
        r: true,
    };
    assemble_blocks(mesh, &topo, ctx.k, want, &PairRules::default())
        .r
        .expect("requested")
}

/// Tested incident field `v_m = −∫ f_m·E^i`.
pub fn assemble_rhs(mesh: &TriangleMesh, topo: &BasisTopology, ctx: &WaveContext) -> Vec<c64> {
    assemble_rhs_with(mesh, topo, ctx, &TriangleRule::gauss7().subdivided(2))
}

pub fn assemble_rhs_with(
    mesh: &TriangleMesh,
    topo: &BasisTopology,
    ctx: &WaveContext,
    rule: &TriangleRule,
) -> Vec<c64> {
    let mut v = vec![c64::new(0.0, 0.0); topo.n_edges()];
    for t in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.corners(t);
        let area = mesh.area(t);
        let loc = local_rwg(mesh, topo, t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let r = geom::bary(a, b, c, *l);
            let e = ctx.wave.field(ctx.k, r);
            for &(m, s, p) in &loc {
                let f = geom::scale(geom::sub(r, p), s * 0.5 / area);
                let fe = e[0] * f[0] + e[1] * f[1] + e[2] * f[2];
                v[m] -= fe * (w * area);
            }
        }
    }
    v
}

/// All blocks plus Gram matrices in one assembly pass.
pub fn assemble_operators(mesh: &TriangleMesh, topo: &BasisTopology, ctx: &WaveContext) -> OperatorSet {
    let want = Want {
        ts: true,
        th: true,
        r: true,
    };
    let b = assemble_blocks(mesh, topo, ctx.k, want, &PairRules::default());
    OperatorSet {
        ts: b.ts.expect("requested"),
        th: b.th.expect("requested"),
        r: b.r.expect("requested"),
        g: gram_rwg(mesh, topo),
        g_p: gram_patch(mesh),
        g_lambda: gram_pyramid(mesh),
        v: assemble_rhs(mesh, topo, ctx),
        k: ctx.k,
        normalized: false,
    }
}

/// `T̃ = G^{−1/2} T G^{−1/2}`, `ṽ = G^{−1/2} v` for both blocks.
pub fn normalize_operator(ops: &OperatorSet) -> Result<OperatorSet> {
    let (_, g_inv_sqrt) = linalg::spd_sqrt_pair(&ops.g.to_dense())?;
    Ok(normalize_with(ops, &g_inv_sqrt))
}

/// As [`normalize_operator`] with a precomputed `G^{−1/2}`.
pub fn normalize_with(ops: &OperatorSet, g_inv_sqrt: &RMat) -> OperatorSet {
    let sandwich = |a: &CMat| linalg::complex_times_real(&linalg::real_times_complex(g_inv_sqrt, a), g_inv_sqrt);
    let v = (0..ops.v.len())
        .map(|i| ops.v.iter().enumerate().map(|(j, vj)| vj * g_inv_sqrt[(i, j)]).sum())
        .collect();
    OperatorSet {
        ts: sandwich(&ops.ts),
        th: sandwich(&ops.th),
        v,
        normalized: true,
        ..ops.clone()
    }
}

/// Transverse radiation vector `N⊥(r̂)` of the current `Σ j_m f_m`, with
/// `N(r̂) = ∫ J(r') e^{−ik r̂·r'} dS'`.
pub fn far_field(mesh: &TriangleMesh, topo: &BasisTopology, k: f64, j: &[c64], dir: Point) -> [c64; 3] {
    let dir = geom::normalize(dir);
    let rule = TriangleRule::gauss7().subdivided(1);
    let zero = c64::new(0.0, 0.0);
    let mut n = [zero; 3];
    for t in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.corners(t);
        let area = mesh.area(t);
        let loc = local_rwg(mesh, topo, t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let r = geom::bary(a, b, c, *l);
            let ph = -k * geom::dot(dir, r);
            let e = c64::new(ph.cos(), ph.sin()) * (w * area);
            for &(m, s, p) in &loc {
                let f = geom::scale(geom::sub(r, p), s * 0.5 / area);
                for d in 0..3 {
                    n[d] += j[m] * e * f[d];
                }
            }
        }
    }
    let radial = n[0] * dir[0] + n[1] * dir[1] + n[2] * dir[2];
    [0, 1, 2].map(|d| n[d] - radial * dir[d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_basis_topology, MeshGenerator};
    use crate::qhd::{lambda_matrix, sigma_matrix};

    fn setup(spec: &str) -> (TriangleMesh, BasisTopology) {
        let mesh = spec.parse::<MeshGenerator>().unwrap().build().unwrap();
        let topo = build_basis_topology(&mesh);
        (mesh, topo)
    }

    #[test]
    fn wavenumber_and_plane_wave_validation() {
        let ctx = WaveContext::vacuum(1e6).unwrap();
        assert!((ctx.k - 2.0 * PI * 1e6 / 299_792_458.0).abs() < 1e-9 * ctx.k);
        let bad = PlaneWave {
            polarization: [0.0, 0.0, 1.0],
            ..Default::default()
        };
        assert!(ctx.clone().with_wave(bad).is_err());
        assert!(WaveContext::vacuum(-1.0).is_err());
    }

    #[test]
    fn blocks_are_symmetric_and_factorize() {
        let (mesh, topo) = setup("gen:icosphere/1");
        let ctx = WaveContext::vacuum(1e8).unwrap();
        let ops = assemble_operators(&mesh, &topo, &ctx);
        let ts = &ops.ts;
        let d = linalg::crel_diff(ts, &ts.transpose().to_owned());
        assert!(d < 1e-12, "{d}");
        assert!(linalg::crel_diff(&ops.r, &ops.r.transpose().to_owned()) < 1e-12);
        let sigma = sigma_matrix(&topo);
        let fact = assemble_th_factorized(&sigma, &ops.r, &ctx);
        assert!(linalg::crel_diff(&ops.th, &fact) < 1e-12);
        let lambda = linalg::to_complex(&lambda_matrix(&topo).to_dense());
        let thl = &ops.th * &lambda;
        assert!(linalg::cfrobenius(&thl) < 1e-10 * linalg::cfrobenius(&ops.th));
    }

    #[test]
    fn low_frequency_scaling() {
        let (mesh, topo) = setup("gen:icosahedron");
        let a = WaveContext::vacuum(1e4).unwrap();
        let b = WaveContext::vacuum(1e5).unwrap();
        let (tsa, tsb) = (assemble_ts(&mesh, &topo, &a), assemble_ts(&mesh, &topo, &b));
        let ratio = linalg::cfrobenius(&tsb) / linalg::cfrobenius(&tsa);
        assert!((ratio - 10.0).abs() < 1e-4, "{ratio}");
        let (tha, thb) = (assemble_th(&mesh, &topo, &a), assemble_th(&mesh, &topo, &b));
        let ratio = linalg::cfrobenius(&tha) / linalg::cfrobenius(&thb);
        assert!((ratio - 10.0).abs() < 1e-4, "{ratio}");
    }

    #[test]
    fn patch_self_term_matches_closed_form_at_low_k() {
        let mesh = TriangleMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.3, -1.0]],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]],
            "test",
        )
        .unwrap();
        let ctx = WaveContext::vacuum(1.0).unwrap();
        let r = assemble_single_layer_patch(&mesh, &ctx);
        // ∫∫ 1/R over the unit right triangle, divided by 4π A²
        let s2 = 2f64.sqrt();
        let f = |x: f64, y: f64, z: f64| (((x + y).powi(2) - z * z) / (y * y - (z - x).powi(2))).ln() / x;
        let closed = 4.0 * 0.25 / 3.0 * (f(s2, 1.0, 1.0) + f(1.0, 1.0, s2) + f(1.0, s2, 1.0));
        let expect = closed / (4.0 * PI * 0.25);
        let t = (0..4)
            .find(|&t| (mesh.area(t) - 0.5).abs() < 1e-12 && mesh.centroid(t)[2] == 0.0)
            .unwrap();
        assert!(
            (r[(t, t)].re - expect).abs() < 1e-6 * expect,
            "{} vs {expect}",
            r[(t, t)].re
        );
    }

    #[test]
    fn rhs_linearity_and_oracle() {
        let (mesh, topo) = setup("gen:octahedron");
        let ctx = WaveContext::vacuum(1e7).unwrap();
        let v = assemble_rhs(&mesh, &topo, &ctx);
        let wave2 = PlaneWave {
            amplitude: 2.0,
            ..ctx.wave
        };
        let v2 = assemble_rhs(&mesh, &topo, &ctx.clone().with_wave(wave2).unwrap());
        for (a, b) in v.iter().zip(&v2) {
            assert!((2.0 * a - b).norm() < 1e-14);
        }
        let zero = PlaneWave {
            amplitude: 0.0,
            ..ctx.wave
        };
        let v0 = assemble_rhs(&mesh, &topo, &ctx.clone().with_wave(zero).unwrap());
        assert!(v0.iter().all(|x| x.norm() == 0.0));
        let fine = assemble_rhs_with(&mesh, &topo, &ctx, &TriangleRule::conical(20));
        for (a, b) in v.iter().zip(&fine) {
            assert!((a - b).norm() < 1e-10 * b.norm().max(1e-3), "{a} {b}");
        }
    }

    #[test]
    fn normalization_with_identity_gram_is_idempotent() {
        let (mesh, topo) = setup("gen:tetrahedron");
        let ctx = WaveContext::vacuum(1e7).unwrap();
        let ops = assemble_operators(&mesh, &topo, &ctx);
        let id = RMat::identity(topo.n_edges(), topo.n_edges());
        let once = normalize_with(&ops, &id);
        let twice = normalize_with(&once, &id);
        assert!(linalg::crel_diff(&once.ts, &twice.ts) < 1e-15);
        assert!(twice.normalized);
        let full = normalize_operator(&ops).unwrap();
        assert!(linalg::crel_diff(&full.th, &full.th.transpose().to_owned()) < 1e-12);
    }
}
