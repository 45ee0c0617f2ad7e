use qhfilters::efie::{assemble_operators, assemble_ts, WaveContext};
use qhfilters::geom::{self, Point};
use qhfilters::linalg::{c64, gauss_legendre};
use qhfilters::mesh::{build_basis_topology, icosphere, rwg_eval, BasisTopology, TriangleMesh};

/// Collapsed tensor Gauss rule on a triangle: points and weights (summing to the area).
fn duffy(c: [Point; 3], n: usize) -> Vec<(Point, f64)> {
    let (x, w) = gauss_legendre(n);
    let area = geom::triangle_area(c[0], c[1], c[2]);
    let mut out = Vec::with_capacity(n * n);
    for (xi, wi) in x.iter().zip(&w) {
        let u = 0.5 * (xi + 1.0);
        for (xj, wj) in x.iter().zip(&w) {
            let v = 0.5 * (xj + 1.0) * (1.0 - u);
            let p = geom::bary(c[0], c[1], c[2], [1.0 - u - v, u, v]);
            out.push((p, area * 0.5 * wi * wj * (1.0 - u)));
        }
    }
    out
}

fn ts_entry_oracle(mesh: &TriangleMesh, topo: &BasisTopology, k: f64, m: usize, n: usize, order: usize) -> c64 {
    let supp = |e: usize| [topo.edges[e].c_plus, topo.edges[e].c_minus];
    let mut acc = c64::new(0.0, 0.0);
    for t in supp(m) {
        let pt = duffy(mesh.corners(t), order);
        for s in supp(n) {
            let ps = duffy(mesh.corners(s), order);
            for &(r, wr) in &pt {
                let fm = rwg_eval(mesh, topo, m, t, r);
                for &(rp, wp) in &ps {
                    let fn_ = rwg_eval(mesh, topo, n, s, rp);
                    let d = geom::dist(r, rp);
                    let g = c64::new(0.0, k * d).exp() / (4.0 * std::f64::consts::PI * d);
                    acc += g * (wr * wp * geom::dot(fm, fn_));
                }
            }
        }
    }
    acc * c64::new(0.0, k)
}

fn far_pair(mesh: &TriangleMesh, topo: &BasisTopology) -> (usize, usize) {
    // the edges whose midpoints are farthest apart
    let mid = |e: usize| {
        let r = &topo.edges[e];
        geom::scale(geom::add(mesh.vertices()[r.tail], mesh.vertices()[r.head]), 0.5)
    };
    let m = 0;
    let n = (1..topo.n_edges())
        .max_by(|&a, &b| geom::dist(mid(m), mid(a)).total_cmp(&geom::dist(mid(m), mid(b))))
        .unwrap();
    (m, n)
}

#[test]
fn far_separated_entry_matches_brute_force_quadrature() {
    let mesh = icosphere(2, 1.0).unwrap();
    let topo = build_basis_topology(&mesh);
    let ctx = WaveContext::vacuum(3e7).unwrap();
    let ts = assemble_ts(&mesh, &topo, &ctx);
    let (m, n) = far_pair(&mesh, &topo);
    let coarse = ts_entry_oracle(&mesh, &topo, ctx.k, m, n, 10);
    let oracle = ts_entry_oracle(&mesh, &topo, ctx.k, m, n, 16);
    assert!((coarse - oracle).norm() < 1e-12 * oracle.norm(), "oracle not converged");
    let rel = (ts[(m, n)] - oracle).norm() / oracle.norm();
    assert!(rel < 1e-8, "relative error {rel:e}");
}

#[test]
fn th_factorization_and_loop_annihilation() {
    let mesh = icosphere(2, 1.0).unwrap();
    let topo = build_basis_topology(&mesh);
    let ops = assemble_operators(&mesh, &topo, &WaveContext::vacuum(1e7).unwrap());
    let s = qhfilters::qhd::sigma_matrix(&topo).to_dense();
    let l = qhfilters::qhd::lambda_matrix(&topo).to_dense();
    let c = WaveContext::vacuum(1e7).unwrap().th_constant();
    let srs = qhfilters::linalg::real_times_complex(
        &s,
        &qhfilters::linalg::complex_times_real(&ops.r, &s.transpose().to_owned()),
    );
    let factored = srs * faer::Scale(c);
    assert!(qhfilters::linalg::crel_diff(&ops.th, &factored) < 1e-8);
    let thl = qhfilters::linalg::complex_times_real(&ops.th, &l);
    assert!(qhfilters::linalg::cfrobenius(&thl) < 1e-8 * qhfilters::linalg::cfrobenius(&ops.th));
}
