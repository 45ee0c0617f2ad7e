use super::{BasisTopology, TriangleMesh};
use crate::geom::{self, Point};
use crate::linalg::Csr;
use crate::quadrature::TriangleRule;

/// Value of RWG function `m` at point `r` of triangle `t` (zero off its support).
pub fn rwg_eval(mesh: &TriangleMesh, topo: &BasisTopology, m: usize, t: usize, r: Point) -> Point {
    let e = &topo.edges[m];
    let v = mesh.vertices();
    if t == e.c_plus {
        geom::scale(geom::sub(r, v[e.v_plus]), 0.5 / e.a_plus)
    } else if t == e.c_minus {
        geom::scale(geom::sub(v[e.v_minus], r), 0.5 / e.a_minus)
    } else {
        [0.0; 3]
    }
}

/// Free vertex and sign of each RWG restricted to triangle `t`, in the order of
/// `topo.tri_edges[t]`.
pub(crate) fn local_rwg(mesh: &TriangleMesh, topo: &BasisTopology, t: usize) -> [(usize, f64, Point); 3] {
    let v = mesh.vertices();
    topo.tri_edges[t].map(|(m, s)| {
        let e = &topo.edges[m];
        let free = if s > 0.0 { e.v_plus } else { e.v_minus };
        (m, s, v[free])
    })
}

/// RWG mass matrix `[G]_mn = ∫ f_m·f_n`.
///
/// The integrand is quadratic on each triangle, so the edge-midpoint rule is exact.
pub fn gram_rwg(mesh: &TriangleMesh, topo: &BasisTopology) -> Csr {
    let rule = TriangleRule::midpoint3();
    let mut trip = Vec::with_capacity(9 * mesh.n_triangles());
    for t in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.corners(t);
        let area = mesh.area(t);
        let loc = local_rwg(mesh, topo, t);
        let pts: Vec<Point> = rule.points.iter().map(|&l| geom::bary(a, b, c, l)).collect();
        for &(mi, si, pi) in &loc {
            for &(mj, sj, pj) in &loc {
                let q: f64 = pts
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&r, w)| w * geom::dot(geom::sub(r, pi), geom::sub(r, pj)))
                    .sum();
                trip.push((mi, mj, si * sj * q / (4.0 * area)));
            }
        }
    }
    let n = topo.n_edges();
    Csr::from_triplets(n, n, &trip)
}

/// Patch Gram matrix: diagonal with `1/A` (patches are `1/A` indicators).
pub fn gram_patch(mesh: &TriangleMesh) -> Csr {
    let n = mesh.n_triangles();
    let trip: Vec<_> = (0..n).map(|t| (t, t, 1.0 / mesh.area(t))).collect();
    Csr::from_triplets(n, n, &trip)
}

/// Linear hat-function mass matrix.
pub fn gram_pyramid(mesh: &TriangleMesh) -> Csr {
    let mut trip = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a = mesh.area(t);
        for &i in tri {
            for &j in tri {
                trip.push((i, j, if i == j { a / 6.0 } else { a / 12.0 }));
            }
        }
    }
    let n = mesh.n_vertices();
    Csr::from_triplets(n, n, &trip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymEigen;
    use crate::mesh::{build_basis_topology, icosphere, tetrahedron, torus};

    #[test]
    fn gram_matrices_are_spd() {
        for mesh in [
            tetrahedron(),
            icosphere(1, 1.0).unwrap(),
            torus(1.0, 0.4, 8, 6).unwrap(),
        ] {
            let topo = build_basis_topology(&mesh);
            for g in [gram_rwg(&mesh, &topo), gram_pyramid(&mesh)] {
                let d = g.to_dense();
                let asym = (&d - d.transpose()).norm_max();
                assert!(asym <= 1e-15 * d.norm_max());
                assert!(SymEigen::new(&d).unwrap().values[0] > 0.0);
            }
        }
    }

    #[test]
    fn pyramid_row_sums_are_a_third_of_star_area() {
        let mesh = icosphere(1, 1.0).unwrap();
        let g = gram_pyramid(&mesh);
        let mut star = vec![0.0; mesh.n_vertices()];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            for &v in tri {
                star[v] += mesh.area(t);
            }
        }
        for (i, s) in star.iter().enumerate() {
            let row: f64 = g.row(i).map(|(_, v)| v).sum();
            assert!((row - s / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn patch_entry_is_inverse_area() {
        let v = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        let t = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]];
        let mesh = TriangleMesh::new(v, t, "corner").unwrap();
        let g = gram_patch(&mesh);
        let k = (0..4).find(|&k| (mesh.area(k) - 2.0).abs() < 1e-14).unwrap();
        assert!((g.get(k, k) - 0.5).abs() < 1e-15);
    }
}
