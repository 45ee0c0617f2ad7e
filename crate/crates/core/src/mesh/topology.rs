use serde::Serialize;

use super::TriangleMesh;
use crate::geom::{self, Point};

/// One RWG function: the edge shared by `c_plus` and `c_minus`.
///
/// `tail`/`head` are the edge endpoints in the order `c_plus` traverses them
/// (always `tail < head`); `v_plus`/`v_minus` are the free vertices of
/// `c_plus`/`c_minus` opposite the edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeRecord {
    pub tail: usize,
    pub head: usize,
    pub c_plus: usize,
    pub c_minus: usize,
    pub v_plus: usize,
    pub v_minus: usize,
    pub a_plus: f64,
    pub a_minus: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BasisTopology {
    pub edges: Vec<EdgeRecord>,
    pub n_triangles: usize,
    pub n_vertices: usize,
    /// `tri_edges[t]` lists `(edge, sign)` for the three edges of triangle `t`,
    /// `sign = +1` when `t` is the `c_plus` side.
    pub tri_edges: Vec<[(usize, f64); 3]>,
}

impl BasisTopology {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

fn free_vertex(tri: &[usize; 3], a: usize, b: usize) -> usize {
    *tri.iter()
        .find(|&&v| v != a && v != b)
        .expect("triangle has a free vertex")
}

/// Enumerates RWG functions in sorted-edge order.
///
/// The triangle that traverses the edge from its smaller to its larger vertex
/// index is `c_plus`; orientation consistency makes this unique.
pub fn build_basis_topology(mesh: &TriangleMesh) -> BasisTopology {
    let map = mesh.edge_map();
    let mut edges = Vec::with_capacity(map.len());
    let mut slots: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(3); mesh.n_triangles()];
    for (m, (&(a, b), inc)) in map.iter().enumerate() {
        let (plus, minus) = if inc[0].1 {
            (inc[0].0, inc[1].0)
        } else {
            (inc[1].0, inc[0].0)
        };
        let tp = mesh.triangles()[plus];
        let tm = mesh.triangles()[minus];
        let vs: &[Point] = mesh.vertices();
        edges.push(EdgeRecord {
            tail: a,
            head: b,
            c_plus: plus,
            c_minus: minus,
            v_plus: free_vertex(&tp, a, b),
            v_minus: free_vertex(&tm, a, b),
            a_plus: mesh.area(plus),
            a_minus: mesh.area(minus),
            length: geom::dist(vs[a], vs[b]),
        });
        slots[plus].push((m, 1.0));
        slots[minus].push((m, -1.0));
    }
    let tri_edges = slots.into_iter().map(|s| [s[0], s[1], s[2]]).collect();
    BasisTopology {
        edges,
        n_triangles: mesh.n_triangles(),
        n_vertices: mesh.n_vertices(),
        tri_edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, tetrahedron};

    #[test]
    fn every_triangle_in_three_records() {
        for mesh in [tetrahedron(), icosphere(1, 1.0).unwrap()] {
            let topo = build_basis_topology(&mesh);
            let mut count = vec![0; mesh.n_triangles()];
            for e in &topo.edges {
                count[e.c_plus] += 1;
                count[e.c_minus] += 1;
                assert!(e.a_plus > 0.0 && e.a_minus > 0.0);
                assert_ne!(e.c_plus, e.c_minus);
            }
            assert!(count.iter().all(|&c| c == 3));
        }
    }

    #[test]
    fn plus_triangle_traverses_tail_to_head() {
        let mesh = icosphere(1, 1.0).unwrap();
        let topo = build_basis_topology(&mesh);
        assert_eq!(topo.n_edges(), 120);
        for e in &topo.edges {
            let t = mesh.triangles()[e.c_plus];
            assert!((0..3).any(|k| t[k] == e.tail && t[(k + 1) % 3] == e.head));
            let t = mesh.triangles()[e.c_minus];
            assert!((0..3).any(|k| t[k] == e.head && t[(k + 1) % 3] == e.tail));
        }
    }
}
