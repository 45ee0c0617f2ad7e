//! Closed, consistently oriented triangle surface meshes.

mod generate;
mod gram;
mod io;
mod topology;

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

pub use generate::{almond, deformed_sphere, icosahedron, icosphere, octahedron, tetrahedron, torus, MeshGenerator};
pub(crate) use gram::local_rwg;
pub use gram::{gram_patch, gram_pyramid, gram_rwg, rwg_eval};
pub use io::{load_mesh, parse_msh2, parse_obj, write_obj, MeshFormat};
pub use topology::{build_basis_topology, BasisTopology, EdgeRecord};

use crate::error::{Error, Result};
use crate::geom::{self, Point};

/// A closed, orientable 2-manifold made of flat triangles.
///
/// Construction validates the mesh: every edge has exactly two incident
/// triangles, areas are strictly positive, and orientations are made
/// globally consistent (and outward) by triangle flips.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    provenance: String,
}

/// Counts and scales of a mesh.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MeshStats {
    /// Number of edges (RWG functions).
    pub n_edges: usize,
    /// Number of triangles.
    pub n_triangles: usize,
    /// Number of vertices.
    pub n_vertices: usize,
    pub components: usize,
    pub genus: usize,
    pub h_avg: f64,
    pub diameter: f64,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, provenance: impl Into<String>) -> Result<Self> {
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            provenance: provenance.into(),
        };
        mesh.validate_indices()?;
        mesh.validate_areas()?;
        mesh.check_manifold()?;
        mesh.orient()?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        geom::triangle_area(a, b, c)
    }

    /// Unit normal following the vertex order.
    pub fn normal(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        geom::normalize(geom::area_vector(a, b, c))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        geom::scale(geom::add(geom::add(a, b), c), 1.0 / 3.0)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    /// Undirected edges `(min, max)` in sorted order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.edge_map().into_keys().collect()
    }

    /// Edge → list of `(triangle, traverses_min_to_max)`.
    pub(crate) fn edge_map(&self) -> BTreeMap<(usize, usize), Vec<(usize, bool)>> {
        let mut map: BTreeMap<(usize, usize), Vec<(usize, bool)>> = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                map.entry(key).or_default().push((t, a < b));
            }
        }
        map
    }

    /// Returns a copy with vertices renumbered by `perm` (new index of old vertex `i` is `perm[i]`).
    pub fn permute_vertices(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_vertices() {
            return Err(Error::InvalidArgument("permutation length".into()));
        }
        let mut vertices = vec![[0.0; 3]; self.n_vertices()];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = self.vertices[old];
        }
        let triangles = self
            .triangles
            .iter()
            .map(|t| [perm[t[0]], perm[t[1]], perm[t[2]]])
            .collect();
        TriangleMesh::new(vertices, triangles, self.provenance.clone())
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        TriangleMesh::new(
            self.vertices.iter().map(|&p| geom::scale(p, s)).collect(),
            self.triangles.clone(),
            self.provenance.clone(),
        )
    }

    /// One level of midpoint subdivision; `project` maps each new vertex.
    pub fn subdivide(&self, project: impl Fn(Point) -> Point) -> Result<Self> {
        let mut vertices = self.vertices.clone();
        let mut mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                let p = geom::scale(geom::add(vertices[a], vertices[b]), 0.5);
                vertices.push(project(p));
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.n_triangles());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        TriangleMesh::new(vertices, triangles, format!("{}+subdiv", self.provenance))
    }

    fn validate_indices(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle(t, 0.0));
            }
        }
        Ok(())
    }

    fn validate_areas(&self) -> Result<()> {
        let scale = self
            .vertices
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for t in 0..self.n_triangles() {
            let a = self.area(t);
            if !(a > 1e-14 * scale * scale) {
                return Err(Error::DegenerateTriangle(t, a));
            }
        }
        Ok(())
    }

    fn check_manifold(&self) -> Result<()> {
        for (&(a, b), inc) in &self.edge_map() {
            match inc.len() {
                2 => {}
                1 => return Err(Error::OpenSurface(a, b)),
                n => return Err(Error::NonManifold(a, b, n)),
            }
        }
        Ok(())
    }

    /// Breadth-first consistent orientation, then outward orientation per
    /// connected component (positive enclosed signed volume).
    fn orient(&mut self) -> Result<()> {
        let map = self.edge_map();
        let nt = self.n_triangles();
        let mut neighbors: Vec<Vec<(usize, (usize, usize))>> = vec![Vec::new(); nt];
        for (&key, inc) in &map {
            let (t0, t1) = (inc[0].0, inc[1].0);
            neighbors[t0].push((t1, key));
            neighbors[t1].push((t0, key));
        }
        let traverses =
            |tri: &[usize; 3], a: usize, b: usize| -> bool { (0..3).any(|k| tri[k] == a && tri[(k + 1) % 3] == b) };
        let mut component = vec![usize::MAX; nt];
        let mut n_comp = 0;
        for seed in 0..nt {
            if component[seed] != usize::MAX {
                continue;
            }
            component[seed] = n_comp;
            let mut queue = VecDeque::from([seed]);
            while let Some(t) = queue.pop_front() {
                for &(nb, (a, b)) in &neighbors[t] {
                    let t_ab = traverses(&self.triangles[t], a, b);
                    let nb_ab = traverses(&self.triangles[nb], a, b);
                    let consistent = t_ab != nb_ab;
                    if component[nb] == usize::MAX {
                        if !consistent {
                            self.triangles[nb].swap(1, 2);
                        }
                        component[nb] = n_comp;
                        queue.push_back(nb);
                    } else if !consistent {
                        return Err(Error::Orientation);
                    }
                }
            }
            n_comp += 1;
        }
        for c in 0..n_comp {
            let vol: f64 = (0..nt)
                .filter(|&t| component[t] == c)
                .map(|t| {
                    let [a, b, p] = self.corners(t);
                    geom::dot(a, geom::cross(b, p)) / 6.0
                })
                .sum();
            if vol < 0.0 {
                for t in 0..nt {
                    if component[t] == c {
                        self.triangles[t].swap(1, 2);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_vertices()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (find(&mut parent, tri[k]), find(&mut parent, tri[(k + 1) % 3]));
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut used = vec![false; self.n_vertices()];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        (0..self.n_vertices())
            .filter(|&v| used[v] && find(&mut parent, v) == v)
            .count()
    }
}

/// Resolves a mesh reference: a `gen:` generator string or a file path.
pub fn resolve_mesh(spec: &str) -> Result<TriangleMesh> {
    if spec.starts_with("gen:") {
        spec.parse::<MeshGenerator>()?.build()
    } else {
        load_mesh(spec, None)
    }
}

/// Counts, genus and length scales of a mesh.
pub fn compute_stats(mesh: &TriangleMesh) -> MeshStats {
    let edges = mesh.edges();
    let n_edges = edges.len();
    let n_triangles = mesh.n_triangles();
    let n_vertices = mesh.n_vertices();
    let components = mesh.connected_components();
    let euler = n_vertices as i64 - n_edges as i64 + n_triangles as i64;
    let genus = ((2 * components as i64 - euler) / 2).max(0) as usize;
    let h_avg = edges
        .iter()
        .map(|&(a, b)| geom::dist(mesh.vertices[a], mesh.vertices[b]))
        .sum::<f64>()
        / n_edges as f64;
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in &mesh.vertices {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let center = geom::scale(geom::add(lo, hi), 0.5);
    let radius = mesh.vertices.iter().map(|&p| geom::dist(p, center)).fold(0.0, f64::max);
    MeshStats {
        n_edges,
        n_triangles,
        n_vertices,
        components,
        genus,
        h_avg,
        diameter: 2.0 * radius,
    }
}
