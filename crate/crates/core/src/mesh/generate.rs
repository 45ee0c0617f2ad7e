//! Procedural closed meshes used by tests, examples and default sweeps.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::{compute_stats, TriangleMesh};
use crate::error::{Error, Result};
use crate::geom::{self, Point};

pub fn tetrahedron() -> TriangleMesh {
    let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let t = vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]];
    TriangleMesh::new(v, t, "gen:tetrahedron").expect("valid tetrahedron")
}

pub fn octahedron() -> TriangleMesh {
    let v = vec![
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    let t = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    TriangleMesh::new(v, t, "gen:octahedron").expect("valid octahedron")
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron() -> TriangleMesh {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ];
    let v = raw.iter().map(|&q| geom::normalize(q)).collect();
    let t = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    TriangleMesh::new(v, t, "gen:icosahedron").expect("valid icosahedron")
}

/// Icosahedron subdivided `level` times with vertices projected to the sphere.
///
/// Counts: `N = 30·4^level`, `N_S = 20·4^level`, `N_L = 10·4^level + 2`.
pub fn icosphere(level: usize, radius: f64) -> Result<TriangleMesh> {
    let mut m = icosahedron();
    for _ in 0..level {
        m = m.subdivide(geom::normalize)?;
    }
    let mut m = m.scaled(radius)?;
    m.provenance = format!("gen:icosphere/{level}");
    Ok(m)
}

/// Structured torus: `n_major × n_minor` quads split along one diagonal.
pub fn torus(major: f64, minor: f64, n_major: usize, n_minor: usize) -> Result<TriangleMesh> {
    if n_major < 3 || n_minor < 3 || !(minor > 0.0 && major > minor) {
        return Err(Error::InvalidArgument(format!(
            "torus needs n_major, n_minor ≥ 3 and major > minor > 0 (got {n_major}, {n_minor}, {major}, {minor})"
        )));
    }
    let mut v = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        let u = 2.0 * PI * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let w = 2.0 * PI * j as f64 / n_minor as f64;
            let rho = major + minor * w.cos();
            v.push([rho * u.cos(), rho * u.sin(), minor * w.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % n_major) * n_minor + (j % n_minor);
    let mut t = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            t.push([a, b, c]);
            t.push([a, c, d]);
        }
    }
    TriangleMesh::new(v, t, format!("gen:torus/{n_major}x{n_minor}"))
}

/// Smoothly bumped icosphere, scaled to the requested bounding-sphere diameter.
pub fn deformed_sphere(level: usize, diameter: f64) -> Result<TriangleMesh> {
    let bump = |p: Point| -> Point {
        let u = geom::normalize(p);
        let r = 1.0 + 0.25 * u[2] * u[2] - 0.15 * u[0] * u[1] + 0.1 * u[0];
        geom::scale(u, r)
    };
    let base = icosphere(level, 1.0)?;
    let moved = TriangleMesh::new(
        base.vertices().iter().map(|&p| bump(p)).collect(),
        base.triangles().to_vec(),
        "",
    )?;
    let d = compute_stats(&moved).diameter;
    let mut m = moved.scaled(diameter / d)?;
    m.provenance = format!("gen:deformed-sphere/{level}");
    Ok(m)
}

/// Almond-like body with a sharp tip: the standard analytic almond profile,
/// `n_t` rings along the axis and `n_psi` points per ring, scaled to the
/// given bounding-box diagonal.
pub fn almond(n_t: usize, n_psi: usize, bbox_diagonal: f64) -> Result<TriangleMesh> {
    if n_t < 3 || n_psi < 3 {
        return Err(Error::InvalidArgument("almond needs n_t, n_psi ≥ 3".into()));
    }
    let (t0, t1) = (-0.416667, 0.58333);
    let section = |t: f64| -> (f64, f64) {
        if t < 0.0 {
            let s = (1.0 - (t / 0.416667).powi(2)).max(0.0).sqrt();
            (0.193333 * s, 0.064444 * s)
        } else {
            let s = ((1.0 - (t / 2.08335).powi(2)).max(0.0).sqrt() - 0.96).max(0.0);
            (4.83345 * s, 1.61115 * s)
        }
    };
    let mut v = vec![[t0, 0.0, 0.0]];
    for i in 1..n_t {
        // cosine spacing clusters rings toward both tips
        let t = t0 + (t1 - t0) * 0.5 * (1.0 - (PI * i as f64 / n_t as f64).cos());
        let (a, b) = section(t);
        for j in 0..n_psi {
            let psi = 2.0 * PI * j as f64 / n_psi as f64;
            v.push([t, a * psi.cos(), b * psi.sin()]);
        }
    }
    v.push([t1, 0.0, 0.0]);
    let last = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * n_psi + (j % n_psi);
    let mut tri = Vec::new();
    for j in 0..n_psi {
        tri.push([0, ring(1, j + 1), ring(1, j)]);
        tri.push([last, ring(n_t - 1, j), ring(n_t - 1, j + 1)]);
    }
    for i in 1..n_t - 1 {
        for j in 0..n_psi {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j + 1), ring(i + 1, j));
            tri.push([a, b, c]);
            tri.push([a, c, d]);
        }
    }
    let raw = TriangleMesh::new(v, tri, "")?;
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in raw.vertices() {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let mut m = raw.scaled(bbox_diagonal / geom::dist(lo, hi))?;
    m.provenance = format!("gen:almond/{n_t}x{n_psi}");
    Ok(m)
}

/// A named procedural mesh, written `gen:<name>[/<args>]`.
///
/// ```
/// use qhfilters::mesh::MeshGenerator;
/// let g: MeshGenerator = "gen:icosphere/1".parse().unwrap();
/// assert_eq!(g.build().unwrap().n_triangles(), 80);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub enum MeshGenerator {
    Tetrahedron,
    Octahedron,
    Icosahedron,
    /// Unit sphere, `level` subdivisions.
    Icosphere(usize),
    /// Major radius 1 m, minor radius 0.1 m.
    Torus(usize, usize),
    /// Maximum diameter 7.17 m.
    DeformedSphere(usize),
    /// Bounding-box diagonal 1.09 m.
    Almond(usize, usize),
}

impl MeshGenerator {
    pub fn build(&self) -> Result<TriangleMesh> {
        match *self {
            MeshGenerator::Tetrahedron => Ok(tetrahedron()),
            MeshGenerator::Octahedron => Ok(octahedron()),
            MeshGenerator::Icosahedron => Ok(icosahedron()),
            MeshGenerator::Icosphere(l) => icosphere(l, 1.0),
            MeshGenerator::Torus(a, b) => torus(1.0, 0.1, a, b),
            MeshGenerator::DeformedSphere(l) => deformed_sphere(l, 7.17),
            MeshGenerator::Almond(a, b) => almond(a, b, 1.09),
        }
    }
}

impl fmt::Display for MeshGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshGenerator::Tetrahedron => write!(f, "gen:tetrahedron"),
            MeshGenerator::Octahedron => write!(f, "gen:octahedron"),
            MeshGenerator::Icosahedron => write!(f, "gen:icosahedron"),
            MeshGenerator::Icosphere(l) => write!(f, "gen:icosphere/{l}"),
            MeshGenerator::Torus(a, b) => write!(f, "gen:torus/{a}x{b}"),
            MeshGenerator::DeformedSphere(l) => write!(f, "gen:deformed-sphere/{l}"),
            MeshGenerator::Almond(a, b) => write!(f, "gen:almond/{a}x{b}"),
        }
    }
}

impl FromStr for MeshGenerator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown mesh generator {s:?}"));
        let body = s.strip_prefix("gen:").ok_or_else(bad)?;
        let (name, args) = body.split_once('/').unwrap_or((body, ""));
        let one = || args.parse::<usize>().map_err(|_| bad());
        let two = || -> Result<(usize, usize)> {
            let (a, b) = args.split_once('x').ok_or_else(bad)?;
            Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
        };
        Ok(match name {
            "tetrahedron" => MeshGenerator::Tetrahedron,
            "octahedron" => MeshGenerator::Octahedron,
            "icosahedron" => MeshGenerator::Icosahedron,
            "icosphere" => MeshGenerator::Icosphere(one()?),
            "deformed-sphere" => MeshGenerator::DeformedSphere(one()?),
            "torus" => {
                let (a, b) = two()?;
                MeshGenerator::Torus(a, b)
            }
            "almond" => {
                let (a, b) = two()?;
                MeshGenerator::Almond(a, b)
            }
            _ => return Err(bad()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for level in 0..3 {
            let s = compute_stats(&icosphere(level, 1.0).unwrap());
            let f = 4usize.pow(level as u32);
            assert_eq!((s.n_edges, s.n_triangles, s.n_vertices), (30 * f, 20 * f, 10 * f + 2));
        }
    }

    #[test]
    fn generator_dimensions() {
        let ds = deformed_sphere(1, 7.17).unwrap();
        assert!((compute_stats(&ds).diameter - 7.17).abs() < 1e-12);
        let t = torus(1.0, 0.1, 40, 5).unwrap();
        let rmax = t.vertices().iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
        let rmin = t.vertices().iter().map(|p| p[0].hypot(p[1])).fold(9.0, f64::min);
        assert!((rmax - 1.1).abs() < 1e-12);
        assert!(rmin >= 0.9 - 1e-12);
        let a = almond(12, 10, 1.09).unwrap();
        let s = compute_stats(&a);
        assert_eq!(s.genus, 0);
    }

    #[test]
    fn generator_strings_roundtrip() {
        for s in [
            "gen:tetrahedron",
            "gen:icosphere/2",
            "gen:torus/40x5",
            "gen:almond/16x12",
            "gen:deformed-sphere/1",
        ] {
            let g: MeshGenerator = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
        }
        assert!("gen:cube".parse::<MeshGenerator>().is_err());
        assert!("icosphere/2".parse::<MeshGenerator>().is_err());
    }
}
