//! Small fixed-size vector helpers for points in R³.

pub type Point = [f64; 3];

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn normalize(a: Point) -> Point {
    scale(a, 1.0 / norm(a))
}

/// Barycentric combination `l0·a + l1·b + l2·c`.
#[inline]
pub fn bary(a: Point, b: Point, c: Point, l: [f64; 3]) -> Point {
    [
        l[0] * a[0] + l[1] * b[0] + l[2] * c[0],
        l[0] * a[1] + l[1] * b[1] + l[2] * c[1],
        l[0] * a[2] + l[1] * b[2] + l[2] * c[2],
    ]
}

/// Area vector `(b−a)×(c−a)/2`; its length is the triangle area.
#[inline]
pub fn area_vector(a: Point, b: Point, c: Point) -> Point {
    scale(cross(sub(b, a), sub(c, a)), 0.5)
}

#[inline]
pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    norm(area_vector(a, b, c))
}
