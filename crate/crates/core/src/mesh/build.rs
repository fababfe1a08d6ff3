use std::f64::consts::PI;

use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use super::domain::{DomainSpec, Shape};
use super::geodesic::point_in_polygon;
use super::{dist, Point, TriMesh};
use crate::error::{Error, Result};

/// Lattice points closer than this multiple of `h` to the boundary polyline are dropped.
const BOUNDARY_CLEARANCE: f64 = 0.5;
/// Laplacian smoothing sweeps applied to interior vertices of unstructured meshes.
const SMOOTHING_SWEEPS: usize = 4;

/// Triangulates the domain described by `spec` with target edge length `spec.h`.
pub fn build_mesh(spec: &DomainSpec) -> Result<TriMesh> {
    spec.validate()?;
    let mesh = match spec.shape {
        Shape::Rectangle { width, height } => rectangle_mesh(spec, width, height)?,
        Shape::PolarStar { .. } => polar_star_mesh(spec)?,
    };
    if !mesh.is_m_matrix() {
        log::warn!(
            "mesh {} has positive off-diagonal stiffness entries; positivity is not guaranteed",
            mesh.checksum()
        );
    }
    Ok(mesh)
}

/// Structured right-triangle grid with one consistent diagonal per cell.
/// All diagonals carry zero cotangent weight, so the stiffness is the
/// five-point Laplacian and the M-matrix property holds exactly.
fn rectangle_mesh(spec: &DomainSpec, width: f64, height: f64) -> Result<TriMesh> {
    let nx = (width / spec.h).ceil() as usize;
    let ny = (height / spec.h).ceil() as usize;
    let (dx, dy) = (width / nx as f64, height / ny as f64);
    let index = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // exact endpoints so that boundary vertices sit on the sides
            let x = if i == nx { width } else { i as f64 * dx };
            let y = if j == ny { height } else { j as f64 * dy };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (index(i, j), index(i + 1, j), index(i + 1, j + 1), index(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let mut boundary = Vec::with_capacity(2 * (nx + ny));
    boundary.extend((0..nx).map(|i| index(i, 0)));
    boundary.extend((0..ny).map(|j| index(nx, j)));
    boundary.extend((1..=nx).rev().map(|i| index(i, ny)));
    boundary.extend((1..=ny).rev().map(|j| index(0, j)));
    TriMesh::from_parts(Some(spec.clone()), vertices, triangles, boundary)
}

fn polar_star_mesh(spec: &DomainSpec) -> Result<TriMesh> {
    let h = spec.h;
    let boundary = polar_boundary_points(spec, h);
    let nb = boundary.len();

    let [xmin, ymin, xmax, ymax] = spec.bounding_box();
    let row = h * 3f64.sqrt() / 2.0;
    let mut interior = Vec::new();
    let mut j = 0usize;
    let mut y = ymin + 0.5 * row;
    while y < ymax {
        let offset = if j % 2 == 1 { 0.5 * h } else { 0.0 };
        let mut x = xmin + offset;
        while x < xmax {
            let p = [x, y];
            if point_in_polygon(&boundary, p) && distance_to_polyline(&boundary, p) >= BOUNDARY_CLEARANCE * h {
                interior.push(p);
            }
            x += h;
        }
        y += row;
        j += 1;
    }

    let (mut vertices, mut triangles) = constrained_triangulation(&boundary, &interior)?;
    // Smooth interior vertices towards the centroid of their neighbours and
    // retriangulate; this evens out the seam between the lattice and the boundary.
    for _ in 0..SMOOTHING_SWEEPS {
        let n = vertices.len();
        let mut sum = vec![[0.0; 2]; n];
        let mut count = vec![0usize; n];
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                for (u, v) in [(a, b), (b, a)] {
                    sum[u][0] += vertices[v][0];
                    sum[u][1] += vertices[v][1];
                    count[u] += 1;
                }
            }
        }
        let moved: Vec<Point> = (nb..n)
            .map(|v| {
                let c = count[v].max(1) as f64;
                let target = [sum[v][0] / c, sum[v][1] / c];
                if point_in_polygon(&boundary, target)
                    && distance_to_polyline(&boundary, target) >= 0.25 * h
                {
                    target
                } else {
                    vertices[v]
                }
            })
            .collect();
        let (v2, t2) = constrained_triangulation(&boundary, &moved)?;
        vertices = v2;
        triangles = t2;
    }
    let boundary_loop: Vec<usize> = (0..nb).collect();
    TriMesh::from_parts(Some(spec.clone()), vertices, triangles, boundary_loop)
}

/// Boundary vertices of a polar star at (nearly) uniform arc-length spacing not exceeding `h`.
fn polar_boundary_points(spec: &DomainSpec, h: f64) -> Vec<Point> {
    const FINE: usize = 1 << 16;
    let speed = |theta: f64| {
        let [r, dr, _] = spec.radius(theta);
        r.hypot(dr)
    };
    let dtheta = 2.0 * PI / FINE as f64;
    let mut cumulative = Vec::with_capacity(FINE + 1);
    cumulative.push(0.0);
    let mut prev = speed(0.0);
    for i in 1..=FINE {
        let cur = speed(i as f64 * dtheta);
        let last = *cumulative.last().unwrap();
        cumulative.push(last + 0.5 * (prev + cur) * dtheta);
        prev = cur;
    }
    let length = cumulative[FINE];
    // chords are shorter than arcs, so arc spacing below h keeps every edge below h
    let nb = (length / h).ceil() as usize;
    let mut points = Vec::with_capacity(nb);
    let mut cursor = 0;
    for i in 0..nb {
        let target = length * i as f64 / nb as f64;
        while cumulative[cursor + 1] < target {
            cursor += 1;
        }
        let frac = (target - cumulative[cursor]) / (cumulative[cursor + 1] - cumulative[cursor]);
        let theta = (cursor as f64 + frac) * dtheta;
        let r = spec.radius(theta)[0];
        points.push([r * theta.cos(), r * theta.sin()]);
    }
    points
}

fn distance_to_polyline(polygon: &[Point], p: Point) -> f64 {
    let n = polygon.len();
    (0..n).map(|i| segment_distance(polygon[i], polygon[(i + 1) % n], p)).fold(f64::INFINITY, f64::min)
}

fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

/// Constrained Delaunay triangulation of the closed boundary polygon plus
/// interior points; triangles outside the polygon are discarded.
fn constrained_triangulation(boundary: &[Point], interior: &[Point]) -> Result<(Vec<Point>, Vec<[usize; 3]>)> {
    let nb = boundary.len();
    let points: Vec<Point2<f64>> =
        boundary.iter().chain(interior.iter()).map(|p| Point2::new(p[0], p[1])).collect();
    let edges: Vec<[usize; 2]> = (0..nb).map(|i| [i, (i + 1) % nb]).collect();
    let total = points.len();
    let cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(points, edges)
        .map_err(|e| Error::Mesh(format!("triangulator failed: {e:?}")))?;
    if cdt.num_vertices() != total {
        return Err(Error::Mesh(format!(
            "triangulator merged {} duplicate vertices",
            total - cdt.num_vertices()
        )));
    }
    let vertices: Vec<Point> = cdt.vertices().map(|v| [v.position().x, v.position().y]).collect();
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let tri = face.vertices().map(|v| v.fix().index());
        let c = [
            (vertices[tri[0]][0] + vertices[tri[1]][0] + vertices[tri[2]][0]) / 3.0,
            (vertices[tri[0]][1] + vertices[tri[1]][1] + vertices[tri[2]][1]) / 3.0,
        ];
        if point_in_polygon(boundary, c) {
            triangles.push(tri);
        }
    }
    if triangles.is_empty() {
        return Err(Error::Mesh("triangulation produced no interior triangles".into()));
    }
    Ok((vertices, triangles))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_area_and_invariants() {
        let mesh = build_mesh(&DomainSpec::unit_square(0.05)).unwrap();
        assert!((mesh.area_total() - 1.0).abs() < 1e-9);
        let mass: f64 = mesh.lumped_mass().iter().sum();
        assert!((mass - mesh.area_total()).abs() <= 1e-12 * mesh.area_total());
        assert!(mesh.is_m_matrix());
        assert!(mesh.max_edge_length() <= 1.5 * 0.05);
        assert_eq!(mesh.boundary_loop().len(), 80);
    }

    #[test]
    fn rejects_oversized_h() {
        assert!(matches!(build_mesh(&DomainSpec::unit_square(2.0)), Err(Error::Validation(_))));
        assert!(matches!(build_mesh(&DomainSpec::polar_star(1.0, 1.2, 3, 0.1)), Err(Error::Validation(_))));
    }

    #[test]
    fn star_boundary_on_curve() {
        let spec = DomainSpec::polar_star(1.0, 0.5, 3, 0.05);
        let mesh = build_mesh(&spec).unwrap();
        for &v in mesh.boundary_loop() {
            let p = mesh.vertices()[v];
            let theta = p[1].atan2(p[0]);
            let r = spec.radius(theta)[0];
            assert!((p[0].hypot(p[1]) - r).abs() < 1e-10);
        }
        assert!(mesh.max_edge_length() <= 1.5 * spec.h, "max edge {}", mesh.max_edge_length());
        for t in 0..mesh.num_triangles() {
            assert!(mesh.triangle_areas()[t] > 0.0);
        }
    }
}
