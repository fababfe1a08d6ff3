//! Triangulations of flat planar domains with analytic boundaries.
//!
//! A [`TriMesh`] carries everything the P1 finite-element machinery needs:
//! lumped vertex masses, the cotangent stiffness matrix (the zero-flux
//! Neumann Laplacian), constant per-triangle basis gradients and a content
//! checksum used to tie densities, cost tables and reports to one mesh.

mod build;
mod curvature;
mod domain;
mod geodesic;

use std::collections::HashMap;

use serde::Serialize;
use sha2::{Digest, Sha256};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub use build::build_mesh;
pub use curvature::{boundary_curvature, CurvatureBound};
pub use domain::{DomainSpec, Shape};
pub use geodesic::{geodesic_distances, polygon_geodesic_distances, Visibility};

pub type Point = [f64; 2];

/// An immutable triangulated domain.
#[derive(Debug)]
pub struct TriMesh {
    spec: Option<DomainSpec>,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_loop: Vec<usize>,
    lumped_mass: Vec<f64>,
    stiffness: CsMat<f64>,
    area_total: f64,
    tri_area: Vec<f64>,
    tri_grad: Vec<[Point; 3]>,
    edges: Vec<[usize; 2]>,
    edge_triangles: Vec<[usize; 2]>,
    m_matrix: bool,
    checksum: String,
}

/// Marker for an edge with a single adjacent triangle.
pub(crate) const NO_TRIANGLE: usize = usize::MAX;

impl TriMesh {
    /// Assembles a mesh from raw connectivity. Triangles are reoriented
    /// counter-clockwise; zero-area triangles are rejected.
    pub fn from_parts(
        spec: Option<DomainSpec>,
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        boundary_loop: Vec<usize>,
    ) -> Result<Self> {
        let n = vertices.len();
        if n < 3 || triangles.is_empty() {
            return Err(Error::Mesh("mesh needs at least one triangle".into()));
        }
        let mut tri_area = Vec::with_capacity(triangles.len());
        let mut tri_grad = Vec::with_capacity(triangles.len());
        let mut lumped_mass = vec![0.0; n];
        let mut stiffness = TriMat::with_capacity((n, n), 12 * triangles.len());
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::Mesh(format!("triangle {t} references a missing vertex")));
            }
            let mut twice = signed_double_area(&vertices, *tri);
            if twice < 0.0 {
                tri.swap(1, 2);
                twice = -twice;
            }
            if !(twice > 0.0) {
                return Err(Error::Mesh(format!("triangle {t} is degenerate")));
            }
            let area = 0.5 * twice;
            tri_area.push(area);
            let p = tri.map(|v| vertices[v]);
            let mut grads = [[0.0; 2]; 3];
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                grads[i] = [(p[j][1] - p[k][1]) / twice, (p[k][0] - p[j][0]) / twice];
            }
            tri_grad.push(grads);
            for &v in tri.iter() {
                lumped_mass[v] += area / 3.0;
            }
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                let e1 = sub(p[i], p[k]);
                let e2 = sub(p[j], p[k]);
                let w = 0.5 * dot(e1, e2) / twice;
                let (vi, vj) = (tri[i], tri[j]);
                stiffness.add_triplet(vi, vi, w);
                stiffness.add_triplet(vj, vj, w);
                stiffness.add_triplet(vi, vj, -w);
                stiffness.add_triplet(vj, vi, -w);
            }
        }
        let stiffness: CsMat<f64> = stiffness.to_csr();
        let m_matrix = stiffness
            .iter()
            .all(|(&value, (row, col))| row == col || value <= 1e-14 * stiffness_scale(&stiffness, row));
        let area_total = tri_area.iter().sum();

        let mut edge_map: HashMap<[usize; 2], [usize; 2]> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = [a.min(b), a.max(b)];
                let slot = edge_map.entry(key).or_insert([NO_TRIANGLE, NO_TRIANGLE]);
                if slot[0] == NO_TRIANGLE {
                    slot[0] = t;
                } else if slot[1] == NO_TRIANGLE {
                    slot[1] = t;
                } else {
                    return Err(Error::Mesh(format!("edge {key:?} shared by more than two triangles")));
                }
            }
        }
        let mut edges: Vec<([usize; 2], [usize; 2])> = edge_map.into_iter().collect();
        edges.sort_unstable();
        let (edges, edge_triangles) = edges.into_iter().unzip();

        let checksum = checksum_of(&vertices, &triangles);
        Ok(TriMesh {
            spec,
            vertices,
            triangles,
            boundary_loop,
            lumped_mass,
            stiffness,
            area_total,
            tri_area,
            tri_grad,
            edges,
            edge_triangles,
            m_matrix,
            checksum,
        })
    }

    pub fn spec(&self) -> Option<&DomainSpec> {
        self.spec.as_ref()
    }
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    pub fn boundary_loop(&self) -> &[usize] {
        &self.boundary_loop
    }
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }
    pub fn stiffness(&self) -> &CsMat<f64> {
        &self.stiffness
    }
    pub fn area_total(&self) -> f64 {
        self.area_total
    }
    pub fn triangle_areas(&self) -> &[f64] {
        &self.tri_area
    }
    /// Gradients of the three hat functions of each triangle.
    pub fn basis_gradients(&self) -> &[[Point; 3]] {
        &self.tri_grad
    }
    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }
    pub(crate) fn edge_triangles(&self) -> &[[usize; 2]] {
        &self.edge_triangles
    }
    /// True when every off-diagonal stiffness entry is nonpositive.
    pub fn is_m_matrix(&self) -> bool {
        self.m_matrix
    }
    pub fn checksum(&self) -> &str {
        &self.checksum
    }
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Constant gradient of the P1 interpolant of `values` on triangle `t`.
    #[inline]
    pub fn gradient(&self, t: usize, values: &[f64]) -> Point {
        let tri = &self.triangles[t];
        let g = &self.tri_grad[t];
        let (a, b, c) = (values[tri[0]], values[tri[1]], values[tri[2]]);
        [a * g[0][0] + b * g[1][0] + c * g[2][0], a * g[0][1] + b * g[1][1] + c * g[2][1]]
    }

    /// Per-triangle P1 gradients of a nodal field.
    pub fn gradients(&self, values: &[f64]) -> Vec<Point> {
        (0..self.triangles.len()).map(|t| self.gradient(t, values)).collect()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Longest edge over the whole mesh.
    pub fn max_edge_length(&self) -> f64 {
        self.edges.iter().map(|&[a, b]| dist(self.vertices[a], self.vertices[b])).fold(0.0, f64::max)
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for tri in &self.triangles {
            let p = tri.map(|v| self.vertices[v]);
            for k in 0..3 {
                let e1 = sub(p[(k + 1) % 3], p[k]);
                let e2 = sub(p[(k + 2) % 3], p[k]);
                let angle = cross(e1, e2).abs().atan2(dot(e1, e2));
                min = min.min(angle);
            }
        }
        min
    }

    /// `y = A x` with the stiffness matrix.
    pub fn apply_stiffness(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (row, vec) in self.stiffness.outer_iterator().enumerate() {
            y[row] = vec.iter().map(|(col, &a)| a * x[col]).sum();
        }
        y
    }

    /// Whether the triangulated region contains `p` (boundary inclusive).
    pub fn contains_point(&self, p: Point) -> bool {
        geodesic::point_in_polygon(&self.boundary_polygon(), p)
    }

    pub(crate) fn boundary_polygon(&self) -> Vec<Point> {
        self.boundary_loop.iter().map(|&v| self.vertices[v]).collect()
    }

    /// JSON export consumed by the plotting component.
    pub fn export(&self) -> MeshExport<'_> {
        MeshExport {
            checksum: &self.checksum,
            spec: self.spec.as_ref(),
            vertices: &self.vertices,
            triangles: &self.triangles,
            boundary_loop: &self.boundary_loop,
            lumped_mass: &self.lumped_mass,
            area_total: self.area_total,
            m_matrix: self.m_matrix,
        }
    }
}

#[derive(Serialize)]
pub struct MeshExport<'a> {
    pub checksum: &'a str,
    pub spec: Option<&'a DomainSpec>,
    pub vertices: &'a [Point],
    pub triangles: &'a [[usize; 3]],
    pub boundary_loop: &'a [usize],
    pub lumped_mass: &'a [f64],
    pub area_total: f64,
    pub m_matrix: bool,
}

fn stiffness_scale(a: &CsMat<f64>, row: usize) -> f64 {
    a.outer_view(row).and_then(|r| r.get(row).copied()).unwrap_or(1.0).abs()
}

fn checksum_of(vertices: &[Point], triangles: &[[usize; 3]]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((vertices.len() as u64).to_le_bytes());
    for p in vertices {
        hasher.update(p[0].to_le_bytes());
        hasher.update(p[1].to_le_bytes());
    }
    hasher.update((triangles.len() as u64).to_le_bytes());
    for t in triangles {
        for &v in t {
            hasher.update((v as u64).to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

pub(crate) fn signed_double_area(vertices: &[Point], tri: [usize; 3]) -> f64 {
    let [a, b, c] = tri.map(|v| vertices[v]);
    cross(sub(b, a), sub(c, a))
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}
#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}
#[inline]
pub(crate) fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}
#[inline]
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
