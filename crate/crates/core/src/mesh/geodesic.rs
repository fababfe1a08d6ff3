use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{cross, dist, sub, Point, TriMesh, NO_TRIANGLE};
use crate::error::{Error, Result};

const ON_BOUNDARY_TOL: f64 = 1e-12;

/// Even-odd point-in-polygon test; points on an edge count as inside.
pub fn point_in_polygon(polygon: &[Point], p: Point) -> bool {
    let n = polygon.len();
    let mut inside = false;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        if on_segment(a, b, p) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len = ab[0].hypot(ab[1]);
    if cross(ab, ap).abs() > ON_BOUNDARY_TOL * len.max(1.0) {
        return false;
    }
    let s = ap[0] * ab[0] + ap[1] * ab[1];
    s >= -ON_BOUNDARY_TOL && s <= len * len + ON_BOUNDARY_TOL
}

/// Whether the open segments `pq` and `ab` cross at a single interior point.
fn properly_cross(p: Point, q: Point, a: Point, b: Point) -> bool {
    let d1 = cross(sub(q, p), sub(a, p));
    let d2 = cross(sub(q, p), sub(b, p));
    let d3 = cross(sub(b, a), sub(p, a));
    let d4 = cross(sub(b, a), sub(q, a));
    let scale = 1e-13 * (dist(p, q) * dist(a, b)).max(f64::MIN_POSITIVE);
    ((d1 > scale && d2 < -scale) || (d1 < -scale && d2 > scale))
        && ((d3 > scale && d4 < -scale) || (d3 < -scale && d4 > scale))
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adjacency: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; adjacency.len()];
    let mut heap = BinaryHeap::new();
    d[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(du, u)) = heap.pop() {
        if du > d[u] {
            continue;
        }
        for &(v, w) in &adjacency[u] {
            let cand = du + w;
            if cand < d[v] {
                d[v] = cand;
                heap.push(Entry(cand, v));
            }
        }
    }
    d
}

/// Graph shortest paths over mesh edges plus, for each pair of adjacent
/// triangles forming a convex quadrilateral, the diagonal joining their
/// opposite vertices. Returns one row of length `num_vertices` per source.
pub fn geodesic_distances(mesh: &TriMesh, sources: &[usize]) -> Result<Vec<Vec<f64>>> {
    let n = mesh.num_vertices();
    if let Some(&bad) = sources.iter().find(|&&s| s >= n) {
        return Err(Error::validation(format!("source vertex {bad} out of range")));
    }
    let v = mesh.vertices();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut link = |a: usize, b: usize| {
        let w = dist(v[a], v[b]);
        adjacency[a].push((b, w));
        adjacency[b].push((a, w));
    };
    for (e, &[a, b]) in mesh.edges().iter().enumerate() {
        link(a, b);
        let [t0, t1] = mesh.edge_triangles()[e];
        if t1 == NO_TRIANGLE {
            continue;
        }
        let opposite = |t: usize| mesh.triangles()[t].into_iter().find(|&x| x != a && x != b).unwrap();
        let (c, d) = (opposite(t0), opposite(t1));
        // the diagonal stays inside the union iff it crosses the shared edge
        if properly_cross(v[c], v[d], v[a], v[b]) {
            link(c, d);
        }
    }
    let mut rows = Vec::with_capacity(sources.len());
    for &s in sources {
        let row = dijkstra(&adjacency, s);
        if row.iter().any(|d| !d.is_finite()) {
            return Err(Error::Mesh("mesh graph is disconnected".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Exact shortest paths inside a simple polygon.
///
/// A shortest path between two points of a simple polygon is a polyline whose
/// interior bends occur only at reflex vertices, so it suffices to know
/// mutual visibility and the visibility-graph distances between reflex vertices.
#[derive(Clone, Debug)]
pub struct Visibility {
    polygon: Vec<Point>,
    /// Boundary edges tested against chords; empty for convex polygons.
    blockers: Vec<[Point; 2]>,
    reflex: Vec<Point>,
    /// Row-major `reflex.len()²` visibility-graph distances.
    reflex_dist: Vec<f64>,
}

impl Visibility {
    pub fn new(polygon: &[Point]) -> Self {
        let mut polygon = polygon.to_vec();
        let twice_area: f64 = (0..polygon.len())
            .map(|i| cross(polygon[i], polygon[(i + 1) % polygon.len()]))
            .sum();
        if twice_area < 0.0 {
            polygon.reverse();
        }
        let n = polygon.len();
        let mut reflex_flags = vec![false; n];
        for i in 0..n {
            let (prev, cur, next) = (polygon[(i + n - 1) % n], polygon[i], polygon[(i + 1) % n]);
            let turn = cross(sub(cur, prev), sub(next, cur));
            reflex_flags[i] = turn < -1e-14 * dist(prev, cur) * dist(cur, next);
        }
        let reflex: Vec<Point> = (0..n).filter(|&i| reflex_flags[i]).map(|i| polygon[i]).collect();
        let blockers = if reflex.is_empty() {
            Vec::new()
        } else {
            (0..n).map(|i| [polygon[i], polygon[(i + 1) % n]]).collect()
        };
        let mut vis = Visibility { polygon, blockers, reflex, reflex_dist: Vec::new() };
        vis.reflex_dist = vis.reflex_graph();
        vis
    }

    pub fn is_convex(&self) -> bool {
        self.reflex.is_empty()
    }

    pub fn reflex_vertices(&self) -> &[Point] {
        &self.reflex
    }

    /// Whether the closed segment `pq` lies in the closed polygon.
    pub fn visible(&self, p: Point, q: Point) -> bool {
        if self.is_convex() {
            return true;
        }
        if self.blockers.iter().any(|&[a, b]| properly_cross(p, q, a, b)) {
            return false;
        }
        // a chord can leave through a vertex without properly crossing an edge
        [0.25, 0.5, 0.75].iter().all(|&s| {
            point_in_polygon(&self.polygon, [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])])
        })
    }

    fn reflex_graph(&self) -> Vec<f64> {
        let r = self.reflex.len();
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); r];
        for i in 0..r {
            for j in i + 1..r {
                if self.visible(self.reflex[i], self.reflex[j]) {
                    let w = dist(self.reflex[i], self.reflex[j]);
                    adjacency[i].push((j, w));
                    adjacency[j].push((i, w));
                }
            }
        }
        let mut out = Vec::with_capacity(r * r);
        for i in 0..r {
            out.extend(dijkstra(&adjacency, i));
        }
        out
    }

    /// Distances from `p` to every reflex vertex through the polygon.
    pub fn to_reflex(&self, p: Point) -> Vec<f64> {
        let r = self.reflex.len();
        let direct: Vec<f64> = self
            .reflex
            .iter()
            .map(|&c| if self.visible(p, c) { dist(p, c) } else { f64::INFINITY })
            .collect();
        (0..r)
            .map(|b| {
                (0..r)
                    .filter(|&a| direct[a].is_finite())
                    .map(|a| direct[a] + self.reflex_dist[a * r + b])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    /// Geodesic distance between two points of the polygon.
    pub fn distance(&self, p: Point, q: Point) -> f64 {
        if self.visible(p, q) {
            return dist(p, q);
        }
        let from_p = self.to_reflex(p);
        self.reflex
            .iter()
            .zip(&from_p)
            .filter(|(&c, _)| self.visible(c, q))
            .map(|(&c, &d)| d + dist(c, q))
            .fold(f64::INFINITY, f64::min)
    }
}

/// All-pairs in-polygon geodesic distances between mesh vertices, row-major `n²`.
pub fn polygon_geodesic_distances(mesh: &TriMesh) -> Result<Vec<f64>> {
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let mut out = vec![0.0; n * n];
    let vis = Visibility::new(&mesh.boundary_polygon());
    if vis.is_convex() {
        for i in 0..n {
            for j in i + 1..n {
                let d = dist(v[i], v[j]);
                out[i * n + j] = d;
                out[j * n + i] = d;
            }
        }
        return Ok(out);
    }
    let r = vis.reflex.len();
    let sees: Vec<Vec<bool>> =
        v.iter().map(|&p| vis.reflex.iter().map(|&c| vis.visible(p, c)).collect()).collect();
    for i in 0..n {
        let mut via: Option<Vec<f64>> = None;
        for j in i + 1..n {
            let d = if vis.visible(v[i], v[j]) {
                dist(v[i], v[j])
            } else {
                let from_i = via.get_or_insert_with(|| {
                    (0..r)
                        .map(|b| {
                            (0..r)
                                .filter(|&a| sees[i][a])
                                .map(|a| dist(v[i], vis.reflex[a]) + vis.reflex_dist[a * r + b])
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect()
                });
                (0..r)
                    .filter(|&b| sees[j][b])
                    .map(|b| from_i[b] + dist(vis.reflex[b], v[j]))
                    .fold(f64::INFINITY, f64::min)
            };
            if !d.is_finite() {
                return Err(Error::Mesh(format!("vertices {i} and {j} are not connected inside the domain")));
            }
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Ok(out)
}
