use std::f64::consts::PI;

use fisherflow::mesh::{boundary_curvature, build_mesh, geodesic_distances, polygon_geodesic_distances};
use fisherflow::DomainSpec;
use proptest::prelude::*;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// `½∫ r(θ)² dθ` by the composite midpoint rule, independent of the library's closed form.
fn polar_area(r0: f64, a: f64, k: u32) -> f64 {
    let n = 200_000;
    let d = 2.0 * PI / n as f64;
    (0..n).map(|i| (r0 + a * (k as f64 * (i as f64 + 0.5) * d).cos()).powi(2)).sum::<f64>() * 0.5 * d
}

#[test]
fn mesh_areas_match_exact_areas() {
    let square = build_mesh(&DomainSpec::unit_square(0.05)).unwrap();
    assert!((square.area_total() - 1.0).abs() < 1e-12);
    assert!((square.lumped_mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let exact = polar_area(1.0, 0.5, 3);
    let mut errors = Vec::new();
    for h in [0.04, 0.02] {
        let star = build_mesh(&DomainSpec::polar_star(1.0, 0.5, 3, h)).unwrap();
        errors.push((star.area_total() - exact).abs() / exact);
    }
    assert!(errors[1] < 1e-3, "{errors:?}");
    assert!(errors[1] < 0.5 * errors[0], "{errors:?}");
}

#[test]
fn meshes_are_m_matrices_with_bounded_edges() {
    for spec in [DomainSpec::unit_square(0.02), DomainSpec::polar_star(1.0, 0.5, 3, 0.02), DomainSpec::rectangle(2.0, 1.0, 0.05)] {
        let mesh = build_mesh(&spec).unwrap();
        assert!(mesh.is_m_matrix(), "{spec:?}");
        assert!(mesh.max_edge_length() <= 1.5 * spec.h, "{spec:?}: {}", mesh.max_edge_length());
        assert!(mesh.min_angle() > 20f64.to_radians());
        let ones = vec![1.0; mesh.num_vertices()];
        assert!(mesh.apply_stiffness(&ones).iter().all(|x| x.abs() < 1e-9));
    }
}

#[test]
fn star_curvature_oracle() {
    // r = 1 + cos(3θ)/2 at θ = π/3: r = 1/2, r' = 0, r'' = 9/2, so κ = (r² - r r'')/r³ = -16
    let bound = boundary_curvature(&DomainSpec::polar_star(1.0, 0.5, 3, 0.02), 4096).unwrap();
    assert!((bound.S - 16.0).abs() < 1e-4, "{}", bound.S);
    assert!((bound.theta_at_min - PI / 3.0).abs() < 1e-3);
    assert_eq!(bound.K, 0.0);
    let circle = boundary_curvature(&DomainSpec::polar_star(1.0, 0.0, 3, 0.05), 4096).unwrap();
    assert_eq!(circle.S, 0.0);
    assert!((circle.kappa_min - 1.0).abs() < 1e-9);
}

#[test]
fn geodesics_dominate_euclidean_distance() {
    let mesh = build_mesh(&DomainSpec::polar_star(1.0, 0.5, 3, 0.05)).unwrap();
    let v = mesh.vertices();
    let sources: Vec<usize> = (0..mesh.num_vertices()).step_by(97).collect();
    let rows = geodesic_distances(&mesh, &sources).unwrap();
    for (row, &s) in rows.iter().zip(&sources) {
        assert_eq!(row[s], 0.0);
        for (j, &d) in row.iter().enumerate() {
            assert!(d >= dist(v[s], v[j]) - 1e-12);
        }
    }
}

#[test]
fn square_graph_geodesics_are_nearly_straight() {
    // edge-plus-diagonal paths are off by at most the angular gap of the stencil
    let mesh = build_mesh(&DomainSpec::unit_square(0.05)).unwrap();
    let v = mesh.vertices();
    let sources = [0, mesh.num_vertices() / 2];
    let rows = geodesic_distances(&mesh, &sources).unwrap();
    for (row, s) in rows.iter().zip(sources) {
        for (j, &d) in row.iter().enumerate() {
            let e = dist(v[s], v[j]);
            assert!(d <= 1.09 * e + 1e-12, "{d} vs {e}");
        }
    }
}

#[test]
fn polygon_geodesics_bracket_graph_geodesics() {
    let mesh = build_mesh(&DomainSpec::polar_star(1.0, 0.5, 3, 0.1)).unwrap();
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let exact = polygon_geodesic_distances(&mesh).unwrap();
    let sources: Vec<usize> = (0..n).step_by(23).collect();
    let graph = geodesic_distances(&mesh, &sources).unwrap();
    let mut bent = 0;
    for (row, &s) in graph.iter().zip(&sources) {
        for j in 0..n {
            let (d, e) = (exact[s * n + j], dist(v[s], v[j]));
            assert!(d >= e - 1e-12 && d <= row[j] + 1e-12, "{e} <= {d} <= {}", row[j]);
            assert!((d - exact[j * n + s]).abs() < 1e-12);
            bent += usize::from(d > e + 1e-9);
        }
    }
    // some pairs see each other only around an indentation
    assert!(bent > 0);
}

#[test]
fn checksums_identify_meshes() {
    let a = build_mesh(&DomainSpec::unit_square(0.05)).unwrap();
    let b = build_mesh(&DomainSpec::unit_square(0.05)).unwrap();
    let c = build_mesh(&DomainSpec::unit_square(0.04)).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), c.checksum());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convexity_defect_grows_with_amplitude(a in 0.0f64..0.45, da in 0.005f64..0.04) {
        let lo = boundary_curvature(&DomainSpec::polar_star(1.0, a, 3, 0.05), 2048).unwrap();
        let hi = boundary_curvature(&DomainSpec::polar_star(1.0, a + da, 3, 0.05), 2048).unwrap();
        prop_assert!(hi.S >= lo.S);
        prop_assert!(lo.S >= 0.0);
    }

    #[test]
    fn rectangles_are_convex(w in 0.5f64..3.0, ht in 0.5f64..3.0) {
        prop_assert_eq!(boundary_curvature(&DomainSpec::rectangle(w, ht, 0.1), 4096).unwrap().S, 0.0);
    }
}
