mod support;

use std::f64::consts::PI;
use std::sync::Arc;

use fisherflow::functionals::{energy_m, entropy, fisher, fisher_log, fisher_m, kinetic_action, log_derivative};
use fisherflow::mesh::build_mesh;
use fisherflow::{Density, DomainSpec, TriMesh, VectorField};
use proptest::prelude::*;

fn rho(x: f64, y: f64) -> f64 {
    1.0 + 0.5 * (PI * x).cos() * (PI * y).cos()
}

fn grad_sq(x: f64, y: f64) -> f64 {
    let gx = -0.5 * PI * (PI * x).sin() * (PI * y).cos();
    let gy = -0.5 * PI * (PI * x).cos() * (PI * y).sin();
    gx * gx + gy * gy
}

fn square(h: f64) -> Arc<TriMesh> {
    Arc::new(build_mesh(&DomainSpec::unit_square(h)).unwrap())
}

fn density(mesh: &Arc<TriMesh>) -> Density {
    Density::from_fn(mesh.clone(), |p| rho(p[0], p[1])).unwrap()
}

/// Relative errors at `h = 0.04` and `h = 0.02` of a functional against its exact value.
fn errors(exact: f64, f: impl Fn(&Density) -> f64) -> [f64; 2] {
    [0.04, 0.02].map(|h| (f(&density(&square(h))) - exact).abs() / exact.abs())
}

fn assert_converges(name: &str, e: [f64; 2]) {
    assert!(e[1] < 5e-3, "{name}: {e:?}");
    assert!(e[1] < 0.5 * e[0] || e[1] < 1e-6, "{name}: {e:?}");
}

#[test]
fn entropy_matches_quadrature() {
    let exact = support::square_integral(|x, y| rho(x, y) * rho(x, y).ln());
    assert_converges("entropy", errors(exact, entropy));
}

#[test]
fn fisher_forms_match_quadrature() {
    let exact = support::square_integral(|x, y| grad_sq(x, y) / rho(x, y));
    assert_converges("fisher", errors(exact, fisher));
    assert_converges("fisher_log", errors(exact, fisher_log));
    let d = density(&square(0.02));
    assert!((fisher(&d) - fisher_log(&d)).abs() < 1e-2 * fisher(&d));
}

#[test]
fn porous_functionals_match_quadrature() {
    for m in [1.1f64, 1.25, 1.4] {
        let exact = support::square_integral(|x, y| (m - 1.0).powi(2) * rho(x, y).powf(2.0 * m - 3.0) * grad_sq(x, y));
        assert_converges("fisher_m", errors(exact, |d| fisher_m(d, m).unwrap()));
        let exact = support::square_integral(|x, y| rho(x, y).powf(m));
        assert_converges("energy_m", errors(exact, |d| energy_m(d, m).unwrap()));
    }
}

#[test]
fn porous_fisher_tends_to_fisher() {
    let d = density(&square(0.04));
    let m: f64 = 1.0 + 1e-4;
    let scaled = fisher_m(&d, m).unwrap() / (m - 1.0).powi(2);
    assert!((scaled - fisher_log(&d)).abs() < 1e-3 * fisher_log(&d));
    for bad in [1.0, 1.5, 0.8, 2.0] {
        assert!(fisher_m(&d, bad).unwrap_err().is_usage());
    }
}

#[test]
fn log_derivative_of_exponential_is_exact() {
    let mesh = Arc::new(build_mesh(&DomainSpec::polar_star(1.0, 0.3, 3, 0.1)).unwrap());
    let d = Density::from_fn(mesh.clone(), |p| (0.7 * p[0] - 1.3 * p[1]).exp()).unwrap();
    let u = log_derivative(&d).unwrap();
    assert!(u.undefined_triangles().is_empty());
    for g in u.vectors() {
        assert!((g[0] - 0.7).abs() < 1e-10 && (g[1] + 1.3).abs() < 1e-10);
    }
}

#[test]
fn uniform_density_minimizes_entropy() {
    let mesh = Arc::new(build_mesh(&DomainSpec::polar_star(1.0, 0.5, 3, 0.05)).unwrap());
    let u = Density::uniform(mesh.clone());
    assert!((entropy(&u) + mesh.area_total().ln()).abs() < 1e-12);
    assert!(fisher(&u) < 1e-20);
}

fn coarse() -> Arc<TriMesh> {
    Arc::new(build_mesh(&DomainSpec::unit_square(0.2)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_is_bounded_below(values in proptest::collection::vec(0.0f64..5.0, 400)) {
        let mesh = coarse();
        let values = values[..mesh.num_vertices()].to_vec();
        prop_assume!(values.iter().any(|&v| v > 0.0));
        let d = Density::normalized(mesh.clone(), values).unwrap();
        prop_assert!(entropy(&d) >= -mesh.area_total().ln() - 1e-12);
        prop_assert!(fisher(&d) >= 0.0);
    }

    #[test]
    fn kinetic_action_is_jointly_convex(
        a in proptest::collection::vec(0.01f64..3.0, 400),
        b in proptest::collection::vec(0.01f64..3.0, 400),
        f in proptest::collection::vec(-2.0f64..2.0, 800),
        g in proptest::collection::vec(-2.0f64..2.0, 800),
        lambda in 0.0f64..1.0,
    ) {
        let mesh = coarse();
        let n = mesh.num_vertices();
        assert!(n <= a.len() && 2 * mesh.num_triangles() <= f.len());
        let field = |v: &[f64], s: f64| {
            let vectors = (0..mesh.num_triangles()).map(|t| [s * v[2 * t], s * v[2 * t + 1]]).collect();
            VectorField::new(mesh.clone(), vectors).unwrap()
        };
        let ra = Density::normalized(mesh.clone(), a[..n].to_vec()).unwrap();
        let rb = Density::normalized(mesh.clone(), b[..n].to_vec()).unwrap();
        let mid = ra.mix(&rb, lambda).unwrap();
        let fm: Vec<f64> = f.iter().zip(&g).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let lhs = kinetic_action(&mid, &field(&fm, 1.0)).unwrap();
        let rhs = lambda * kinetic_action(&ra, &field(&f, 1.0)).unwrap() + (1.0 - lambda) * kinetic_action(&rb, &field(&g, 1.0)).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        // and two-homogeneous in the momentum
        let doubled = kinetic_action(&ra, &field(&f, 2.0)).unwrap();
        prop_assert!((doubled - 4.0 * kinetic_action(&ra, &field(&f, 1.0)).unwrap()).abs() <= 1e-9 * doubled.max(1.0));
    }
}
