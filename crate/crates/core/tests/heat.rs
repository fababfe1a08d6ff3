mod support;

use std::f64::consts::PI;
use std::sync::Arc;

use fisherflow::functionals::entropy;
use fisherflow::mesh::build_mesh;
use fisherflow::{Density, DomainSpec, HeatOperator, TriMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mesh(spec: DomainSpec) -> Arc<TriMesh> {
    Arc::new(build_mesh(&spec).unwrap())
}

fn star() -> Arc<TriMesh> {
    mesh(DomainSpec::polar_star(1.0, 0.5, 3, 0.05))
}

fn bump(mesh: &Arc<TriMesh>, c: [f64; 2], s: f64) -> Density {
    Density::from_fn(mesh.clone(), |p| 0.01 + (-((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)) / (s * s)).exp()).unwrap()
}

fn max_error(h: f64, dt: f64) -> f64 {
    let m = mesh(DomainSpec::unit_square(h));
    let rho0 = Density::from_fn(m.clone(), |p| support::eigen_solution(p, 0.0)).unwrap();
    let curve = HeatOperator::new(m.clone()).evolve(&rho0, 0.05, dt, &[0.05]).unwrap();
    let last = &curve.densities()[curve.len() - 1];
    m.vertices().iter().zip(last.values()).map(|(&p, &v)| (v - support::eigen_solution(p, 0.05)).abs()).fold(0.0, f64::max)
}

#[test]
fn eigenfunction_decays_at_its_rate() {
    let e = max_error(0.02, 1e-4);
    assert!(e < 1e-2, "{e}");
    let refined = max_error(0.01, 5e-5);
    assert!(e / refined >= 1.8, "{e} vs {refined}");
}

#[test]
fn backward_euler_is_first_order() {
    let m = mesh(DomainSpec::unit_square(0.05));
    let op = HeatOperator::new(m.clone());
    let rho0 = bump(&m, [0.3, 0.6], 0.15);
    let at = |dt: f64| op.evolve(&rho0, 0.02, dt, &[0.02]).unwrap().densities().last().unwrap().clone();
    let reference = at(1e-6);
    let e1 = at(1e-3).l1_distance(&reference).unwrap();
    let e2 = at(5e-4).l1_distance(&reference).unwrap();
    assert!((e1 / e2 - 2.0).abs() < 0.2, "{e1} / {e2}");
}

#[test]
fn cosine_amplitude_follows_the_exponential() {
    let m = mesh(DomainSpec::unit_square(0.02));
    let f: Vec<f64> = m.vertices().iter().map(|p| (PI * p[0]).cos()).collect();
    let op = HeatOperator::new(m.clone());
    let t = 0.05;
    let g = op.apply_to_function(&f, t, 5e-5).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(m.lumped_mass()).map(|((x, y), w)| w * x * y).sum::<f64>();
    let amplitude = dot(&g, &f) / dot(&f, &f);
    let exact = (-PI * PI * t).exp();
    assert!((amplitude - exact).abs() < 1e-2 * exact, "{amplitude} vs {exact}");
}

#[test]
fn maximum_principle_and_mass() {
    let m = star();
    let rho0 = bump(&m, [0.3, 0.2], 0.15);
    let (lo, hi) = rho0.values().iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let op = HeatOperator::new(m.clone());
    let times: Vec<f64> = (0..=10).map(|k| k as f64 * 5e-3).collect();
    let curve = op.evolve(&rho0, 0.05, 1e-4, &times).unwrap();
    for d in curve.densities() {
        assert!(d.values().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }
    let h = curve.entropies();
    assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    assert!(curve.fishers().windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn semigroup_is_self_adjoint_in_the_mass_product() {
    let m = star();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f: Vec<f64> = (0..m.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..m.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let op = HeatOperator::new(m.clone());
    let pf = op.apply_to_function(&f, 0.01, 1e-3).unwrap();
    let pg = op.apply_to_function(&g, 0.01, 1e-3).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(m.lumped_mass()).map(|((x, y), w)| w * x * y).sum::<f64>();
    let (l, r) = (dot(&pf, &g), dot(&f, &pg));
    assert!((l - r).abs() < 1e-12 * l.abs().max(1.0), "{l} vs {r}");
}

#[test]
fn one_step_smooths_a_dirac_to_positive() {
    let m = star();
    let d = Density::dirac(m.clone(), m.num_vertices() / 3).unwrap();
    let next = HeatOperator::new(m.clone()).step(&d, 1e-3).unwrap();
    assert!(next.min() > 0.0);
    assert!((next.mass() - 1.0).abs() < 1e-12);
    assert!(entropy(&next) < entropy(&d));
}

#[test]
fn mass_survives_many_steps() {
    let m = star();
    let op = HeatOperator::new(m.clone());
    let mut rho = bump(&m, [-0.2, 0.4], 0.1);
    for _ in 0..500 {
        rho = op.step(&rho, 2e-4).unwrap();
    }
    assert!((rho.mass() - 1.0).abs() < 1e-11, "{}", rho.mass());
}

#[test]
fn graded_propagation_matches_uniform_steps() {
    let m = mesh(DomainSpec::unit_square(0.05));
    let op = HeatOperator::new(m.clone());
    let rho0 = bump(&m, [0.2, 0.7], 0.1);
    let times = [0.0, 2e-3, 4e-3];
    let graded = op.evolve_graded(&[rho0.clone()], &times, 20).unwrap();
    let uniform = op.evolve(&rho0, 4e-3, 1e-4, &times).unwrap();
    for (a, b) in graded[0].densities().iter().zip(uniform.densities()) {
        assert!(a.l1_distance(b).unwrap() < 1e-10);
    }
}
