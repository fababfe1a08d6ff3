mod support;

use std::f64::consts::PI;
use std::sync::Arc;

use fisherflow::mesh::build_mesh;
use fisherflow::transport::{
    entropic_ot, metric_speed, tangent_norm, wasserstein, wasserstein_extrapolated, CostTable, SinkhornConfig,
};
use fisherflow::verify::Datum;
use fisherflow::{Curve, Density, DomainSpec, Provenance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(h: f64) -> (Arc<fisherflow::TriMesh>, CostTable) {
    let mesh = Arc::new(build_mesh(&DomainSpec::unit_square(h)).unwrap());
    let cost = CostTable::from_mesh(&mesh).unwrap();
    (mesh, cost)
}

fn random_density(mesh: &Arc<fisherflow::TriMesh>, rng: &mut ChaCha8Rng) -> Density {
    let (x0, y0, s): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen_range(0.1..0.3));
    Density::from_fn(mesh.clone(), |p| 0.2 + (-((p[0] - x0).powi(2) + (p[1] - y0).powi(2)) / (s * s)).exp()).unwrap()
}

#[test]
fn extrapolated_sinkhorn_matches_assignment_brute_force() {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (approx, exact) = support::transport_case(seed);
        let err = (approx - exact).abs() / exact;
        assert!(err <= 0.01, "seed {seed}: sinkhorn {approx} exact {exact}");
        worst = worst.max(err);
    }
    assert!(worst > 0.0);
}

#[test]
fn five_point_assignment_oracle() {
    let x = [[0.1, 0.2], [0.8, 0.1], [0.5, 0.5], [0.2, 0.9], [0.9, 0.8]];
    let y = [[0.3, 0.3], [0.6, 0.2], [0.4, 0.7], [0.1, 0.6], [0.7, 0.9]];
    let points: Vec<[f64; 2]> = x.iter().chain(&y).copied().collect();
    let cost = CostTable::from_points(&points).unwrap();
    let (mut a, mut b) = (vec![0.0; 10], vec![0.0; 10]);
    a[..5].fill(0.2);
    b[5..].fill(0.2);
    let cfg = SinkhornConfig { epsilon: 3e-3, tol: 1e-6, ..SinkhornConfig::default() };
    let w2 = fisherflow::transport::extrapolated_divergence(&a, &b, &cost, &cfg).unwrap();
    let exact = support::assignment_w2(&x, &y);
    assert!((w2 - exact).abs() / exact < 0.01, "{w2} vs {exact}");
}

#[test]
fn corner_diracs_are_a_diagonal_apart() {
    let (mesh, cost) = square(0.05);
    let n = mesh.num_vertices();
    let far = (0..n).max_by(|&i, &j| {
        let s = |k: usize| mesh.vertices()[k][0] + mesh.vertices()[k][1];
        s(i).total_cmp(&s(j))
    });
    let near = (0..n).find(|&i| mesh.vertices()[i] == [0.0, 0.0]).unwrap();
    let (p, q) = (Density::dirac(mesh.clone(), near).unwrap(), Density::dirac(mesh.clone(), far.unwrap()).unwrap());
    let cfg = SinkhornConfig { epsilon: 0.05 * 0.05, ..SinkhornConfig::default() };
    let w = wasserstein(&p, &q, &cost, &cfg).unwrap();
    assert!((w - 2f64.sqrt()).abs() < 0.02 * 2f64.sqrt(), "{w}");
    assert!(wasserstein(&p, &p, &cost, &cfg).unwrap() < 1e-8);
}

#[test]
fn cost_table_invariants_on_a_nonconvex_domain() {
    let mesh = build_mesh(&DomainSpec::polar_star(1.0, 0.5, 3, 0.1)).unwrap();
    let cost = CostTable::from_mesh(&mesh).unwrap();
    let n = cost.len();
    for i in 0..n {
        assert_eq!(cost.get(i, i), 0.0);
        for j in 0..n {
            assert!(cost.get(i, j) >= 0.0);
            assert_eq!(cost.get(i, j), cost.get(j, i));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let cached = CostTable::cached(&mesh, dir.path()).unwrap();
    let again = CostTable::cached(&mesh, dir.path()).unwrap();
    assert_eq!(cached.row(3), again.row(3));
    let bytes = std::fs::read(CostTable::cache_path(&mesh, dir.path())).unwrap();
    assert!(bytes.len() >= 8 * n * n);
}

#[test]
fn debiased_distance_triangle_inequality() {
    let (mesh, cost) = square(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SinkhornConfig { epsilon: 0.01, ..SinkhornConfig::default() };
    for _ in 0..4 {
        let (a, b, c) = (random_density(&mesh, &mut rng), random_density(&mesh, &mut rng), random_density(&mesh, &mut rng));
        let ab = wasserstein(&a, &b, &cost, &cfg).unwrap();
        let bc = wasserstein(&b, &c, &cost, &cfg).unwrap();
        let ac = wasserstein(&a, &c, &cost, &cfg).unwrap();
        assert!(ac <= 1.01 * (ab + bc), "{ac} > {ab} + {bc}");
        assert!((wasserstein(&b, &a, &cost, &cfg).unwrap() - ab).abs() < 1e-6);
    }
}

#[test]
fn entropic_cost_decreases_with_epsilon() {
    let (mesh, cost) = square(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (a, b) = (random_density(&mesh, &mut rng), random_density(&mesh, &mut rng));
    let norm = |d: &Density| {
        let m = d.masses();
        let t: f64 = m.iter().sum();
        m.iter().map(|v| v / t).collect::<Vec<f64>>()
    };
    let (a, b) = (norm(&a), norm(&b));
    let mut last = f64::INFINITY;
    for eps in [0.04, 0.02, 0.01, 0.005] {
        let cfg = SinkhornConfig { epsilon: eps, ..SinkhornConfig::default() };
        let v = entropic_ot(&a, &b, &cost, &cfg, None).unwrap().value;
        assert!(v <= last + 1e-9, "eps {eps}: {v} > {last}");
        last = v;
    }
}

#[test]
fn metric_speed_of_constant_and_shifted_curves() {
    let (mesh, cost) = square(0.1);
    let cfg = SinkhornConfig { epsilon: 0.01, ..SinkhornConfig::default() };
    let rho = Datum::Eigen { p: 1, q: 1, amplitude: 0.5 }.density(&mesh, 0).unwrap();
    let flat = Curve::constant(&rho, vec![0.0, 0.01, 0.02]).unwrap();
    assert!(metric_speed(&flat, 1, &cost, &cfg).unwrap() < 1e-6);
    let slices: Vec<Density> = (0..4).map(|k| rho.mix(&Density::uniform(mesh.clone()), 0.1 * k as f64).unwrap()).collect();
    let times = vec![0.0, 0.01, 0.02, 0.03];
    let curve = Curve::new(times.clone(), slices.clone(), None, Provenance::Synthetic).unwrap();
    let shifted = Curve::new(
        times.iter().map(|t| t + 0.5).collect(),
        slices,
        None,
        Provenance::Synthetic,
    )
    .unwrap();
    let (a, b) = (metric_speed(&curve, 1, &cost, &cfg).unwrap(), metric_speed(&shifted, 1, &cost, &cfg).unwrap());
    assert!(a > 0.0 && (a - b).abs() <= 1e-9 * a, "{a} vs {b}");
}

#[test]
fn tangent_norm_is_the_infinitesimal_distance() {
    let (mesh, cost) = square(0.05);
    let rho = Datum::Eigen { p: 1, q: 1, amplitude: 0.5 }.density(&mesh, 0).unwrap();
    let raw: Vec<f64> = mesh.vertices().iter().map(|p| (2.0 * PI * p[0]).cos() + 0.5 * (PI * p[1]).cos()).collect();
    let m = mesh.lumped_mass();
    let mean = raw.iter().zip(m).map(|(v, w)| v * w).sum::<f64>() / mesh.area_total();
    let eta: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let norm = tangent_norm(&rho, &eta).unwrap();
    let cfg = SinkhornConfig { epsilon: 0.01, ..SinkhornConfig::default() };
    for s in [0.05, 0.1, 0.2] {
        let moved: Vec<f64> = rho.values().iter().zip(&eta).map(|(r, e)| r + s * e).collect();
        let sigma = Density::new(mesh.clone(), moved).unwrap();
        let w = wasserstein_extrapolated(&rho, &sigma, &cost, &cfg).unwrap();
        let ratio = w / (s * norm);
        assert!((ratio - 1.0).abs() < 0.01, "s = {s}: ratio {ratio}");
    }
    let massive = vec![1.0; mesh.num_vertices()];
    assert!(tangent_norm(&rho, &massive).unwrap_err().is_usage());
}
