//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use fisherflow::jko::{jko_step, JkoConfig};
use fisherflow::transport::{extrapolated_divergence, CostTable, SinkhornConfig};
use fisherflow::{Density, TriMesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `1 + ½ e^{-2π²t} cos πx cos πy`, the Neumann heat solution on the unit square.
pub fn eigen_solution(p: [f64; 2], t: f64) -> f64 {
    1.0 + 0.5 * (-2.0 * PI * PI * t).exp() * (PI * p[0]).cos() * (PI * p[1]).cos()
}

/// Plain Sinkhorn scaling for `OT_ε(a, b)` with cost `c`; returns `(value, f, g)`.
/// Kernel entries stay above `exp(-10)` on the toy mesh, so no log-domain care is needed.
fn sinkhorn(a: &[f64], b: &[f64], c: &[[f64; 3]; 3], eps: f64, g0: [f64; 3]) -> (f64, [f64; 3], [f64; 3]) {
    let k = c.map(|row| row.map(|x| (-x / eps).exp()));
    let mut u = [1.0; 3];
    let mut v = g0.map(|g| (g / eps).exp());
    for _ in 0..100_000 {
        for i in 0..3 {
            u[i] = 1.0 / (0..3).map(|j| k[i][j] * b[j] * v[j]).sum::<f64>();
        }
        let mut change: f64 = 0.0;
        for j in 0..3 {
            let new = 1.0 / (0..3).map(|i| k[i][j] * a[i] * u[i]).sum::<f64>();
            change = change.max((new / v[j] - 1.0).abs());
            v[j] = new;
        }
        if change < 1e-14 {
            break;
        }
    }
    let f = u.map(|x| eps * x.ln());
    let g = v.map(|x| eps * x.ln());
    let value = (0..3).map(|i| a[i] * f[i] + b[i] * g[i]).sum();
    (value, f, g)
}

pub fn toy_mesh() -> (Arc<TriMesh>, [[f64; 3]; 3]) {
    let pts: Vec<[f64; 2]> = vec![[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]];
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
        }
    }
    let mesh = TriMesh::from_parts(None, pts, vec![[0, 1, 2]], vec![0, 1, 2]).unwrap();
    (Arc::new(mesh), c)
}

/// Minimizes the one-step objective over the simplex: a 1e-3 grid, then a 1e-5
/// grid around the coarse minimizer.
pub fn grid_minimizer(b: &[f64], c: &[[f64; 3]; 3], m: &[f64], tau: f64, eps: f64, debiased: bool) -> [f64; 3] {
    let (_, fb, gb) = sinkhorn(b, b, c, eps, [0.0; 3]);
    let phi: Vec<f64> = (0..3).map(|i| if debiased { 0.5 * (fb[i] + gb[i]) } else { 0.0 }).collect();
    let objective = |p: [f64; 3]| {
        let (ot, _, _) = sinkhorn(&p, b, c, eps, gb);
        let h: f64 = (0..3).map(|i| p[i] * (p[i] / m[i]).ln()).sum();
        let lin: f64 = (0..3).map(|i| p[i] * phi[i]).sum();
        (ot - lin) / (2.0 * tau) + h
    };
    let search = |center: [f64; 3], step: f64, radius: usize| {
        let mut best = (f64::INFINITY, center);
        let r = radius as i64;
        for di in -r..=r {
            for dj in -r..=r {
                let p0 = center[0] + di as f64 * step;
                let p1 = center[1] + dj as f64 * step;
                let p2 = 1.0 - p0 - p1;
                if p0.min(p1).min(p2) < 1e-6 {
                    continue;
                }
                let v = objective([p0, p1, p2]);
                if v < best.0 {
                    best = (v, [p0, p1, p2]);
                }
            }
        }
        best.1
    };
    let coarse = search([0.5, 0.5, 0.0], 1e-3, 500);
    search(coarse, 1e-5, 150)
}

/// One JKO step on the toy mesh next to the grid oracle.
pub struct ToyStep {
    pub solver: Vec<f64>,
    pub oracle: [f64; 3],
    pub datum: [f64; 3],
}

impl ToyStep {
    pub fn l1_error(&self) -> f64 {
        (0..3).map(|i| (self.solver[i] - self.oracle[i]).abs()).sum()
    }

    pub fn moved(&self) -> f64 {
        (0..3).map(|i| (self.solver[i] - self.datum[i]).abs()).sum()
    }
}

pub fn toy_step(debiased: bool) -> ToyStep {
    let (mesh, c) = toy_mesh();
    let (tau, eps) = (0.1, 0.05);
    let b = [0.6, 0.3, 0.1];
    let rho = Density::from_masses(mesh.clone(), &b).unwrap();
    let cost = CostTable::from_mesh(&mesh).unwrap();
    let cfg = JkoConfig { debiased, ..JkoConfig::new(tau, eps) };
    let solver = jko_step(&rho, &cost, &cfg).unwrap().masses();
    let oracle = grid_minimizer(&b, &c, mesh.lumped_mass(), tau, eps, debiased);
    ToyStep { solver, oracle, datum: b }
}

/// Seeded pair of `n`-point supports in the unit square.
pub fn random_supports(seed: u64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6);
    let mut pts = || (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect::<Vec<_>>();
    let x = pts();
    let y = pts();
    (x, y)
}

/// Exact squared distance between uniform measures on equal-size supports,
/// by enumerating every assignment.
pub fn assignment_w2(x: &[[f64; 2]], y: &[[f64; 2]]) -> f64 {
    fn search(x: &[[f64; 2]], y: &[[f64; 2]], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == x.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                let c = (x[i][0] - y[j][0]).powi(2) + (x[i][1] - y[j][1]).powi(2);
                search(x, y, used, i + 1, acc + c, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(x, y, &mut vec![false; y.len()], 0, 0.0, &mut best);
    best / x.len() as f64
}

/// `(extrapolated Sinkhorn distance, exact distance)` for one seeded instance.
pub fn transport_case(seed: u64) -> (f64, f64) {
    let (x, y) = random_supports(seed);
    let n = x.len();
    let points: Vec<[f64; 2]> = x.iter().chain(&y).copied().collect();
    let cost = CostTable::from_points(&points).unwrap();
    let mut a = vec![0.0; 2 * n];
    let mut b = vec![0.0; 2 * n];
    a[..n].fill(1.0 / n as f64);
    b[n..].fill(1.0 / n as f64);
    let cfg = SinkhornConfig { epsilon: 3e-3, tol: 1e-6, ..SinkhornConfig::default() };
    let w2 = extrapolated_divergence(&a, &b, &cost, &cfg).unwrap();
    (w2.sqrt(), assignment_w2(&x, &y).sqrt())
}

/// `∫_{[0,1]²} f` by a 5-point Gauss-Legendre rule on a 40 × 40 grid of cells.
pub fn square_integral(f: impl Fn(f64, f64) -> f64) -> f64 {
    let nodes = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
    let weights = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
    let cells = 40;
    let half = 0.5 / cells as f64;
    let mut total = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let (cx, cy) = ((2 * i + 1) as f64 * half, (2 * j + 1) as f64 * half);
            for (xa, wa) in nodes.iter().zip(&weights) {
                for (xb, wb) in nodes.iter().zip(&weights) {
                    total += wa * wb * f(cx + half * xa, cy + half * xb);
                }
            }
        }
    }
    total * half * half
}
