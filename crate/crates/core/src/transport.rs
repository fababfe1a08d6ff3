//! Entropic optimal transport between nodal densities with in-domain geodesic costs.
//!
//! Entropic transport uses the convention
//! `OT_ε(a, b) = min_P ⟨C, P⟩ + ε KL(P | a ⊗ b)` over couplings of `a` and `b`,
//! solved by Sinkhorn scaling with absorption of large scalings into the
//! dual potentials and ε-scaling from a coarse regularization.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curves::Curve;
use crate::error::{Error, Result};
use crate::functionals::{same_mesh, Density};
use crate::mesh::{dist, polygon_geodesic_distances, Point, TriMesh};

/// Largest support handled with a dense cost matrix.
pub const DENSE_CAP: usize = 60_000;
const MAGIC: &[u8; 8] = b"FFCOST01";
/// Scalings beyond `exp(±ABSORB)` are folded into the potentials.
const ABSORB: f64 = 40.0;
/// Ratio between successive regularizations in the ε-scaling warm-up.
const EPS_DECAY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Bound on the L¹ marginal violation at termination.
    pub tol: f64,
    pub debiased: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig { epsilon: 1e-3, max_iters: 200_000, tol: 1e-10, debiased: true }
    }
}

impl SinkhornConfig {
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        SinkhornConfig { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::validation(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters must be positive"));
        }
        Ok(())
    }
}

/// Dense squared-distance matrix between support points.
#[derive(Clone, Debug)]
pub struct CostTable {
    n: usize,
    checksum: String,
    data: Vec<f64>,
}

impl CostTable {
    /// Squared in-domain geodesic distances between all mesh vertices.
    pub fn from_mesh(mesh: &TriMesh) -> Result<Self> {
        let n = mesh.num_vertices();
        check_cap(n)?;
        let mut data = polygon_geodesic_distances(mesh)?;
        data.iter_mut().for_each(|d| *d *= *d);
        Ok(CostTable { n, checksum: mesh.checksum().to_owned(), data })
    }

    /// Squared Euclidean distances between free points.
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let n = points.len();
        check_cap(n)?;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = dist(points[i], points[j]);
                data[i * n + j] = d * d;
            }
        }
        let mut bytes = Vec::with_capacity(16 * n);
        for p in points {
            bytes.extend_from_slice(&p[0].to_le_bytes());
            bytes.extend_from_slice(&p[1].to_le_bytes());
        }
        use sha2::Digest;
        let checksum = hex::encode(&sha2::Sha256::digest(&bytes)[..8]);
        Ok(CostTable { n, checksum, data })
    }

    /// Wraps a row-major matrix after checking symmetry, zero diagonal and nonnegativity.
    pub fn from_matrix(n: usize, data: Vec<f64>, checksum: String) -> Result<Self> {
        check_cap(n)?;
        if data.len() != n * n {
            return Err(Error::validation("cost matrix has the wrong size"));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::validation(format!("cost diagonal entry {i} is nonzero")));
            }
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if !(a >= 0.0 && a.is_finite()) || a != b {
                    return Err(Error::validation(format!("cost entry ({i}, {j}) is negative or asymmetric")));
                }
            }
        }
        Ok(CostTable { n, checksum, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn checksum(&self) -> &str {
        &self.checksum
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        out.write_all(MAGIC)?;
        out.write_all(&(self.n as u64).to_le_bytes())?;
        let mut tag = [b' '; 16];
        let bytes = self.checksum.as_bytes();
        tag[..bytes.len().min(16)].copy_from_slice(&bytes[..bytes.len().min(16)]);
        out.write_all(&tag)?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a cache file, refusing it unless its checksum is `expected`.
    pub fn read(path: &Path, expected: &str) -> Result<Self> {
        let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header = [0u8; 32];
        input.read_exact(&mut header)?;
        if &header[..8] != MAGIC {
            return Err(Error::validation(format!("{} is not a cost table", path.display())));
        }
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        check_cap(n)?;
        let found = String::from_utf8_lossy(&header[16..32]).trim_end().to_owned();
        if found != expected {
            return Err(Error::ChecksumMismatch { expected: expected.to_owned(), found });
        }
        let mut raw = vec![0u8; 8 * n * n];
        input.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(CostTable { n, checksum: found, data })
    }

    /// Loads the table for `mesh` from `dir`, building and storing it on a miss.
    pub fn cached(mesh: &TriMesh, dir: &Path) -> Result<Self> {
        let path = Self::cache_path(mesh, dir);
        if path.exists() {
            match Self::read(&path, mesh.checksum()) {
                Ok(table) if table.n == mesh.num_vertices() => return Ok(table),
                Ok(_) => log::warn!("ignoring cost cache {} of the wrong size", path.display()),
                Err(e) => log::warn!("ignoring unreadable cost cache {}: {e}", path.display()),
            }
        }
        let table = Self::from_mesh(mesh)?;
        std::fs::create_dir_all(dir)?;
        table.write(&path)?;
        Ok(table)
    }

    pub fn cache_path(mesh: &TriMesh, dir: &Path) -> PathBuf {
        dir.join(format!("cost_{}.bin", mesh.checksum()))
    }
}

fn check_cap(n: usize) -> Result<()> {
    if n > DENSE_CAP {
        return Err(Error::validation(format!(
            "{n} support points exceed the dense cost cap of {DENSE_CAP}"
        )));
    }
    Ok(())
}

/// Gibbs kernel `K̃_ij = exp((f̂_i + ĝ_j - C_ij)/ε)` on a rectangular block of the cost.
pub(crate) struct Gibbs<'a> {
    cost: &'a CostTable,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub eps: f64,
    pub f_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
    kernel: Vec<f64>,
}

impl<'a> Gibbs<'a> {
    pub fn new(cost: &'a CostTable, rows: Vec<usize>, cols: Vec<usize>, eps: f64, f: Vec<f64>, g: Vec<f64>) -> Self {
        let mut k = Gibbs { cost, rows, cols, eps, f_hat: f, g_hat: g, kernel: Vec::new() };
        k.rebuild();
        k
    }

    pub fn rebuild(&mut self) {
        let m = self.cols.len();
        self.kernel.resize(self.rows.len() * m, 0.0);
        let inv = 1.0 / self.eps;
        for (r, &i) in self.rows.iter().enumerate() {
            let crow = self.cost.row(i);
            let fi = self.f_hat[r];
            let out = &mut self.kernel[r * m..(r + 1) * m];
            for ((o, &j), &gj) in out.iter_mut().zip(&self.cols).zip(&self.g_hat) {
                *o = ((fi + gj - crow[j]) * inv).exp();
            }
        }
    }

    /// `K̃ x` over columns.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = self.cols.len();
        self.kernel.chunks_exact(m).map(|row| row.iter().zip(x).map(|(k, x)| k * x).sum()).collect()
    }

    /// `K̃ᵀ y` over rows.
    pub fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        let m = self.cols.len();
        let mut out = vec![0.0; m];
        for (row, &yi) in self.kernel.chunks_exact(m).zip(y) {
            if yi != 0.0 {
                for (o, k) in out.iter_mut().zip(row) {
                    *o += yi * k;
                }
            }
        }
        out
    }

    /// Exact row c-transform `-ε log Σ_j w_j exp((g_j - C_ij)/ε)` in the log domain.
    pub fn row_transform(&self, log_w: &[f64], g: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&i| {
                let crow = self.cost.row(i);
                let terms = self.cols.iter().zip(log_w).zip(g).map(|((&j, lw), gj)| lw + (gj - crow[j]) / self.eps);
                -self.eps * log_sum_exp(terms)
            })
            .collect()
    }

    /// Exact column c-transform `-ε log Σ_i w_i exp((f_i - C_ij)/ε)` in the log domain.
    pub fn col_transform(&self, log_w: &[f64], f: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|&j| {
                let terms = self.rows.iter().zip(log_w).zip(f).map(|((&i, lw), fi)| lw + (fi - self.cost.get(i, j)) / self.eps);
                -self.eps * log_sum_exp(terms)
            })
            .collect()
    }
}

pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Dual potentials and value of one entropic transport problem.
#[derive(Clone, Debug)]
pub struct OtSolution {
    /// Potential on the support of the first measure (support order).
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub value: f64,
    pub iterations: usize,
    pub violation: f64,
}

/// Symmetric potential of `OT_ε(a, a)`.
#[derive(Clone, Debug)]
pub struct SelfSolution {
    pub potential: Vec<f64>,
    pub support: Vec<usize>,
    pub value: f64,
    pub iterations: usize,
}

fn support(a: &[f64]) -> Vec<usize> {
    a.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, _)| i).collect()
}

fn check_measure(a: &[f64], cost: &CostTable) -> Result<()> {
    if a.len() != cost.len() {
        return Err(Error::validation(format!("measure has {} entries for a {}-point cost", a.len(), cost.len())));
    }
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::validation("measure entries must be finite and nonnegative"));
    }
    let total: f64 = a.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::validation(format!("measure has total mass {total}, expected 1")));
    }
    Ok(())
}

fn eps_schedule(start: f64, target: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = start;
    while e > target {
        out.push(e);
        e *= EPS_DECAY;
    }
    out.push(target);
    out
}

/// Solves `OT_ε(a, b)` for probability vectors indexed like the cost table.
/// `init` warm-starts from potentials on the supports of `a` and `b`, in which
/// case the ε-scaling warm-up is skipped.
pub fn entropic_ot(
    a: &[f64],
    b: &[f64],
    cost: &CostTable,
    cfg: &SinkhornConfig,
    init: Option<(Vec<f64>, Vec<f64>)>,
) -> Result<OtSolution> {
    cfg.validate()?;
    check_measure(a, cost)?;
    check_measure(b, cost)?;
    let (rows, cols) = (support(a), support(b));
    let wa: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let wb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let (f0, g0, schedule) = match init {
        Some((f, g)) if f.len() == rows.len() && g.len() == cols.len() => (f, g, vec![cfg.epsilon]),
        _ => {
            let cmax = rows.iter().flat_map(|&i| cols.iter().map(move |&j| cost.get(i, j))).fold(0.0, f64::max);
            (vec![0.0; rows.len()], vec![0.0; cols.len()], eps_schedule(cmax.max(cfg.epsilon), cfg.epsilon))
        }
    };
    let mut gibbs = Gibbs::new(cost, rows, cols, schedule[0], f0, g0);
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    let last_stage = schedule.len() - 1;
    for (stage, &eps) in schedule.iter().enumerate() {
        if stage > 0 {
            gibbs.eps = eps;
            gibbs.rebuild();
        }
        let stage_tol = if stage == last_stage { cfg.tol } else { cfg.tol.max(1e-3) };
        let (it, viol) = scale_to_tolerance(&mut gibbs, &wa, &wb, stage_tol, cfg.max_iters - iterations.min(cfg.max_iters))?;
        iterations += it;
        violation = viol;
        if violation > stage_tol {
            return Err(Error::NonConvergence { iterations, residual: violation });
        }
    }
    // final exact row update: P has row marginal a and unit mass, so the dual equals ⟨a,f⟩ + ⟨b,g⟩
    let log_wb: Vec<f64> = wb.iter().map(|w| w.ln()).collect();
    let f = gibbs.row_transform(&log_wb, &gibbs.g_hat);
    let g = gibbs.g_hat.clone();
    let value = dot(&wa, &f) + dot(&wb, &g);
    Ok(OtSolution { f, g, rows: gibbs.rows, cols: gibbs.cols, value, iterations, violation })
}

/// Iterations between estimates of the linear convergence rate.
const RATE_WINDOW: usize = 10;
const OMEGA_MAX: f64 = 1.99;

fn relax(x: f64, target: f64, omega: f64) -> f64 {
    if omega == 1.0 {
        target
    } else {
        x.powf(1.0 - omega) * target.powf(omega)
    }
}

/// Alternating scaling on the current kernel; on return the potentials are absorbed.
///
/// Once the violation decays linearly, the updates are over-relaxed with the
/// factor `2/(1 + √(1 - θ))` for the observed rate `θ`. Relaxation is dropped for
/// the rest of the call if the violation stops decreasing over a window.
fn scale_to_tolerance(gibbs: &mut Gibbs<'_>, wa: &[f64], wb: &[f64], tol: f64, budget: usize) -> Result<(usize, f64)> {
    let mut u = vec![1.0; wa.len()];
    let mut v = vec![1.0; wb.len()];
    let mut violation = f64::INFINITY;
    let mut omega = 1.0;
    let mut relaxable = true;
    let mut history: Vec<f64> = Vec::new();
    let mut it = 0;
    while it < budget {
        it += 1;
        let vb: Vec<f64> = v.iter().zip(wb).map(|(v, b)| v * b).collect();
        let kv = gibbs.apply(&vb);
        let mut degenerate = false;
        for (ui, k) in u.iter_mut().zip(&kv) {
            *ui = relax(*ui, 1.0 / k, omega);
            degenerate |= !(ui.is_finite() && *ui > 0.0);
        }
        if degenerate {
            // kernel rows underflowed: redo the half step in the log domain
            absorb_cols(gibbs, &mut v);
            let log_wb: Vec<f64> = wb.iter().map(|w| w.ln()).collect();
            gibbs.f_hat = gibbs.row_transform(&log_wb, &gibbs.g_hat);
            u.iter_mut().for_each(|x| *x = 1.0);
            gibbs.rebuild();
            omega = 1.0;
            history.clear();
        }
        let ua: Vec<f64> = u.iter().zip(wa).map(|(u, a)| u * a).collect();
        let ktu = gibbs.apply_t(&ua);
        violation = v.iter().zip(&ktu).zip(wb).map(|((v, k), b)| (b * v * k - b).abs()).sum();
        if violation <= tol {
            break;
        }
        let mut degenerate = false;
        for (vj, k) in v.iter_mut().zip(&ktu) {
            *vj = relax(*vj, 1.0 / k, omega);
            degenerate |= !(vj.is_finite() && *vj > 0.0);
        }
        if degenerate {
            absorb_rows(gibbs, &mut u);
            let log_wa: Vec<f64> = wa.iter().map(|w| w.ln()).collect();
            gibbs.g_hat = gibbs.col_transform(&log_wa, &gibbs.f_hat);
            v.iter_mut().for_each(|x| *x = 1.0);
            gibbs.rebuild();
            omega = 1.0;
            history.clear();
            continue;
        }
        history.push(violation);
        if history.len() > 2 * RATE_WINDOW {
            let last = history.len() - 1;
            let observed = (history[last] / history[last - RATE_WINDOW]).powf(1.0 / RATE_WINDOW as f64);
            if omega > 1.0 && !(observed < 1.0) {
                omega = 1.0;
                relaxable = false;
            } else if relaxable && observed < 1.0 {
                // unrelaxed rate θ recovered from λ + ω - 1 = ω √(λθ)
                let mu = (observed + omega - 1.0) / (omega * observed.sqrt());
                let theta = mu * mu;
                if theta > 0.5 && theta < 1.0 {
                    omega = (2.0 / (1.0 + (1.0 - theta).sqrt())).min(OMEGA_MAX);
                }
            }
            history.clear();
        }
        if u.iter().chain(&v).any(|x| x.ln().abs() > ABSORB) {
            absorb_rows(gibbs, &mut u);
            absorb_cols(gibbs, &mut v);
            gibbs.rebuild();
        }
    }
    absorb_rows(gibbs, &mut u);
    absorb_cols(gibbs, &mut v);
    gibbs.rebuild();
    Ok((it, violation))
}

fn absorb_rows(gibbs: &mut Gibbs<'_>, u: &mut [f64]) {
    for (f, x) in gibbs.f_hat.iter_mut().zip(u.iter_mut()) {
        *f += gibbs.eps * x.ln();
        *x = 1.0;
    }
}

fn absorb_cols(gibbs: &mut Gibbs<'_>, v: &mut [f64]) {
    for (g, x) in gibbs.g_hat.iter_mut().zip(v.iter_mut()) {
        *g += gibbs.eps * x.ln();
        *x = 1.0;
    }
}

/// Symmetric solve of `OT_ε(a, a)` by the averaged fixed-point map `p ← (p + T p)/2`.
pub fn self_transport(a: &[f64], cost: &CostTable, cfg: &SinkhornConfig) -> Result<SelfSolution> {
    self_transport_from(a, cost, cfg, None)
}

/// [`self_transport`] warm-started from a potential on the support of `a`,
/// skipping the ε-scaling warm-up.
pub fn self_transport_from(a: &[f64], cost: &CostTable, cfg: &SinkhornConfig, init: Option<Vec<f64>>) -> Result<SelfSolution> {
    cfg.validate()?;
    check_measure(a, cost)?;
    let sup = support(a);
    let wa: Vec<f64> = sup.iter().map(|&i| a[i]).collect();
    let (p0, schedule) = match init {
        Some(p) if p.len() == sup.len() => (p, vec![cfg.epsilon]),
        _ => {
            let cmax = sup.iter().flat_map(|&i| sup.iter().map(move |&j| cost.get(i, j))).fold(0.0, f64::max);
            (vec![0.0; sup.len()], eps_schedule(cmax.max(cfg.epsilon), cfg.epsilon))
        }
    };
    let mut gibbs = Gibbs::new(cost, sup.clone(), sup.clone(), schedule[0], p0.clone(), p0);
    let mut iterations = 0;
    let last_stage = schedule.len() - 1;
    for (stage, &eps) in schedule.iter().enumerate() {
        if stage > 0 {
            gibbs.eps = eps;
            gibbs.rebuild();
        }
        let stage_tol = if stage == last_stage { cfg.tol } else { cfg.tol.max(1e-3) };
        let mut s = vec![1.0; wa.len()];
        let mut violation = f64::INFINITY;
        while iterations < cfg.max_iters {
            iterations += 1;
            let sa: Vec<f64> = s.iter().zip(&wa).map(|(s, a)| s * a).collect();
            let ks = gibbs.apply(&sa);
            violation = s.iter().zip(&ks).zip(&wa).map(|((s, k), a)| (a * s * k - a).abs()).sum();
            if violation <= stage_tol {
                break;
            }
            let mut degenerate = false;
            for (si, k) in s.iter_mut().zip(&ks) {
                *si = (*si / k).sqrt();
                degenerate |= !(si.is_finite() && *si > 0.0);
            }
            if degenerate {
                let log_wa: Vec<f64> = wa.iter().map(|w| w.ln()).collect();
                let t = gibbs.row_transform(&log_wa, &gibbs.g_hat);
                let p: Vec<f64> = gibbs.f_hat.iter().zip(&t).map(|(p, t)| 0.5 * (p + t)).collect();
                gibbs.f_hat = p.clone();
                gibbs.g_hat = p;
                s.iter_mut().for_each(|x| *x = 1.0);
                gibbs.rebuild();
                continue;
            }
            if s.iter().any(|x| x.ln().abs() > ABSORB) {
                absorb_symmetric(&mut gibbs, &mut s);
            }
        }
        absorb_symmetric(&mut gibbs, &mut s);
        if violation > stage_tol {
            return Err(Error::NonConvergence { iterations, residual: violation });
        }
    }
    let log_wa: Vec<f64> = wa.iter().map(|w| w.ln()).collect();
    let p = gibbs.f_hat.clone();
    let tp = gibbs.row_transform(&log_wa, &p);
    // (p, T p) is dual feasible with unit-mass plan, so its dual value is exact for these potentials
    let value = dot(&wa, &p) + dot(&wa, &tp);
    let potential = p.iter().zip(&tp).map(|(p, t)| 0.5 * (p + t)).collect();
    Ok(SelfSolution { potential, support: sup, value, iterations })
}

fn absorb_symmetric(gibbs: &mut Gibbs<'_>, s: &mut [f64]) {
    for ((f, g), x) in gibbs.f_hat.iter_mut().zip(gibbs.g_hat.iter_mut()).zip(s.iter_mut()) {
        *f += gibbs.eps * x.ln();
        *g = *f;
        *x = 1.0;
    }
    gibbs.rebuild();
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sinkhorn divergence `OT_ε(a,b) - ½OT_ε(a,a) - ½OT_ε(b,b)`, or plain `OT_ε(a,b)`
/// when debiasing is off.
pub fn sinkhorn_divergence(a: &[f64], b: &[f64], cost: &CostTable, cfg: &SinkhornConfig) -> Result<f64> {
    sinkhorn_divergence_with(a, b, cost, cfg, &mut WarmStart::default())
}

/// Potentials kept between evaluations on nearby pairs of measures. Entries are
/// used only when their length matches the current supports.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    ot: Option<(Vec<f64>, Vec<f64>)>,
    self_a: Option<Vec<f64>>,
    self_b: Option<Vec<f64>>,
}

/// [`sinkhorn_divergence`] warm-started from, and updating, `warm`.
pub fn sinkhorn_divergence_with(a: &[f64], b: &[f64], cost: &CostTable, cfg: &SinkhornConfig, warm: &mut WarmStart) -> Result<f64> {
    if !cfg.debiased {
        let ot = retry_cold(warm.ot.take(), |init| entropic_ot(a, b, cost, cfg, init))?;
        warm.ot = Some((ot.f, ot.g));
        return Ok(ot.value);
    }
    let sa = retry_cold(warm.self_a.take(), |init| self_transport_from(a, cost, cfg, init))?;
    let sb = retry_cold(warm.self_b.take(), |init| self_transport_from(b, cost, cfg, init))?;
    // self potentials are a good start only when both measures share a support
    let init = warm.ot.take().or_else(|| (sa.support == sb.support).then(|| (sa.potential.clone(), sb.potential.clone())));
    let ot = retry_cold(init, |init| entropic_ot(a, b, cost, cfg, init))?;
    // ⟨a, f - p_a⟩ + ⟨b, g - p_b⟩ avoids cancelling large terms
    let da: f64 = ot.rows.iter().zip(&ot.f).zip(&sa.potential).map(|((&i, f), p)| a[i] * (f - p)).sum();
    let db: f64 = ot.cols.iter().zip(&ot.g).zip(&sb.potential).map(|((&j, g), p)| b[j] * (g - p)).sum();
    let corr_a = 0.5 * (sa.value - 2.0 * dot_support(a, &sa.support, &sa.potential));
    let corr_b = 0.5 * (sb.value - 2.0 * dot_support(b, &sb.support, &sb.potential));
    warm.ot = Some((ot.f, ot.g));
    warm.self_a = Some(sa.potential);
    warm.self_b = Some(sb.potential);
    Ok(da + db - corr_a - corr_b)
}

/// Runs `solve` from `init`, and again from a cold start if the warm start does not converge.
fn retry_cold<I, T>(init: Option<I>, solve: impl Fn(Option<I>) -> Result<T>) -> Result<T> {
    match init {
        Some(init) => match solve(Some(init)) {
            Err(Error::NonConvergence { iterations, residual }) => {
                log::debug!("warm start stalled after {iterations} iterations at {residual:.3e}; restarting cold");
                solve(None)
            }
            other => other,
        },
        None => solve(None),
    }
}

fn dot_support(a: &[f64], support: &[usize], p: &[f64]) -> f64 {
    support.iter().zip(p).map(|(&i, p)| a[i] * p).sum()
}

pub(crate) fn masses_for(rho: &Density, cost: &CostTable) -> Result<Vec<f64>> {
    if rho.mesh().checksum() != cost.checksum() {
        return Err(Error::ChecksumMismatch { expected: cost.checksum().to_owned(), found: rho.mesh().checksum().to_owned() });
    }
    let mut m = rho.masses();
    let total: f64 = m.iter().sum();
    m.iter_mut().for_each(|v| *v /= total);
    Ok(m)
}

/// `√S_ε(ρ, σ)` when debiased, else `√OT_ε(ρ, σ)`.
pub fn wasserstein(rho: &Density, sigma: &Density, cost: &CostTable, cfg: &SinkhornConfig) -> Result<f64> {
    same_mesh(rho.mesh(), sigma.mesh())?;
    let (a, b) = (masses_for(rho, cost)?, masses_for(sigma, cost)?);
    Ok(sinkhorn_divergence(&a, &b, cost, cfg)?.max(0.0).sqrt())
}

/// Two-point extrapolation of the squared divergence to ε = 0: `2 S_{ε/2} - S_ε`.
pub fn extrapolated_divergence(a: &[f64], b: &[f64], cost: &CostTable, cfg: &SinkhornConfig) -> Result<f64> {
    extrapolated_divergence_with(a, b, cost, cfg, &mut Default::default())
}

/// [`extrapolated_divergence`] with one warm start per ε level.
pub fn extrapolated_divergence_with(
    a: &[f64],
    b: &[f64],
    cost: &CostTable,
    cfg: &SinkhornConfig,
    warm: &mut [WarmStart; 2],
) -> Result<f64> {
    let coarse = sinkhorn_divergence_with(a, b, cost, cfg, &mut warm[0])?;
    if warm[1].ot.is_none() {
        // the coarse potentials are a better start than the self potentials
        warm[1].ot = warm[0].ot.clone();
    }
    let fine = sinkhorn_divergence_with(a, b, cost, &cfg.with_epsilon(0.5 * cfg.epsilon), &mut warm[1])?;
    Ok((2.0 * fine - coarse).max(0.0))
}

/// ε-extrapolated distance `√(2 S_{ε/2} - S_ε)`.
pub fn wasserstein_extrapolated(rho: &Density, sigma: &Density, cost: &CostTable, cfg: &SinkhornConfig) -> Result<f64> {
    same_mesh(rho.mesh(), sigma.mesh())?;
    let (a, b) = (masses_for(rho, cost)?, masses_for(sigma, cost)?);
    Ok(extrapolated_divergence(&a, &b, cost, cfg)?.sqrt())
}

/// Central-difference metric speed `W(μ_{i-1}, μ_{i+1}) / (t_{i+1} - t_{i-1})` with the ε-extrapolated distance.
pub fn metric_speed(curve: &Curve, t_index: usize, cost: &CostTable, cfg: &SinkhornConfig) -> Result<f64> {
    if t_index == 0 || t_index + 1 >= curve.len() {
        return Err(Error::validation(format!("index {t_index} lacks a neighbour on both sides")));
    }
    let d = curve.densities();
    let w = wasserstein_extrapolated(&d[t_index - 1], &d[t_index + 1], cost, cfg)?;
    Ok(w / (curve.times()[t_index + 1] - curve.times()[t_index - 1]))
}

/// Infinitesimal Wasserstein length of a signed perturbation `η` of zero mass
/// at `ρ`: `‖η‖² = Σ_T area_T ρ̄_T |∇_T ψ|²` where `-div(ρ∇ψ) = η` weakly with
/// zero flux, so that `W(ρ, ρ + sη) = s‖η‖ + o(s)`. Needs `ρ > 0` on every triangle.
pub fn tangent_norm(rho: &Density, eta: &[f64]) -> Result<f64> {
    let mesh = rho.mesh();
    if eta.len() != mesh.num_vertices() {
        return Err(Error::validation("perturbation length does not match the mesh"));
    }
    let b: Vec<f64> = eta.iter().zip(mesh.lumped_mass()).map(|(e, m)| e * m).collect();
    let scale: f64 = b.iter().map(|v| v.abs()).sum();
    let total: f64 = b.iter().sum();
    if total.abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::validation(format!("perturbation carries mass {total:.3e}")));
    }
    let drift = total / b.len() as f64;
    let b: Vec<f64> = b.iter().map(|v| v - drift).collect();
    let psi = crate::heat::weighted_poisson(mesh, &rho.triangle_means(), &b)?;
    Ok(psi.iter().zip(&b).map(|(p, v)| p * v).sum::<f64>().max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> CostTable {
        let pts: Vec<Point> = (0..n).map(|i| [i as f64 / (n - 1) as f64, 0.0]).collect();
        CostTable::from_points(&pts).unwrap()
    }

    #[test]
    fn two_diracs() {
        let cost = line(5);
        let mut a = vec![0.0; 5];
        let mut b = vec![0.0; 5];
        a[0] = 1.0;
        b[4] = 1.0;
        let cfg = SinkhornConfig { epsilon: 1e-3, ..Default::default() };
        let s = sinkhorn_divergence(&a, &b, &cost, &cfg).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn divergence_vanishes_on_diagonal() {
        let cost = line(7);
        let a = vec![0.1, 0.2, 0.05, 0.15, 0.2, 0.1, 0.2];
        let cfg = SinkhornConfig { epsilon: 1e-2, ..Default::default() };
        assert!(sinkhorn_divergence(&a, &a, &cost, &cfg).unwrap().abs() < 1e-9);
    }

    #[test]
    fn warm_and_cold_agree() {
        let cost = line(6);
        let a = vec![0.3, 0.1, 0.1, 0.2, 0.2, 0.1];
        let b = vec![0.05, 0.25, 0.2, 0.1, 0.1, 0.3];
        let cfg = SinkhornConfig { epsilon: 5e-3, ..Default::default() };
        let cold = entropic_ot(&a, &b, &cost, &cfg, None).unwrap();
        let warm = entropic_ot(&a, &b, &cost, &cfg, Some((vec![0.0; 6], vec![0.0; 6]))).unwrap();
        assert!((cold.value - warm.value).abs() < 1e-9);
    }

    #[test]
    fn cost_file_roundtrip() {
        let cost = line(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        cost.write(&path).unwrap();
        let back = CostTable::read(&path, cost.checksum()).unwrap();
        assert_eq!(back.data, cost.data);
        assert!(matches!(CostTable::read(&path, "0000000000000000"), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn rejects_bad_config() {
        let cost = line(3);
        let a = vec![0.5, 0.5, 0.0];
        let cfg = SinkhornConfig { epsilon: 0.0, ..Default::default() };
        assert!(sinkhorn_divergence(&a, &a, &cost, &cfg).is_err());
    }
}
