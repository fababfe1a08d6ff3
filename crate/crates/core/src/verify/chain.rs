//! Discrete entropy balance along a curve with momenta.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::log_derivative_pairing;
use crate::{Curve, Density};

/// Both sides of the entropy chain rule along a sampled curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleBalance {
    /// `(H_{i+1} - H_i)/Δt_i` per interval.
    pub entropy_rates: Vec<f64>,
    /// `Σ_T area_T ∇_T log ρ̄_i · F_i,T` at the interval mean `ρ̄_i`.
    pub pairings: Vec<f64>,
    /// `max_i |rate_i - pairing_i| / |pairing_i|`.
    pub max_interval_defect: f64,
    /// `H(μ_T) - H(μ_0)`.
    pub delta_h: f64,
    /// `Σ_i Δt_i pairing_i`.
    pub pairing_integral: f64,
    /// `|ΔH - Σ Δt pairing| / Σ Δt |pairing|`.
    pub balance_defect: f64,
    /// Trapezoidal `∫ℐ dt`.
    pub fisher_integral: f64,
    /// `|H(μ_0) - H(μ_T) - ∫ℐ| / ∫ℐ`, the dissipation balance of a gradient flow.
    pub dissipation_defect: f64,
}

/// Compares entropy increments with the momentum pairing on every interval.
/// Densities must be positive wherever the pairing is taken.
pub fn chain_rule_balance(curve: &Curve) -> Result<ChainRuleBalance> {
    let momenta = curve.momenta().ok_or_else(|| Error::validation("the chain rule needs a curve with momenta"))?;
    let times = curve.times();
    let h = curve.entropies();
    let fishers = curve.fishers();
    let mut entropy_rates = Vec::with_capacity(momenta.len());
    let mut pairings = Vec::with_capacity(momenta.len());
    let mut max_interval_defect: f64 = 0.0;
    let (mut pairing_integral, mut pairing_mass, mut fisher_integral) = (0.0, 0.0, 0.0);
    for (i, field) in momenta.iter().enumerate() {
        let dt = times[i + 1] - times[i];
        let mid = Density::from_trusted(curve.mesh().clone(), curve.interval_density(i));
        let p = log_derivative_pairing(&mid, field)?;
        let rate = (h[i + 1] - h[i]) / dt;
        let gap = (rate - p).abs();
        let defect = if gap == 0.0 { 0.0 } else { gap / p.abs() };
        max_interval_defect = max_interval_defect.max(defect);
        entropy_rates.push(rate);
        pairings.push(p);
        pairing_integral += p * dt;
        pairing_mass += p.abs() * dt;
        fisher_integral += 0.5 * (fishers[i] + fishers[i + 1]) * dt;
    }
    let delta_h = h[h.len() - 1] - h[0];
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    Ok(ChainRuleBalance {
        entropy_rates,
        pairings,
        max_interval_defect,
        delta_h,
        pairing_integral,
        balance_defect: ratio((delta_h - pairing_integral).abs(), pairing_mass),
        fisher_integral,
        dissipation_defect: ratio((-delta_h - fisher_integral).abs(), fisher_integral),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mesh::build_mesh;
    use crate::DomainSpec;

    #[test]
    fn constant_curve_balances_trivially() {
        let mesh = Arc::new(build_mesh(&DomainSpec::unit_square(0.2)).unwrap());
        let curve = Curve::constant(&Density::uniform(mesh), vec![0.0, 0.1, 0.2]).unwrap();
        let b = chain_rule_balance(&curve).unwrap();
        assert_eq!(b.max_interval_defect, 0.0);
        assert_eq!(b.balance_defect, 0.0);
        assert_eq!(b.dissipation_defect, 0.0);
    }
}
