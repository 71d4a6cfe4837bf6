//! Resolution choices used by the numerical experiments.

use crate::adaptive::choose_lambda;
use crate::asymptotics::{dispersion_for_eps, CapacityResult};
use crate::error::{invalid, Result};
use crate::multitarget::MultiTargetStats;
use crate::normal::gaussian_quantile;

/// Nearest integer `M ≥ 2` to `exp(log_m)`.
pub fn cells_from_log(log_m: f64) -> Result<u128> {
    if !log_m.is_finite() || log_m > 100.0 * std::f64::consts::LN_2 {
        return Err(invalid(format!("log M = {log_m} is out of range")));
    }
    let m = log_m.exp().round();
    if m < 2.0 {
        return Err(invalid(format!("log M = {log_m} gives fewer than two cells")));
    }
    Ok(m as u128)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub log_m: f64,
    pub m: u128,
}

/// `log M = (nC + √(nV_ε) Φ⁻¹(ε))/d`.
pub fn single_target_recipe(cap: &CapacityResult, n: usize, d: usize, eps: f64) -> Result<Recipe> {
    let v = dispersion_for_eps(cap, eps)?;
    let nf = n as f64;
    let log_m = (nf * cap.c + (nf * v).sqrt() * gaussian_quantile(eps)?) / d as f64;
    Ok(Recipe { log_m, m: cells_from_log(log_m)? })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiTargetRecipe {
    pub log_m: f64,
    pub m: u128,
    pub gamma: f64,
}

/// `log M = (nC_[t*] + √(nV_[t*]) Φ⁻¹(ε) − ½ log n)/(d t*)` with `γ = ½ log n`.
pub fn multi_target_recipe(stats: &MultiTargetStats, n: usize, d: usize, eps: f64) -> Result<MultiTargetRecipe> {
    let opt = stats.optimum();
    let nf = n as f64;
    let half_log = 0.5 * nf.ln();
    let log_m = (nf * opt.full.c + (nf * opt.full.v).sqrt() * gaussian_quantile(eps)? - half_log)
        / (d * stats.t_star) as f64;
    Ok(MultiTargetRecipe { log_m, m: cells_from_log(log_m)?, gamma: half_log })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveRecipe {
    /// Design mean stopping time `n/(1−ε)`.
    pub l_prime: f64,
    pub lambda: f64,
    pub log_m: f64,
    pub m: u128,
}

/// `log M = (nC/(1−ε) − log n)/d`, with `λ = l'C − a0` at `l' = n/(1−ε)`.
pub fn adaptive_recipe(c: f64, a0: f64, n: usize, d: usize, eps: f64) -> Result<AdaptiveRecipe> {
    if !(0.0..1.0).contains(&eps) {
        return Err(invalid(format!("ε must lie in [0,1), got {eps}")));
    }
    let nf = n as f64;
    let l_prime = nf / (1.0 - eps);
    let lambda = l_prime * c - a0;
    if !(lambda > 0.0) {
        return Err(invalid(format!("λ = {lambda} is not positive")));
    }
    let log_m = (nf * c / (1.0 - eps) - nf.ln()) / d as f64;
    Ok(AdaptiveRecipe { l_prime, lambda, log_m, m: cells_from_log(log_m)? })
}

/// Ratio between the `M` of `choose_lambda` and of `adaptive_recipe`, before rounding: `e^{a0}`.
pub fn adaptive_recipe_ratio(c: f64, a0: f64, n: usize, d: usize, eps: f64) -> Result<f64> {
    let r = adaptive_recipe(c, a0, n, d, eps)?;
    let (lambda, _) = choose_lambda(r.l_prime, c, a0, d)?;
    let chosen = (lambda - r.l_prime.ln()) / d as f64;
    Ok(((r.log_m - chosen) * d as f64).exp())
}
