//! Finite-length achievability and converse bounds.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelFamily;
use crate::error::{invalid, Result};
use crate::info::{density_table, InfoDensityTable};
use crate::search::stream_rng;
use crate::stats::Z95;
use crate::sumdist::{codeword_score_law, sum_distribution, DEFAULT_MERGE_TOL, DEFAULT_SUPPORT_CAP};

/// `Pr{ι_p(X̄ⁿ; yⁿ) ≥ ι_p(xⁿ; yⁿ)}` for an independent Bernoulli(p) codeword `X̄ⁿ`.
pub fn inner_probability(table: &InfoDensityTable, xs: &[usize], ys: &[usize]) -> Result<f64> {
    let law = codeword_score_law(table, ys, DEFAULT_SUPPORT_CAP)?;
    Ok(law.prob_at_least(codeword_score(table, xs, ys)))
}

/// `Σ_t ι(x_t; y_t)` evaluated through lattice keys, so it compares exactly with score laws.
pub fn codeword_score(table: &InfoDensityTable, xs: &[usize], ys: &[usize]) -> f64 {
    let gens = table.generators();
    let mut key = vec![0i32; gens.0.len()];
    for (&x, &y) in xs.iter().zip(ys) {
        match table.key(x, y) {
            Some(k) => key.iter_mut().zip(k).for_each(|(a, b)| *a += b),
            None => return table.value(x, y),
        }
    }
    gens.value(&key)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AchievabilityReport {
    pub n: usize,
    pub d: usize,
    pub m: u128,
    pub p: f64,
    pub eta: f64,
    /// Continuity constant `c(p)` at radius `η`.
    pub continuity: f64,
    /// `4n exp(−2 M^d η²)`.
    pub atypical_term: f64,
    /// `exp(nηc(p)) Ê[min{1, M^d Pr{…}}]`.
    pub union_term: f64,
    pub eps_upper: f64,
    /// 95% Monte Carlo half-width of `eps_upper`.
    pub half_width: f64,
    pub clipped: bool,
    pub samples: usize,
}

/// Random-coding union bound on the excess-resolution probability of the
/// non-adaptive procedure with `M` cells per axis and codebook parameter `p`.
pub fn achievability_bound(
    family: &ChannelFamily,
    n: usize,
    d: usize,
    m: u128,
    p: f64,
    eta: Option<f64>,
    samples: usize,
    seed: u64,
) -> Result<AchievabilityReport> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("p must lie in (0,1), got {p}")));
    }
    if n == 0 || d == 0 || m == 0 {
        return Err(invalid("n, d and M must be positive"));
    }
    if samples < 1000 {
        return Err(invalid(format!("need at least 1000 Monte Carlo samples, got {samples}")));
    }
    let log_cells = d as f64 * (m as f64).ln();
    let cells = log_cells.exp();
    let eta = eta.unwrap_or_else(|| (log_cells / (2.0 * cells)).sqrt());
    let continuity = if eta == 0.0 { 0.0 } else { family.continuity_constant(p, eta)? };
    let nf = n as f64;
    let atypical_term = 4.0 * nf * (-2.0 * cells * eta * eta).exp();
    let change_of_measure = (nf * eta * continuity).exp();

    let table = density_table(p, &family.matrix_at(p)?)?;
    let cache: std::sync::Mutex<HashMap<Vec<u32>, std::sync::Arc<crate::sumdist::LatticeLaw>>> = Default::default();
    let values = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream_rng(seed, i);
            let xs: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<f64>() < p)).collect();
            let ys: Vec<usize> = xs.iter().map(|&x| family.sample_output(p, x, &mut rng)).collect();
            let mut counts = vec![0u32; table.output_size()];
            ys.iter().for_each(|&y| counts[y] += 1);
            let cached = cache.lock().expect("cache lock").get(&counts).cloned();
            let law = match cached {
                Some(l) => l,
                None => {
                    let l = std::sync::Arc::new(codeword_score_law(&table, &ys, DEFAULT_SUPPORT_CAP)?);
                    cache.lock().expect("cache lock").insert(counts, l.clone());
                    l
                }
            };
            let tail = law.prob_at_least(codeword_score(&table, &xs, &ys));
            Ok((cells * tail).min(1.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / samples as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
    let union_term = change_of_measure * mean;
    let eps_upper = atypical_term + union_term;
    Ok(AchievabilityReport {
        n,
        d,
        m,
        p,
        eta,
        continuity,
        atypical_term,
        union_term,
        eps_upper,
        half_width: change_of_measure * Z95 * (var / samples as f64).sqrt(),
        clipped: eps_upper > 1.0,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseReport {
    pub n: usize,
    pub d: usize,
    pub eps: f64,
    pub beta: f64,
    pub kappa: f64,
    /// `ε + 2dβ + κ`.
    pub level: f64,
    pub best_q: f64,
    pub best_quantile: f64,
    /// Upper bound on `−log δ`.
    pub neg_log_delta_upper: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub q_points: usize,
    pub restriction: &'static str,
}

/// `{0.01, 0.02, …, 0.99}` together with `extra`.
pub fn default_q_grid(extra: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    grid.extend(extra.iter().copied().filter(|q| (0.0..=1.0).contains(q)));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Converse bound on `−log δ` over equal-size i.i.d. query laws from `q_grid`.
/// `beta` and `kappa` default to `dβ = κ = 1/√n`.
pub fn converse_bound(
    family: &ChannelFamily,
    n: usize,
    d: usize,
    eps: f64,
    q_grid: &[f64],
    beta: Option<f64>,
    kappa: Option<f64>,
) -> Result<ConverseReport> {
    if n == 0 || d == 0 {
        return Err(invalid("n and d must be positive"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("eps must lie in (0,1), got {eps}")));
    }
    if q_grid.is_empty() {
        return Err(invalid("empty query-size grid"));
    }
    let root = (n as f64).sqrt();
    let beta = beta.unwrap_or(1.0 / (d as f64 * root));
    let kappa = kappa.unwrap_or(1.0 / root);
    if !(beta > 0.0 && kappa > 0.0) {
        return Err(invalid("β and κ must be positive"));
    }
    let level = eps + 2.0 * d as f64 * beta + kappa;
    if level >= 1.0 {
        return Err(invalid(format!("quantile level ε + 2dβ + κ = {level} is not below 1")));
    }
    let quantiles = q_grid
        .par_iter()
        .map(|&q| -> Result<(f64, f64)> {
            let table = density_table(q, &family.matrix_at(q)?)?;
            Ok((q, sum_distribution(&table, n, DEFAULT_MERGE_TOL)?.quantile(level)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best_q, best_quantile) =
        quantiles.iter().copied().fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let df = d as f64;
    let neg_log_delta_upper = (-df * beta.ln() - kappa.ln() + best_quantile) / df;
    Ok(ConverseReport {
        n,
        d,
        eps,
        beta,
        kappa,
        level,
        best_q,
        best_quantile,
        neg_log_delta_upper,
        q_min: q_grid.iter().copied().fold(f64::INFINITY, f64::min),
        q_max: q_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        q_points: q_grid.len(),
        restriction: "equal-size i.i.d. queries",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn single_cell_is_vacuous() {
        let fam = ChannelFamily::bsc(0.3).unwrap();
        let r = achievability_bound(&fam, 10, 1, 1, 0.5, None, 1000, 1).unwrap();
        assert_eq!(r.eta, 0.0);
        assert!(r.eps_upper >= 1.0);
        assert!(r.clipped);
    }

    #[test]
    fn default_eta() {
        let fam = ChannelFamily::bsc(0.4).unwrap();
        let r = achievability_bound(&fam, 20, 1, 1000, 0.45, None, 1000, 2).unwrap();
        assert_abs_diff_eq!(r.eta, (1000f64.ln() / 2000.0).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.atypical_term, 80.0 / 1000.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_converse() {
        let fam = ChannelFamily::bsc(0.0).unwrap();
        let n = 64;
        let r = converse_bound(&fam, n, 1, 0.1, &[0.5], None, None).unwrap();
        assert_abs_diff_eq!(r.best_quantile, n as f64 * LN_2, epsilon = 1e-9);
        assert_abs_diff_eq!(r.neg_log_delta_upper, n as f64 * LN_2 + (n as f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn converse_rejects_high_level() {
        let fam = ChannelFamily::bsc(0.4).unwrap();
        assert!(converse_bound(&fam, 16, 1, 0.3, &[0.5], None, None).is_err());
    }

    #[test]
    fn q_grid_includes_extras() {
        let g = default_q_grid(&[0.4567, 0.5]);
        assert_eq!(g.len(), 100);
        assert!(g.contains(&0.4567));
    }
}
