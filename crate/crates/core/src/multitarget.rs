//! Information densities for simultaneous search of several targets, where the
//! oracle answers the OR of the targets' membership bits.
//!
//! For a tuple of `t` codewords and a nonempty set `J ⊆ [t]` of positions whose
//! codewords are unknown, `ι_J = log P(y | x_[t]) − log P(y | x_{[t]∖J})`. The
//! denominator marginalizes the unknown bits: it equals `W(y|1)` if a known bit
//! is set and otherwise mixes `W(y|0)` with weight `(1−p)^{|J|}`.

use crate::asymptotics::ThirdOrder;
use crate::channel::ChannelFamily;
use crate::error::{invalid, Error, Result};
use crate::info::{moments, InfoStats};
use crate::optimize::{maximize_unit, MaximizerSettings};

/// `P(y | all known bits are 0, m unknown Bernoulli(p) bits)`.
pub fn mixture_output(family: &ChannelFamily, p: f64, m: usize, y: usize) -> f64 {
    let all_zero = (1.0 - p).powi(m as i32);
    (1.0 - all_zero) * family.prob(p, 1, y) + all_zero * family.prob(p, 0, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMoments {
    /// Bit `j` set when position `j` is unknown.
    pub mask: u32,
    pub size: usize,
    pub stats: InfoStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleMoments {
    pub p: f64,
    pub t: usize,
    /// Moments of `ι_[t]`.
    pub full: InfoStats,
    /// Moments of `ι_J` for every nonempty proper `J`.
    pub subsets: Vec<SubsetMoments>,
}

struct JointCell {
    prob: f64,
    dprob: f64,
    x: u32,
    y: usize,
}

fn joint_cells(family: &ChannelFamily, p: f64, t: usize) -> Vec<JointCell> {
    let mut cells = Vec::new();
    for x in 0u32..(1 << t) {
        let ones = x.count_ones() as i32;
        let zeros = t as i32 - ones;
        let px = p.powi(ones) * (1.0 - p).powi(zeros);
        // d/dp of p^ones (1-p)^zeros.
        let dpx = if ones > 0 { ones as f64 * p.powi(ones - 1) * (1.0 - p).powi(zeros) } else { 0.0 }
            - if zeros > 0 { zeros as f64 * p.powi(ones) * (1.0 - p).powi(zeros - 1) } else { 0.0 };
        let z = usize::from(x != 0);
        for y in 0..family.output_size() {
            let w = family.prob(p, z, y);
            cells.push(JointCell { prob: px * w, dprob: dpx * w + px * family.prob_slope(z, y), x, y });
        }
    }
    cells
}

fn density(family: &ChannelFamily, p: f64, t: usize, unknown: u32, x: u32, y: usize) -> f64 {
    let z = usize::from(x != 0);
    let num = family.prob(p, z, y);
    let known = x & !unknown & ((1u32 << t) - 1);
    let den = if known != 0 {
        family.prob(p, 1, y)
    } else {
        mixture_output(family, p, unknown.count_ones() as usize, y)
    };
    num.ln() - den.ln()
}

fn subset_stats(family: &ChannelFamily, cells: &[JointCell], p: f64, t: usize, unknown: u32) -> InfoStats {
    let used: Vec<(f64, f64)> = cells
        .iter()
        .filter(|c| c.prob > 0.0)
        .map(|c| (c.prob, density(family, p, t, unknown, c.x, c.y)))
        .collect();
    moments(used.iter().copied())
}

pub fn tuple_moments(family: &ChannelFamily, p: f64, t: usize) -> Result<TupleMoments> {
    if t == 0 || t > 16 {
        return Err(invalid(format!("tuple size must lie in 1..=16, got {t}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("p must lie in [0,1], got {p}")));
    }
    let cells = joint_cells(family, p, t);
    let all = (1u32 << t) - 1;
    let full = subset_stats(family, &cells, p, t, all);
    let subsets = (1..all)
        .map(|mask| SubsetMoments {
            mask,
            size: mask.count_ones() as usize,
            stats: subset_stats(family, &cells, p, t, mask),
        })
        .collect();
    Ok(TupleMoments { p, t, full, subsets })
}

/// `C_[t](p,t)` and its derivative in `p`.
fn full_rate_and_slope(family: &ChannelFamily, p: f64, t: usize) -> (f64, f64) {
    let cells = joint_cells(family, p, t);
    let all = (1u32 << t) - 1;
    let mut c = 0.0;
    let mut dc = 0.0;
    for cell in &cells {
        if cell.prob > 0.0 {
            let v = density(family, p, t, all, cell.x, cell.y);
            c += cell.prob * v;
            dc += cell.dprob * v;
        }
    }
    (c, dc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTargetStats {
    pub k: usize,
    pub p_star: f64,
    pub t_star: usize,
    /// `min_t C_[t](p*,t)/t`.
    pub rate: f64,
    /// Moments at `p*` for every `t ∈ [k]`.
    pub at_optimum: Vec<TupleMoments>,
    /// `C_J/|J| > C_[t*]/t*` for every nonempty proper `J ⊂ [t*]`.
    pub certificate: bool,
}

impl MultiTargetStats {
    pub fn optimum(&self) -> &TupleMoments {
        &self.at_optimum[self.t_star - 1]
    }
}

const TIE_TOL: f64 = 1e-9;

pub fn multi_target_optimize(family: &ChannelFamily, k: usize, grid_step: f64) -> Result<MultiTargetStats> {
    if k == 0 || k > 8 {
        return Err(invalid(format!("k must lie in 1..=8, got {k}")));
    }
    let settings = MaximizerSettings::new(grid_step, crate::asymptotics::DEFAULT_REFINE_TOL)?;
    let argmin = |p: f64| -> (usize, f64, f64) {
        (1..=k)
            .map(|t| {
                let (c, dc) = full_rate_and_slope(family, p, t);
                (t, c / t as f64, dc / t as f64)
            })
            .fold((0, f64::INFINITY, 0.0), |best, cur| if cur.1 < best.1 { cur } else { best })
    };
    let peaks = maximize_unit(|p| argmin(p).1, Some(|p| argmin(p).2), settings);
    if peaks.len() != 1 {
        return Err(Error::NonUniqueOptimizer(format!("{} maximizing values of p", peaks.len())));
    }
    let p_star = peaks[0].0;
    let rates: Vec<f64> = (1..=k).map(|t| full_rate_and_slope(family, p_star, t).0 / t as f64).collect();
    let (t_star, rate, _) = argmin(p_star);
    let ties = rates.iter().filter(|&&r| r <= rate + TIE_TOL).count();
    if ties > 1 {
        return Err(Error::NonUniqueOptimizer(format!("{ties} values of t attain the minimum at p={p_star}")));
    }
    let at_optimum = (1..=k).map(|t| tuple_moments(family, p_star, t)).collect::<Result<Vec<_>>>()?;
    let opt = &at_optimum[t_star - 1];
    let per_symbol = opt.full.c / t_star as f64;
    let certificate = opt.subsets.iter().all(|s| s.stats.c / s.size as f64 > per_symbol);
    Ok(MultiTargetStats { k, p_star, t_star, rate, at_optimum, certificate })
}

/// `(nC_[t*] + √(nV_[t*]) Φ⁻¹(eps) + r(n)) / (d t*)`.
pub fn multi_target_resolution(
    stats: &MultiTargetStats,
    n: usize,
    d: usize,
    eps: f64,
    third: ThirdOrder,
) -> Result<f64> {
    let opt = stats.optimum();
    crate::asymptotics::second_order_resolution(opt.full.c, opt.full.v, n, d * stats.t_star, eps, third)
}
