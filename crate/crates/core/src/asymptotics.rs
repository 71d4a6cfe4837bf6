//! Capacity and dispersion of measurement-dependent channels, and the
//! second-order resolution approximations built from them.

use std::fmt;
use std::str::FromStr;

use crate::channel::ChannelFamily;
use crate::error::{invalid, Error, Result};
use crate::info::{density_table, stats, InfoStats};
use crate::normal::gaussian_quantile;
use crate::optimize::{maximize_unit, MaximizerSettings};

pub const DEFAULT_GRID_STEP: f64 = 1e-4;
pub const DEFAULT_REFINE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    pub c: f64,
    pub maximizers: Vec<f64>,
    pub v_low: f64,
    pub v_high: f64,
    pub v_at: Vec<f64>,
    pub t_at: Vec<f64>,
}

impl CapacityResult {
    /// The maximizer whose variance is selected for level `eps`.
    pub fn maximizer_for_eps(&self, eps: f64) -> f64 {
        let target = if eps < 0.5 { self.v_low } else { self.v_high };
        let i = self.v_at.iter().position(|&v| v == target).unwrap_or(0);
        self.maximizers[i]
    }
}

/// Moments of `ι_{q,q}` under the channel at query size `q`.
pub fn stats_at(family: &ChannelFamily, q: f64) -> Result<InfoStats> {
    stats(&density_table(q, &family.matrix_at(q)?)?)
}

/// `d/dq E[ι_{q,q}]`. The score terms vanish, leaving `Σ ∂_q P(x,y) · ι(x;y)`.
pub fn capacity_slope(family: &ChannelFamily, q: f64) -> Result<f64> {
    let table = density_table(q, &family.matrix_at(q)?)?;
    let px = [1.0 - q, q];
    let dpx = [-1.0, 1.0];
    let mut acc = 0.0;
    for x in 0..2 {
        for y in 0..table.output_size() {
            let w = table.channel.prob(x, y);
            let dw = dpx[x] * w + px[x] * family.prob_slope(x, y);
            if dw != 0.0 && table.is_used(x, y) {
                acc += dw * table.value(x, y);
            }
        }
    }
    Ok(acc)
}

pub fn capacity(family: &ChannelFamily, grid_step: f64, refine_tol: f64) -> Result<CapacityResult> {
    let settings = MaximizerSettings::new(grid_step, refine_tol)?;
    let objective = |q: f64| stats_at(family, q).map(|s| s.c).unwrap_or(f64::NEG_INFINITY);
    let slope = |q: f64| capacity_slope(family, q).unwrap_or(0.0);
    let peaks = maximize_unit(objective, Some(slope), settings);
    if peaks.is_empty() {
        return Err(invalid("capacity objective has no finite value"));
    }
    let c = peaks.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let maximizers: Vec<f64> = peaks.iter().map(|p| p.0).collect();
    let moments = maximizers.iter().map(|&q| stats_at(family, q)).collect::<Result<Vec<_>>>()?;
    let v_at: Vec<f64> = moments.iter().map(|m| m.v).collect();
    let t_at: Vec<f64> = moments.iter().map(|m| m.t).collect();
    Ok(CapacityResult {
        c,
        v_low: v_at.iter().cloned().fold(f64::INFINITY, f64::min),
        v_high: v_at.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        maximizers,
        v_at,
        t_at,
    })
}

pub fn capacity_default(family: &ChannelFamily) -> Result<CapacityResult> {
    capacity(family, DEFAULT_GRID_STEP, DEFAULT_REFINE_TOL)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("eps must lie in (0,1), got {eps}")))
    }
}

/// `V_eps`: smallest variance over maximizers below 1/2, largest from 1/2 on.
pub fn dispersion_for_eps(result: &CapacityResult, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(if eps < 0.5 { result.v_low } else { result.v_high })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThirdOrder {
    #[default]
    None,
    MinusHalfLog,
    PlusLog,
}

impl ThirdOrder {
    pub fn term(self, n: usize) -> f64 {
        let ln = (n as f64).ln();
        match self {
            Self::None => 0.0,
            Self::MinusHalfLog => -0.5 * ln,
            Self::PlusLog => ln,
        }
    }
}

impl fmt::Display for ThirdOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::MinusHalfLog => "minus-half-log",
            Self::PlusLog => "plus-log",
        })
    }
}

impl FromStr for ThirdOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "minus-half-log" => Ok(Self::MinusHalfLog),
            "plus-log" => Ok(Self::PlusLog),
            other => Err(Error::Parse(format!("unknown third-order term '{other}'"))),
        }
    }
}

fn check_sizes(n: usize, d: usize) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(invalid("n and d must be positive"));
    }
    Ok(())
}

/// `-log δ ≈ (nC + √(nV) Φ⁻¹(eps) + r(n)) / d`.
pub fn second_order_resolution(c: f64, v: f64, n: usize, d: usize, eps: f64, third: ThirdOrder) -> Result<f64> {
    check_sizes(n, d)?;
    check_eps(eps)?;
    let nf = n as f64;
    Ok((nf * c + (nf * v).sqrt() * gaussian_quantile(eps)? + third.term(n)) / d as f64)
}

/// Searching each of the `d` coordinates separately with `n/d` queries at level `eps/d`.
pub fn separate_search_resolution(c: f64, v_eps_over_d: f64, n: usize, d: usize, eps: f64) -> Result<f64> {
    check_sizes(n, d)?;
    check_eps(eps)?;
    if d < 2 {
        return Err(invalid("separate search needs d >= 2"));
    }
    let (nf, df) = (n as f64, d as f64);
    Ok(nf * c / df + (nf * v_eps_over_d / df).sqrt() * gaussian_quantile(eps / df)?)
}

/// Capacity of the channel frozen at full query size, optimized over the input law.
pub fn mi_capacity(family: &ChannelFamily) -> Result<CapacityResult> {
    capacity_default(&family.measurement_independent())
}

/// Second-order `-log δ` for the measurement-independent counterpart of `family`.
pub fn mi_counterpart(family: &ChannelFamily, n: usize, d: usize, eps: f64) -> Result<f64> {
    let cap = mi_capacity(family)?;
    second_order_resolution(cap.c, dispersion_for_eps(&cap, eps)?, n, d, eps, ThirdOrder::None)
}

/// `lC / (d(1 - eps))`.
pub fn adaptive_resolution_bound(c: f64, l: f64, d: usize, eps: f64) -> Result<f64> {
    if !(l > 0.0) || d == 0 {
        return Err(invalid("l and d must be positive"));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(invalid(format!("eps must lie in [0,1), got {eps}")));
    }
    Ok(l * c / (d as f64 * (1.0 - eps)))
}

/// Lower bound on the adaptive-minus-non-adaptive `-log δ`.
pub fn adaptivity_gain_lower(c: f64, v_eps: f64, n: usize, d: usize, eps: f64) -> Result<f64> {
    check_sizes(n, d)?;
    check_eps(eps)?;
    let nf = n as f64;
    Ok((nf * c * eps / (1.0 - eps) - (nf * v_eps).sqrt() * gaussian_quantile(eps)?) / d as f64)
}
