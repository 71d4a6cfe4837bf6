//! One-dimensional maximization on [0,1]: grid scan, golden-section refinement
//! and an optional bisection polish on the derivative.

use rayon::prelude::*;

use crate::error::{invalid, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    let mut best = (x1, f1);
    for x in [lo, 0.5 * (lo + hi), hi, x2] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Root of a decreasing `slope` on `[lo, hi]` given `slope(lo) > 0 > slope(hi)`.
fn bisect_slope<G: Fn(f64) -> f64>(slope: G, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy)]
pub struct MaximizerSettings {
    pub grid_step: f64,
    pub refine_tol: f64,
    /// Candidates within this gap of the best value are all reported.
    pub value_gap: f64,
    /// Reported maximizers closer than this are merged.
    pub min_spacing: f64,
}

impl MaximizerSettings {
    pub fn new(grid_step: f64, refine_tol: f64) -> Result<Self> {
        if !(grid_step > 0.0 && grid_step <= 1e-3) {
            return Err(invalid(format!("grid step must lie in (0, 1e-3], got {grid_step}")));
        }
        if !(refine_tol > 0.0) {
            return Err(invalid("refinement tolerance must be positive"));
        }
        Ok(Self { grid_step, refine_tol, value_gap: 1e-9, min_spacing: (10.0 * refine_tol).max(1e-6) })
    }
}

/// All global maximizers of `f` on `[0,1]` with their values, ascending in `x`.
pub fn maximize_unit<F, G>(f: F, slope: Option<G>, settings: MaximizerSettings) -> Vec<(f64, f64)>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64,
{
    let k = (1.0 / settings.grid_step).ceil() as usize;
    let grid: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
    let values: Vec<f64> = grid.par_iter().map(|&x| f(x)).collect();

    let mut refined = Vec::new();
    for i in 0..=k {
        let v = values[i];
        let left = if i > 0 { values[i - 1] } else { f64::NEG_INFINITY };
        let right = if i < k { values[i + 1] } else { f64::NEG_INFINITY };
        // First point of a plateau only.
        if !(v >= right && v > left) {
            continue;
        }
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(k)];
        let (mut x, mut fx) = golden_max(&f, lo, hi, settings.refine_tol);
        if let Some(s) = slope.as_ref() {
            if lo < x && x < hi && s(lo) > 0.0 && s(hi) < 0.0 {
                let xp = bisect_slope(s, lo, hi);
                let fp = f(xp);
                if fp >= fx - 1e-15 {
                    x = xp;
                    fx = fp;
                }
            }
        }
        if v > fx {
            x = grid[i];
            fx = v;
        }
        refined.push((x, fx));
    }

    let best = refined.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<(f64, f64)> = Vec::new();
    refined.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (x, fx) in refined {
        if fx < best - settings.value_gap {
            continue;
        }
        match out.last_mut() {
            Some(last) if x - last.0 <= settings.min_spacing => {
                if fx > last.1 {
                    *last = (x, fx);
                }
            }
            _ => out.push((x, fx)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10);
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(fx, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reports_both_peaks_of_symmetric_function() {
        let f = |x: f64| -((x - 0.2) * (x - 0.8)).powi(2);
        let s = |x: f64| -2.0 * (x - 0.2) * (x - 0.8) * (2.0 * x - 1.0);
        let settings = MaximizerSettings::new(1e-3, 1e-10).unwrap();
        let peaks = maximize_unit(f, Some(s), settings);
        assert_eq!(peaks.len(), 2);
        assert_abs_diff_eq!(peaks[0].0 + peaks[1].0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn endpoint_maximum() {
        let settings = MaximizerSettings::new(1e-3, 1e-10).unwrap();
        let peaks = maximize_unit(|x| x, None::<fn(f64) -> f64>, settings);
        assert_eq!(peaks, vec![(1.0, 1.0)]);
    }

    #[test]
    fn flat_function_has_one_maximizer() {
        let settings = MaximizerSettings::new(1e-3, 1e-10).unwrap();
        let peaks = maximize_unit(|_| 0.0, None::<fn(f64) -> f64>, settings);
        assert_eq!(peaks.len(), 1);
    }

    #[test]
    fn rejects_coarse_grid() {
        assert!(MaximizerSettings::new(0.01, 1e-10).is_err());
    }
}
