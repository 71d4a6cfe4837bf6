//! Monte Carlo simulation of sequential search: every step poses a fresh random
//! query, and the search stops once some cell's accumulated information density
//! reaches the threshold `λ`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::channel::ChannelFamily;
use crate::error::{invalid, Error, Result};
use crate::info::{density_table, InfoDensityTable};
use crate::search::{bernoulli_threshold, checked_pow, gamma_inv, stream_rng, Target, TargetSampler, DEFAULT_CELL_CAP};
use crate::stats::wilson_half_width;

/// Scores within this distance below `λ` count as crossing it.
pub const STOP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub m: u128,
    pub d: usize,
    pub p: f64,
    /// Stopping threshold, nats.
    pub lambda: f64,
    pub family: ChannelFamily,
    pub seed: u64,
    pub max_steps: usize,
    pub cell_cap: u128,
}

impl AdaptiveConfig {
    pub fn new(m: u128, d: usize, p: f64, lambda: f64, family: ChannelFamily, seed: u64, max_steps: usize) -> Result<Self> {
        let cfg = Self { m, d, p, lambda, family, seed, max_steps, cell_cap: DEFAULT_CELL_CAP };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.d == 0 {
            return Err(invalid("need M ≥ 2 and d ≥ 1"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(invalid(format!("p must lie in (0,1), got {}", self.p)));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("λ must be positive, got {}", self.lambda)));
        }
        if self.max_steps == 0 {
            return Err(invalid("max steps must be positive"));
        }
        self.total_cells()?;
        self.a0()?;
        Ok(())
    }

    /// `M^d`, which must fit in 64 bits.
    pub fn total_cells(&self) -> Result<u64> {
        checked_pow(self.m, self.d)
            .and_then(|c| u64::try_from(c).ok())
            .ok_or_else(|| Error::Budget(format!("M^d = {}^{} does not fit in 64 bits", self.m, self.d)))
    }

    /// `M^d` for the per-cell engine, bounded by the cell cap.
    pub fn cells(&self) -> Result<usize> {
        match checked_pow(self.m, self.d) {
            Some(c) if c <= self.cell_cap => Ok(c as usize),
            _ => Err(Error::Budget(format!("M^d = {}^{} exceeds the cell cap {}", self.m, self.d, self.cell_cap))),
        }
    }

    pub fn table(&self) -> Result<InfoDensityTable> {
        density_table(self.p, &self.family.matrix_at(self.p)?)
    }

    /// Largest one-step information density over used cells.
    pub fn a0(&self) -> Result<f64> {
        let a0 = self.table()?.max_used_value();
        if a0.is_finite() {
            Ok(a0)
        } else {
            Err(invalid("per-step information density is unbounded"))
        }
    }
}

/// Wrapper that skips querying with probability `(l'ε − 1)/(l' − 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsSplit {
    pub l_prime: f64,
    pub eps: f64,
}

impl EpsSplit {
    pub fn skip_probability(&self) -> f64 {
        ((self.l_prime * self.eps - 1.0) / (self.l_prime - 1.0)).clamp(0.0, 1.0)
    }
}

/// How the non-target cells are simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdaptiveEngine {
    /// Per-cell below [`BINNED_THRESHOLD`] cells, binned above.
    #[default]
    Auto,
    /// One running score per cell.
    Explicit,
    /// Non-target cells grouped by score; each step splits every group by a
    /// binomial draw. Same law as `Explicit`.
    Binned,
}

impl std::str::FromStr for AdaptiveEngine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "explicit" => Ok(Self::Explicit),
            "binned" => Ok(Self::Binned),
            other => Err(invalid(format!("unknown adaptive engine `{other}`"))),
        }
    }
}

/// `Auto` uses the per-cell engine up to this many cells.
pub const BINNED_THRESHOLD: u64 = 1 << 10;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOptions {
    pub trials: usize,
    pub sampler: TargetSampler,
    pub engine: AdaptiveEngine,
    pub eps_split: Option<EpsSplit>,
    /// Stop drawing bits for cells whose score is `−∞`.
    pub prune: bool,
    pub trace: bool,
}

impl AdaptiveOptions {
    pub fn new(trials: usize) -> Self {
        Self { trials, sampler: TargetSampler::Uniform, engine: AdaptiveEngine::Auto, eps_split: None, prune: false, trace: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Largest score after each step.
    pub max_scores: Vec<f64>,
    /// `(x_t, y_t)` of the true cell.
    pub path: Vec<(usize, usize)>,
    pub true_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveTrial {
    pub tau: usize,
    /// False when the trial was skipped by the ε-split wrapper.
    pub posed: bool,
    pub censored: bool,
    pub excess: bool,
    pub decode_error: bool,
    /// Score of the true cell when stopping.
    pub true_score: f64,
    pub trace: Option<Trace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveRunStats {
    pub trials: Vec<AdaptiveTrial>,
    pub lambda: f64,
    pub a0: f64,
    /// `E ι_p(X;Y)` at the nominal channel.
    pub c: f64,
}

/// Aggregates over a subset of trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub trials: u64,
    pub mean_tau: f64,
    pub var_tau: f64,
    pub excess_count: u64,
    pub decode_error_count: u64,
    pub censored: u64,
}

impl Summary {
    fn of<'a>(trials: impl Iterator<Item = &'a AdaptiveTrial>) -> Self {
        let mut s = Summary { trials: 0, mean_tau: 0.0, var_tau: 0.0, excess_count: 0, decode_error_count: 0, censored: 0 };
        let mut taus = Vec::new();
        for t in trials {
            s.trials += 1;
            s.excess_count += u64::from(t.excess);
            s.decode_error_count += u64::from(t.decode_error);
            s.censored += u64::from(t.censored);
            taus.push(t.tau as f64);
        }
        if !taus.is_empty() {
            let n = taus.len() as f64;
            s.mean_tau = taus.iter().sum::<f64>() / n;
            s.var_tau = taus.iter().map(|t| (t - s.mean_tau).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        }
        s
    }

    pub fn excess_rate(&self) -> f64 {
        self.excess_count as f64 / self.trials as f64
    }

    pub fn decode_error_rate(&self) -> f64 {
        self.decode_error_count as f64 / self.trials as f64
    }

    pub fn excess_half_width(&self) -> f64 {
        wilson_half_width(self.excess_count, self.trials)
    }
}

impl AdaptiveRunStats {
    /// All trials, skipped ones included.
    pub fn overall(&self) -> Summary {
        Summary::of(self.trials.iter())
    }

    /// Trials that posed queries.
    pub fn raw(&self) -> Summary {
        Summary::of(self.trials.iter().filter(|t| t.posed))
    }

    /// `(λ + a0)/C`.
    pub fn bound_l(&self) -> f64 {
        (self.lambda + self.a0) / self.c
    }

    pub fn stopping_times(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.tau).collect()
    }
}

/// `(λ, M)` with `λ = l'C − a0` and `d log M = λ − log l'`, rounded down.
pub fn choose_lambda(l_prime: f64, c: f64, a0: f64, d: usize) -> Result<(f64, u128)> {
    let lambda = l_prime * c - a0;
    if !(lambda > 0.0) {
        return Err(invalid(format!("λ = l'C − a0 = {lambda} is not positive")));
    }
    let log_m = (lambda - l_prime.ln()) / d as f64;
    let m = log_m.exp().floor();
    if !(m >= 2.0) || m > 2f64.powi(100) {
        return Err(invalid(format!("d log M = λ − log l' gives M = {m}, outside [2, 2^100]")));
    }
    Ok((lambda, m as u128))
}

/// `E ι_p(X;Y)` when the other `M^d − 1` cells' bits are Bernoulli(p), so the
/// expected realized query size given `x` is `(x + (M^d−1)p)/M^d`.
pub fn mismatched_capacity(family: &ChannelFamily, p: f64, cells: f64) -> Result<f64> {
    let table = density_table(p, &family.matrix_at(p)?)?;
    let px = [1.0 - p, p];
    let mut c1 = 0.0;
    for x in 0..2 {
        if px[x] == 0.0 {
            continue;
        }
        let q = (x as f64 + (cells - 1.0) * p) / cells;
        for y in 0..family.output_size() {
            let w = family.prob(q, x, y);
            if w > 0.0 {
                let v = table.value(x, y);
                if !v.is_finite() {
                    return Err(Error::InfiniteDensity { x, y });
                }
                c1 += px[x] * w * v;
            }
        }
    }
    Ok(c1)
}

fn center_cell(m: u128, d: usize) -> Vec<u128> {
    vec![m.div_ceil(2); d]
}

fn run_trial(config: &AdaptiveConfig, options: &AdaptiveOptions, table: &InfoDensityTable, binned: bool, trial: u64) -> Result<AdaptiveTrial> {
    let mut rng = stream_rng(config.seed, trial);
    let target = options.sampler.sample(config.d, config.m, &mut rng)?;

    if let Some(split) = options.eps_split {
        if rng.random::<f64>() < split.skip_probability() {
            let estimate = center_cell(config.m, config.d);
            return Ok(AdaptiveTrial {
                tau: 0,
                posed: false,
                censored: false,
                excess: target.is_excess(&estimate),
                decode_error: estimate != target.cells,
                true_score: 0.0,
                trace: None,
            });
        }
    }

    if binned {
        binned_walk(config, options, table, &target, &mut rng)
    } else {
        explicit_walk(config, options, table, &target, &mut rng)
    }
}

fn explicit_walk<R: Rng>(
    config: &AdaptiveConfig,
    options: &AdaptiveOptions,
    table: &InfoDensityTable,
    target: &Target,
    rng: &mut R,
) -> Result<AdaptiveTrial> {
    let cells = config.cells()?;
    let cell = (target.linear(config.m)? - 1) as usize;
    let thr = bernoulli_threshold(config.p);
    let mut scores = vec![0.0f64; cells];
    let mut bits = vec![false; cells];
    let mut dead = 0usize;
    let mut trace = options.trace.then(|| Trace { max_scores: vec![], path: vec![], true_scores: vec![] });
    let cutoff = config.lambda - STOP_TOL;
    let mut tau = 0;
    let mut stopped = false;
    while tau < config.max_steps {
        tau += 1;
        let mut ones = 0u64;
        for (bit, &s) in bits.iter_mut().zip(&scores) {
            if options.prune && s == f64::NEG_INFINITY {
                continue;
            }
            *bit = (rng.next_u64() as u128) < thr;
            ones += u64::from(*bit);
        }
        if options.prune && dead > 0 {
            ones += Binomial::new(dead as u64, config.p).expect("valid binomial").sample(rng);
        }
        let x = usize::from(bits[cell]);
        let y = config.family.sample_output(ones as f64 / cells as f64, x, rng);
        let inc = [table.value(0, y), table.value(1, y)];
        let mut max = f64::NEG_INFINITY;
        dead = 0;
        for (s, &bit) in scores.iter_mut().zip(&bits) {
            if *s != f64::NEG_INFINITY {
                *s += inc[usize::from(bit)];
            }
            if *s == f64::NEG_INFINITY {
                dead += 1;
            } else if *s > max {
                max = *s;
            }
        }
        if let Some(tr) = trace.as_mut() {
            tr.max_scores.push(max);
            tr.path.push((x, y));
            tr.true_scores.push(scores[cell]);
        }
        if max >= cutoff {
            stopped = true;
            break;
        }
    }
    let decoded = if stopped { scores.iter().rposition(|&s| s >= cutoff) } else { None };
    let (excess, decode_error) = match decoded {
        Some(c) => {
            let estimate = gamma_inv(c as u128 + 1, config.m, config.d)?;
            (target.is_excess(&estimate), c != cell)
        }
        None => (true, true),
    };
    Ok(AdaptiveTrial { tau, posed: true, censored: !stopped, excess, decode_error, true_score: scores[cell], trace })
}

/// Non-target cells grouped by lattice key, sorted by key.
struct Bins {
    stride: usize,
    keys: Vec<i32>,
    counts: Vec<u64>,
}

impl Bins {
    fn key(&self, i: usize) -> &[i32] {
        &self.keys[i * self.stride..(i + 1) * self.stride]
    }

    fn push(&mut self, key: &[i32], count: u64) {
        let n = self.counts.len();
        if n > 0 && self.key(n - 1) == key {
            self.counts[n - 1] += count;
        } else {
            self.keys.extend_from_slice(key);
            self.counts.push(count);
        }
    }
}

fn shifted(key: &[i32], by: &[i32], out: &mut [i32]) {
    for ((o, &a), &b) in out.iter_mut().zip(key).zip(by) {
        *o = a + b;
    }
}

/// Smallest element of a uniformly random `count`-subset of `{1, …, len}`.
/// Exact for small sets or counts; for large both, the order statistic of
/// `count` continuous uniforms, off by `O(count²/len)`.
fn subset_min<R: Rng + ?Sized>(count: u64, len: u64, rng: &mut R) -> u64 {
    debug_assert!(count >= 1 && count <= len);
    if len <= 1 << 16 {
        let mut left = len;
        for k in 1..=len {
            if rng.random_range(0..left) < count {
                return k;
            }
            left -= 1;
        }
        return len;
    }
    if count <= 64 {
        let mut picks: Vec<u64> = Vec::with_capacity(count as usize);
        while picks.len() < count as usize {
            let r = rng.random_range(1..=len);
            if !picks.contains(&r) {
                picks.push(r);
            }
        }
        return picks.into_iter().min().expect("count is at least one");
    }
    let u = rng.random::<f64>();
    let frac = -((-u).ln_1p() / count as f64).exp_m1();
    ((frac * len as f64).ceil() as u64).clamp(1, len)
}

/// Linear index of the largest of `count` distinct random cells other than `exclude`.
fn largest_other<R: Rng + ?Sized>(count: u64, total: u64, exclude: u64, rng: &mut R) -> u64 {
    // Mirror so the largest becomes the smallest, then skip the excluded cell.
    let mirrored_exclude = total + 1 - exclude;
    let mut r = subset_min(count, total - 1, rng);
    if r >= mirrored_exclude {
        r += 1;
    }
    total + 1 - r
}

fn binned_walk<R: Rng>(
    config: &AdaptiveConfig,
    options: &AdaptiveOptions,
    table: &InfoDensityTable,
    target: &Target,
    rng: &mut R,
) -> Result<AdaptiveTrial> {
    let total = config.total_cells()?;
    let gens = table.generators();
    let g = gens.0.len();
    for x in 0..2 {
        for y in 0..table.output_size() {
            if table.value(x, y) == f64::INFINITY {
                return Err(invalid("the binned engine needs densities bounded above; use the explicit engine"));
            }
        }
    }
    let mut bins = Bins { stride: g, keys: vec![0; g], counts: vec![total - 1] };
    let mut dead = 0u64;
    let mut target_key = Some(vec![0i32; g]);
    let mut trace = options.trace.then(|| Trace { max_scores: vec![], path: vec![], true_scores: vec![] });
    let cutoff = config.lambda - STOP_TOL;
    let mut ones_per_bin = Vec::new();
    let mut buf = vec![0i32; 2 * g];
    let mut tau = 0;
    let mut stopped = false;
    let mut values = Vec::new();
    let mut true_score = 0.0;
    while tau < config.max_steps {
        tau += 1;
        ones_per_bin.clear();
        let mut ones = 0u64;
        for &count in &bins.counts {
            let k = Binomial::new(count, config.p).expect("valid binomial").sample(rng);
            ones += k;
            ones_per_bin.push(k);
        }
        if dead > 0 {
            ones += Binomial::new(dead, config.p).expect("valid binomial").sample(rng);
        }
        let x = usize::from(rng.random::<f64>() < config.p);
        ones += x as u64;
        let y = config.family.sample_output(ones as f64 / total as f64, x, rng);
        let steps = [table.key(0, y), table.key(1, y)];

        let mut next = Bins { stride: g, keys: Vec::with_capacity(bins.keys.len() + g), counts: Vec::with_capacity(bins.counts.len() + 1) };
        let split = |i: usize, bit: usize| if bit == 1 { ones_per_bin[i] } else { bins.counts[i] - ones_per_bin[i] };
        for bit in 0..2 {
            if steps[bit].is_none() {
                dead += (0..bins.counts.len()).map(|i| split(i, bit)).sum::<u64>();
            }
        }
        // Shifting every key by the same vector keeps the order, so two sorted runs merge.
        let n = bins.counts.len();
        let next_live = |mut k: usize, bit: usize| {
            while k < n && (steps[bit].is_none() || split(k, bit) == 0) {
                k += 1;
            }
            k
        };
        let mut i = next_live(0, 0);
        let mut j = next_live(0, 1);
        while i < n || j < n {
            let (lo, hi) = buf.split_at_mut(g);
            if i < n {
                shifted(bins.key(i), steps[0].expect("live"), lo);
            }
            if j < n {
                shifted(bins.key(j), steps[1].expect("live"), hi);
            }
            if j >= n || (i < n && *lo <= *hi) {
                next.push(lo, split(i, 0));
                i = next_live(i + 1, 0);
            } else {
                next.push(hi, split(j, 1));
                j = next_live(j + 1, 1);
            }
        }
        bins = next;

        target_key = match (target_key, steps[x]) {
            (Some(mut k), Some(s)) => {
                k.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                Some(k)
            }
            _ => None,
        };
        true_score = target_key.as_ref().map_or(f64::NEG_INFINITY, |k| gens.value(k));
        values.clear();
        values.extend((0..bins.counts.len()).map(|i| gens.value(bins.key(i))));
        let max = values.iter().copied().fold(true_score, f64::max);
        if let Some(tr) = trace.as_mut() {
            tr.max_scores.push(max);
            tr.path.push((x, y));
            tr.true_scores.push(true_score);
        }
        if max >= cutoff {
            stopped = true;
            break;
        }
    }
    if !stopped {
        return Ok(AdaptiveTrial { tau, posed: true, censored: true, excess: true, decode_error: true, true_score, trace });
    }
    let rivals: u64 = values.iter().zip(&bins.counts).filter(|(v, _)| **v >= cutoff).map(|(_, c)| c).sum();
    let target_in = true_score >= cutoff;
    let own = target.linear(config.m)? as u64;
    let decoded = if rivals == 0 {
        own
    } else {
        let rival = largest_other(rivals, total, own, rng);
        if target_in && own > rival { own } else { rival }
    };
    let estimate = gamma_inv(decoded as u128, config.m, config.d)?;
    Ok(AdaptiveTrial {
        tau,
        posed: true,
        censored: false,
        excess: target.is_excess(&estimate),
        decode_error: estimate != target.cells,
        true_score,
        trace,
    })
}

/// Simulates the sequential procedure over `options.trials` independent trials.
pub fn run_adaptive(config: &AdaptiveConfig, options: &AdaptiveOptions) -> Result<AdaptiveRunStats> {
    config.validate()?;
    if options.trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let binned = match options.engine {
        AdaptiveEngine::Explicit => {
            config.cells()?;
            false
        }
        AdaptiveEngine::Binned => true,
        AdaptiveEngine::Auto => config.total_cells()? > BINNED_THRESHOLD,
    };
    let table = config.table()?;
    let c = crate::info::stats(&table)?.c;
    let trials = (0..options.trials as u64)
        .into_par_iter()
        .map(|i| run_trial(config, options, &table, binned, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdaptiveRunStats { trials, lambda: config.lambda, a0: table.max_used_value(), c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingReport {
    pub mean_tau: f64,
    pub tau_bound: f64,
    pub tau_ok: bool,
    pub error_rate: f64,
    pub error_bound: f64,
    pub error_ok: bool,
    pub censored: u64,
    pub trials: u64,
}

impl StoppingReport {
    pub fn passed(&self) -> bool {
        self.tau_ok && self.error_ok && self.censored == 0
    }
}

/// Checks `E τ ≤ (λ + a0)/C1 (1 + slack)` and a decode-error rate below
/// `(M^d − 1) e^{−λ} (1 + slack)` plus three Wilson half-widths, over trials that posed queries.
pub fn verify_stopping_bounds(stats: &AdaptiveRunStats, m: u128, d: usize, c1: f64, slack: f64) -> StoppingReport {
    let raw = stats.raw();
    let cells_minus_one = (d as f64 * (m as f64).ln()).exp() - 1.0;
    let tau_bound = (stats.lambda + stats.a0) / c1 * (1.0 + slack);
    let error_rate = raw.decode_error_rate();
    let error_bound = cells_minus_one * (-stats.lambda).exp() * (1.0 + slack)
        + 3.0 * wilson_half_width(raw.decode_error_count, raw.trials);
    StoppingReport {
        mean_tau: raw.mean_tau,
        tau_bound,
        tau_ok: raw.mean_tau <= tau_bound,
        error_rate,
        error_bound,
        error_ok: error_rate <= error_bound,
        censored: raw.censored,
        trials: raw.trials,
    }
}
