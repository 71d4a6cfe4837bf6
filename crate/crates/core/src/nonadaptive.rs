//! Monte Carlo simulation of non-adaptive search: one target with a maximum
//! information density decoder, or several targets with a threshold decoder.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::info::{density_table, InfoDensityTable};
use crate::multitarget::mixture_output;
use crate::search::{
    gamma, gamma_inv, oracle_and_noise, stream_rng, Codebook, SearchConfig, Target, TargetSampler,
};
use crate::stats::wilson_half_width;
use crate::sumdist::{codeword_score_law, DEFAULT_SUPPORT_CAP};

/// Scores within this distance of the maximum count as tied.
pub const SCORE_TIE_TOL: f64 = 1e-9;
/// Largest `n · M^d` handled by the explicit engine under `Engine::Auto`.
pub const EXPLICIT_WORK: u128 = 1 << 16;
pub const DEFAULT_TUPLE_BUDGET: u128 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Auto,
    /// Full codebook and exhaustive decoding.
    Explicit,
    /// Non-target scores drawn as the maximum of `M^d − 1` i.i.d. codeword scores.
    IidLimit,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "explicit" => Ok(Self::Explicit),
            "iid-limit" => Ok(Self::IidLimit),
            _ => Err(Error::Parse(format!("unknown engine {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub trials: usize,
    pub sampler: TargetSampler,
    pub engine: Engine,
    /// Reuse one codebook for every trial.
    pub freeze_codebook: bool,
}

impl SimOptions {
    pub fn new(trials: usize) -> Self {
        Self { trials, sampler: TargetSampler::Uniform, engine: Engine::Auto, freeze_codebook: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialStats {
    pub trials: u64,
    pub excess_count: u64,
    pub decode_error_count: u64,
    /// Trials where another cell shares the target codeword; explicit engine only.
    pub collision_count: u64,
    /// `1/M`.
    pub delta: f64,
    pub engine: Engine,
}

impl TrialStats {
    pub fn empirical_rate(&self) -> f64 {
        self.excess_count as f64 / self.trials as f64
    }

    pub fn half_width(&self) -> f64 {
        wilson_half_width(self.excess_count, self.trials)
    }

    pub fn decode_error_rate(&self) -> f64 {
        self.decode_error_count as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    excess: bool,
    decode_error: bool,
    collision: bool,
}

fn aggregate(outcomes: &[Outcome], delta: f64, engine: Engine) -> TrialStats {
    let count = |f: fn(&Outcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as u64;
    TrialStats {
        trials: outcomes.len() as u64,
        excess_count: count(|o| o.excess),
        decode_error_count: count(|o| o.decode_error),
        collision_count: count(|o| o.collision),
        delta,
        engine,
    }
}

fn nominal_table(config: &SearchConfig) -> Result<InfoDensityTable> {
    density_table(config.p, &config.family.matrix_at(config.p)?)
}

/// Picks the engine `Auto` resolves to.
pub fn resolve_engine(config: &SearchConfig, options: &SimOptions) -> Result<Engine> {
    let explicit_ok = config.cells().is_some_and(|c| c <= config.cell_cap);
    match options.engine {
        Engine::Explicit => {
            config.explicit_cells()?;
            Ok(Engine::Explicit)
        }
        Engine::IidLimit if options.freeze_codebook => {
            Err(invalid("a frozen codebook requires the explicit engine"))
        }
        Engine::IidLimit => Ok(Engine::IidLimit),
        Engine::Auto if options.freeze_codebook => {
            config.explicit_cells()?;
            Ok(Engine::Explicit)
        }
        Engine::Auto => {
            let small = config.cells().is_some_and(|c| c.saturating_mul(config.n as u128) <= EXPLICIT_WORK);
            Ok(if explicit_ok && small { Engine::Explicit } else { Engine::IidLimit })
        }
    }
}

/// Packed masks of the positions where `y_t = y`.
fn output_masks(ys: &[usize], outputs: usize) -> Vec<Vec<u64>> {
    let wpc = ys.len().div_ceil(64);
    let mut masks = vec![vec![0u64; wpc]; outputs];
    for (t, &y) in ys.iter().enumerate() {
        masks[y][t / 64] |= 1 << (t % 64);
    }
    masks
}

#[inline]
fn weighted(count: u32, weight: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * weight
    }
}

/// `Σ_t ι(x_t; y_t)` for every cell of `book`.
pub fn codebook_scores(book: &Codebook, ys: &[usize], table: &InfoDensityTable) -> Vec<f64> {
    let masks = output_masks(ys, table.output_size());
    let totals: Vec<u32> = (0..table.output_size()).map(|y| ys.iter().filter(|&&v| v == y).count() as u32).collect();
    (0..book.cells)
        .map(|cell| {
            let cw = book.codeword(cell);
            let mut score = 0.0;
            for (y, mask) in masks.iter().enumerate() {
                let ones: u32 = cw.iter().zip(mask).map(|(a, b)| (a & b).count_ones()).sum();
                score += weighted(ones, table.value(1, y)) + weighted(totals[y] - ones, table.value(0, y));
            }
            score
        })
        .collect()
}

/// Smallest index whose score is within `SCORE_TIE_TOL` of the maximum.
pub fn argmax_smallest(scores: &[f64]) -> usize {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return 0;
    }
    scores.iter().position(|&s| s >= best - SCORE_TIE_TOL).unwrap_or(0)
}

fn explicit_trial(
    config: &SearchConfig,
    options: &SimOptions,
    table: &InfoDensityTable,
    frozen: Option<&Codebook>,
    cells: usize,
    trial: u64,
) -> Result<Outcome> {
    let mut rng = stream_rng(config.seed, trial);
    let target = options.sampler.sample(config.d, config.m, &mut rng)?;
    let cell = (target.linear(config.m)? - 1) as usize;
    let fresh;
    let book = match frozen {
        Some(b) => b,
        None => {
            fresh = Codebook::random(config.n, cells, config.p, &mut rng)?;
            &fresh
        }
    };
    let ys = oracle_and_noise(book, &[cell], &config.family, &mut rng);
    let scores = codebook_scores(book, &ys, table);
    let decoded = argmax_smallest(&scores);
    let estimate = gamma_inv(decoded as u128 + 1, config.m, config.d)?;
    let own = book.codeword(cell);
    let collision = (0..cells).any(|c| c != cell && book.codeword(c) == own);
    Ok(Outcome { excess: target.is_excess(&estimate), decode_error: decoded != cell, collision })
}

/// Non-target score law for one output-count vector, prepared for sampling the maximum.
struct MaxSampler {
    values: Vec<f64>,
    probs: Vec<f64>,
    /// `T_j = Pr{score ≥ s_j}`.
    tail: Vec<f64>,
    /// `(N−1) ln(1 − T_j)`, nondecreasing in `j`.
    log_below: Vec<f64>,
}

impl MaxSampler {
    fn new(values: Vec<f64>, probs: Vec<f64>, others: f64) -> Self {
        let mut tail = vec![0.0; values.len()];
        let mut acc = 0.0;
        for j in (0..values.len()).rev() {
            acc += probs[j];
            tail[j] = acc.min(1.0);
        }
        let log_below = tail.iter().map(|&t| others * (-t).ln_1p()).collect();
        Self { values, probs, tail, log_below }
    }

    /// Maximum of the non-target scores and how many cells attain it.
    fn sample<R: Rng + ?Sized>(&self, others: f64, rng: &mut R) -> (f64, f64) {
        let lu = (1.0 - rng.random::<f64>()).ln();
        let j = self.log_below.partition_point(|&l| l <= lu);
        if j == 0 {
            return (f64::NEG_INFINITY, others);
        }
        let j = j - 1;
        let above = if j + 1 < self.tail.len() { self.tail[j + 1] } else { 0.0 };
        let r = (self.probs[j] / (1.0 - above)).min(1.0);
        (self.values[j], at_least_one(others, r, rng))
    }
}

/// `Binomial(trials, r)` conditioned on being at least one.
pub(crate) fn at_least_one<R: Rng + ?Sized>(trials: f64, r: f64, rng: &mut R) -> f64 {
    if r >= 1.0 {
        return trials;
    }
    if trials <= 1.0 {
        return 1.0;
    }
    let lambda = trials * r;
    let exact_range = trials <= 9.0e15;
    if lambda < 0.5 {
        // Inversion on the truncated law; the Poisson limit when `trials` is huge.
        let u = rng.random::<f64>();
        let (mut k, mut pk, norm) = if exact_range {
            let norm = -(trials * (-r).ln_1p()).exp_m1();
            (1.0, trials * r * ((trials - 1.0) * (-r).ln_1p()).exp(), norm)
        } else {
            (1.0, lambda * (-lambda).exp(), -(-lambda).exp_m1())
        };
        let mut cum = pk / norm;
        while cum < u && k < trials {
            pk *= if exact_range { (trials - k) / (k + 1.0) * r / (1.0 - r) } else { lambda / (k + 1.0) };
            k += 1.0;
            cum += pk / norm;
            if pk <= 0.0 {
                break;
            }
        }
        return k.min(trials);
    }
    if exact_range {
        let dist = Binomial::new(trials as u64, r).expect("valid binomial");
        loop {
            let k = dist.sample(rng);
            if k >= 1 {
                return k as f64;
            }
        }
    }
    if lambda < 1.0e7 {
        let dist = Poisson::new(lambda).expect("valid poisson");
        loop {
            let k: f64 = dist.sample(rng);
            if k >= 1.0 {
                return k;
            }
        }
    }
    let sd = (lambda * (1.0 - r)).sqrt();
    let k: f64 = Normal::new(lambda, sd).expect("valid normal").sample(rng);
    k.round().max(1.0)
}

/// Number of ones among `trials` Bernoulli(p) draws.
fn binomial_count<R: Rng + ?Sized>(trials: f64, p: f64, rng: &mut R) -> f64 {
    if trials <= 9.0e15 {
        Binomial::new(trials as u64, p).expect("valid binomial").sample(rng) as f64
    } else {
        let sd = (trials * p * (1.0 - p)).sqrt();
        let k: f64 = Normal::new(trials * p, sd).expect("valid normal").sample(rng);
        k.round().clamp(0.0, trials)
    }
}

/// Lexicographically smallest of `count` uniform cells in `[1,M]^d` other than `exclude`.
fn lex_min_uniform<R: Rng + ?Sized>(count: f64, m: u128, d: usize, exclude: &[u128], rng: &mut R) -> Vec<u128> {
    if count <= 64.0 {
        let mut best: Option<Vec<u128>> = None;
        for _ in 0..count as usize {
            let cell = loop {
                let c: Vec<u128> = (0..d).map(|_| rng.random_range(1..=m)).collect();
                if c != exclude {
                    break c;
                }
            };
            if best.as_ref().is_none_or(|b| cell < *b) {
                best = Some(cell);
            }
        }
        return best.expect("count is at least one");
    }
    let mut out = Vec::with_capacity(d);
    let mut c = count;
    for _ in 0..d {
        // Minimum of `c` uniform values in [1, M], then how many share it.
        let u = rng.random::<f64>();
        let frac = -((-u).ln_1p() / c).exp_m1();
        let a = ((frac * m as f64).ceil() as u128).clamp(1, m);
        let share = 1.0 / (m - a + 1) as f64;
        c = at_least_one(c, share, rng);
        out.push(a);
    }
    out
}

struct LawCache {
    table: InfoDensityTable,
    others: f64,
    laws: Mutex<HashMap<Vec<u32>, Arc<MaxSampler>>>,
}

impl LawCache {
    fn get(&self, ys: &[usize]) -> Result<Arc<MaxSampler>> {
        let mut counts = vec![0u32; self.table.output_size()];
        for &y in ys {
            counts[y] += 1;
        }
        if let Some(hit) = self.laws.lock().expect("cache lock").get(&counts) {
            return Ok(hit.clone());
        }
        let law = codeword_score_law(&self.table, ys, DEFAULT_SUPPORT_CAP)?;
        let sampler = Arc::new(MaxSampler::new(law.values().to_vec(), law.probs().to_vec(), self.others));
        self.laws.lock().expect("cache lock").insert(counts, sampler.clone());
        Ok(sampler)
    }
}

fn iid_limit_trial(config: &SearchConfig, options: &SimOptions, cache: &LawCache, trial: u64) -> Result<Outcome> {
    let mut rng = stream_rng(config.seed, trial);
    let target = options.sampler.sample(config.d, config.m, &mut rng)?;
    let total = cache.others + 1.0;
    let table = &cache.table;
    let gens = table.generators();
    let mut key = vec![0i32; gens.0.len()];
    let mut finite = true;
    let mut ys = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let x = usize::from(rng.random::<f64>() < config.p);
        let ones = binomial_count(cache.others, config.p, &mut rng) + x as f64;
        let y = config.family.sample_output(ones / total, x, &mut rng);
        match table.key(x, y) {
            Some(k) => key.iter_mut().zip(k).for_each(|(a, b)| *a += b),
            None => finite = false,
        }
        ys.push(y);
    }
    let true_score = if finite { gens.value(&key) } else { f64::NEG_INFINITY };
    let (max, count) = cache.get(&ys)?.sample(cache.others, &mut rng);

    let estimate = if true_score == f64::NEG_INFINITY && max == f64::NEG_INFINITY {
        vec![1; config.d]
    } else if true_score > max + SCORE_TIE_TOL || max == f64::NEG_INFINITY {
        target.cells.clone()
    } else {
        let rival = lex_min_uniform(count, config.m, config.d, &target.cells, &mut rng);
        if true_score >= max - SCORE_TIE_TOL && target.cells < rival {
            target.cells.clone()
        } else {
            rival
        }
    };
    Ok(Outcome {
        excess: target.is_excess(&estimate),
        decode_error: estimate != target.cells,
        collision: false,
    })
}

/// Simulates single-target non-adaptive search with maximum information density decoding.
pub fn run_single_target(config: &SearchConfig, options: &SimOptions) -> Result<TrialStats> {
    config.validate()?;
    if options.trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let (engine, outcomes) = single_target_outcomes(config, options)?;
    Ok(aggregate(&outcomes, 1.0 / config.m as f64, engine))
}

/// Separate search: each axis searched alone with `n/d` queries at the same `M`;
/// a trial fails if any axis fails.
pub fn run_separate_search(config: &SearchConfig, options: &SimOptions) -> Result<TrialStats> {
    config.validate()?;
    let per_axis = config.n / config.d;
    if per_axis == 0 {
        return Err(invalid("fewer queries than dimensions"));
    }
    let mut axes = Vec::with_capacity(config.d);
    for j in 0..config.d {
        let sampler = match &options.sampler {
            TargetSampler::Uniform => TargetSampler::Uniform,
            TargetSampler::Fixed(s) => TargetSampler::Fixed(vec![s[j]]),
        };
        let mut axis = config.clone();
        axis.n = per_axis;
        axis.d = 1;
        axis.seed = config.seed.wrapping_add(j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let axis_options = SimOptions { sampler, ..options.clone() };
        axes.push(single_target_outcomes(&axis, &axis_options)?);
    }
    let outcomes: Vec<Outcome> = (0..options.trials)
        .map(|i| Outcome {
            excess: axes.iter().any(|a| a.1[i].excess),
            decode_error: axes.iter().any(|a| a.1[i].decode_error),
            collision: axes.iter().any(|a| a.1[i].collision),
        })
        .collect();
    Ok(aggregate(&outcomes, 1.0 / config.m as f64, axes[0].0))
}

fn single_target_outcomes(config: &SearchConfig, options: &SimOptions) -> Result<(Engine, Vec<Outcome>)> {
    let table = nominal_table(config)?;
    let engine = resolve_engine(config, options)?;
    let outcomes = match engine {
        Engine::Explicit => {
            let cells = config.explicit_cells()?;
            let frozen = if options.freeze_codebook {
                Some(Codebook::random(config.n, cells, config.p, &mut stream_rng(config.seed, u64::MAX))?)
            } else {
                None
            };
            (0..options.trials as u64)
                .into_par_iter()
                .map(|i| explicit_trial(config, options, &table, frozen.as_ref(), cells, i))
                .collect::<Result<_>>()?
        }
        _ => {
            let others = match config.cells() {
                Some(c) => (c - 1) as f64,
                None => config.log_cells().exp() - 1.0,
            };
            let cache = LawCache { table, others, laws: Mutex::new(HashMap::new()) };
            (0..options.trials as u64)
                .into_par_iter()
                .map(|i| iid_limit_trial(config, options, &cache, i))
                .collect::<Result<_>>()?
        }
    };
    Ok((engine, outcomes))
}

/// Per-query-word weights `log W(y|z) − log P(y | m unknown bits, known bits 0)`.
struct SubsetWeights {
    one: Vec<f64>,
    zero: Vec<f64>,
}

/// Threshold decoder for `k` simultaneous targets with the OR oracle.
pub struct MultiTargetDecoder {
    k: usize,
    /// Indexed by the number of unknown positions.
    weights: Vec<SubsetWeights>,
    /// `d log M`.
    log_cells: f64,
    gamma: f64,
}

impl MultiTargetDecoder {
    pub fn new(config: &SearchConfig, k: usize, gamma: f64) -> Result<Self> {
        if k == 0 || k > 8 {
            return Err(invalid(format!("k must lie in 1..=8, got {k}")));
        }
        let p = config.p;
        let fam = &config.family;
        let outputs = fam.output_size();
        let weights = (0..=k)
            .map(|m| {
                let w = |z: usize, y: usize| {
                    let num = fam.prob(p, z, y);
                    if num == 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        num.ln() - mixture_output(fam, p, m.max(1), y).ln()
                    }
                };
                SubsetWeights {
                    one: (0..outputs).map(|y| w(1, y)).collect(),
                    zero: (0..outputs).map(|y| w(0, y)).collect(),
                }
            })
            .collect();
        Ok(Self { k, weights, log_cells: config.log_cells(), gamma })
    }

    /// Accepts a tuple of codewords when every nonempty `J` clears `d|J| log M + γ`.
    fn accepts(&self, words: &[&[u64]], masks: &[Vec<u64>]) -> bool {
        let t = words.len();
        let wpc = masks[0].len();
        // The full set first: it rejects most tuples.
        for j in (1u32..(1 << t)).rev() {
            let size = j.count_ones() as usize;
            let w = &self.weights[size];
            let mut score = 0.0;
            for (y, mask) in masks.iter().enumerate() {
                let (mut a, mut b) = (0u32, 0u32);
                for word in 0..wpc {
                    let mut known = 0u64;
                    let mut unknown = 0u64;
                    for (i, cw) in words.iter().enumerate() {
                        if j >> i & 1 == 1 {
                            unknown |= cw[word];
                        } else {
                            known |= cw[word];
                        }
                    }
                    let live = !known & mask[word];
                    a += (live & unknown).count_ones();
                    b += (live & !unknown).count_ones();
                }
                score += weighted(a, w.one[y]) + weighted(b, w.zero[y]);
            }
            if !(score > self.log_cells * size as f64 + self.gamma) {
                return false;
            }
        }
        true
    }

    /// Zero-based cells of the first accepted tuple, scanning `t = k` down to 1.
    pub fn decode(&self, book: &Codebook, ys: &[usize], outputs: usize) -> Vec<usize> {
        let masks = output_masks(ys, outputs);
        for t in (1..=self.k.min(book.cells)).rev() {
            let mut idx: Vec<usize> = (0..t).collect();
            let mut words: Vec<&[u64]> = vec![&[]; t];
            loop {
                for (w, &c) in words.iter_mut().zip(&idx) {
                    *w = book.codeword(c);
                }
                if self.accepts(&words, &masks) {
                    return idx;
                }
                if !next_combination(&mut idx, book.cells) {
                    break;
                }
            }
        }
        Vec::new()
    }
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let t = idx.len();
    for i in (0..t).rev() {
        if idx[i] < n - t + i {
            idx[i] += 1;
            for j in i + 1..t {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn binomial_coefficient(n: u128, k: u128) -> Option<u128> {
    (0..k).try_fold(1u128, |acc, i| acc.checked_mul(n - i).map(|v| v / (i + 1)))
}

/// Every target lies within `1/M` of some returned cell and every returned cell serves a target.
fn multi_excess(targets: &[Target], returned: &[Vec<u128>]) -> bool {
    fn assign(targets: &[Target], returned: &[Vec<u128>], i: usize, used: &mut [bool]) -> bool {
        if i == targets.len() {
            return used.iter().all(|&u| u);
        }
        let unused_left = used.iter().filter(|&&u| !u).count();
        if unused_left > targets.len() - i {
            return false;
        }
        for (r, cell) in returned.iter().enumerate() {
            if !targets[i].is_excess(cell) {
                let before = used[r];
                used[r] = true;
                if assign(targets, returned, i + 1, used) {
                    return true;
                }
                used[r] = before;
            }
        }
        false
    }
    if returned.is_empty() {
        return true;
    }
    !assign(targets, returned, 0, &mut vec![false; returned.len()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTargetOptions {
    pub trials: usize,
    pub sampler: TargetSampler,
    pub tuple_budget: u128,
}

impl MultiTargetOptions {
    pub fn new(trials: usize) -> Self {
        Self { trials, sampler: TargetSampler::Uniform, tuple_budget: DEFAULT_TUPLE_BUDGET }
    }
}

/// Simulates simultaneous search for `k` targets with the threshold decoder.
pub fn run_multi_target(config: &SearchConfig, k: usize, gamma_offset: f64, options: &MultiTargetOptions) -> Result<TrialStats> {
    config.validate()?;
    if options.trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let cells = config.explicit_cells()?;
    let tuples = (1..=k as u128)
        .try_fold(0u128, |acc, t| binomial_coefficient(cells as u128, t).and_then(|c| acc.checked_add(c)));
    match tuples {
        Some(total) if total <= options.tuple_budget => {}
        _ => {
            return Err(Error::Budget(format!(
                "scanning tuples of up to {k} of {cells} cells exceeds the budget {}",
                options.tuple_budget
            )))
        }
    }
    let decoder = MultiTargetDecoder::new(config, k, gamma_offset)?;
    let outputs = config.family.output_size();
    let outcomes: Vec<Outcome> = (0..options.trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<Outcome> {
            let mut rng = stream_rng(config.seed, trial);
            let targets: Vec<Target> =
                (0..k).map(|_| options.sampler.sample(config.d, config.m, &mut rng)).collect::<Result<_>>()?;
            let mut true_cells: Vec<usize> =
                targets.iter().map(|t| t.linear(config.m).map(|g| (g - 1) as usize)).collect::<Result<_>>()?;
            let book = Codebook::random(config.n, cells, config.p, &mut rng)?;
            let ys = oracle_and_noise(&book, &true_cells, &config.family, &mut rng);
            let found = decoder.decode(&book, &ys, outputs);
            true_cells.sort_unstable();
            true_cells.dedup();
            let returned: Vec<Vec<u128>> =
                found.iter().map(|&c| gamma_inv(c as u128 + 1, config.m, config.d)).collect::<Result<_>>()?;
            Ok(Outcome { excess: multi_excess(&targets, &returned), decode_error: found != true_cells, collision: false })
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(&outcomes, 1.0 / config.m as f64, Engine::Explicit))
}

/// Linear index of a target, zero-based.
pub fn target_cell(target: &Target, m: u128) -> Result<usize> {
    Ok((gamma(&target.cells, m)? - 1) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelFamily;
    use rand::SeedableRng;

    fn config(nu: f64, n: usize, d: usize, m: u128, p: f64) -> SearchConfig {
        SearchConfig::new(n, d, m, p, ChannelFamily::bsc(nu).unwrap(), 7).unwrap()
    }

    #[test]
    fn noiseless_explicit_decodes_exactly() {
        let cfg = config(0.0, 40, 1, 64, 0.5);
        let mut opts = SimOptions::new(300);
        opts.engine = Engine::Explicit;
        let stats = run_single_target(&cfg, &opts).unwrap();
        assert_eq!(stats.collision_count, 0);
        assert_eq!(stats.decode_error_count, 0);
        assert_eq!(stats.excess_count, 0);
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = config(0.3, 30, 1, 200, 0.5);
        let opts = SimOptions::new(200);
        assert_eq!(run_single_target(&cfg, &opts).unwrap(), run_single_target(&cfg, &opts).unwrap());
    }

    #[test]
    fn excess_implies_decode_error() {
        let cfg = config(0.4, 20, 1, 100, 0.5);
        let mut opts = SimOptions::new(500);
        opts.engine = Engine::Explicit;
        let s = run_single_target(&cfg, &opts).unwrap();
        assert!(s.excess_count <= s.decode_error_count);
    }

    #[test]
    fn ties_go_to_smallest_index() {
        assert_eq!(argmax_smallest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_smallest(&[f64::NEG_INFINITY; 3]), 0);
        assert_eq!(argmax_smallest(&[f64::NEG_INFINITY, 0.0]), 1);
    }

    #[test]
    fn frozen_codebook_requires_explicit() {
        let cfg = config(0.3, 30, 1, 200, 0.5);
        let mut opts = SimOptions::new(10);
        opts.freeze_codebook = true;
        opts.engine = Engine::IidLimit;
        assert!(run_single_target(&cfg, &opts).is_err());
        opts.engine = Engine::Auto;
        assert_eq!(run_single_target(&cfg, &opts).unwrap().engine, Engine::Explicit);
    }

    #[test]
    fn engines_agree_statistically() {
        let cfg = config(0.4, 40, 1, 1000, 0.45);
        let mut a = SimOptions::new(3000);
        a.engine = Engine::Explicit;
        let mut b = a.clone();
        b.engine = Engine::IidLimit;
        let ea = run_single_target(&cfg, &a).unwrap();
        let eb = run_single_target(&cfg, &b).unwrap();
        let diff = (ea.empirical_rate() - eb.empirical_rate()).abs();
        assert!(diff < 3.0 * (ea.half_width() + eb.half_width()), "{ea:?} {eb:?}");
    }

    #[test]
    fn at_least_one_is_positive_and_bounded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for &(n, r) in &[(1.0, 0.3), (5.0, 0.01), (100.0, 0.2), (1e20, 1e-22), (1e20, 1e-10), (1e30, 1e-5)] {
            for _ in 0..200 {
                let k = at_least_one(n, r, &mut rng);
                assert!(k >= 1.0 && k <= n);
            }
        }
    }

    #[test]
    fn truncated_binomial_mean() {
        // E[K | K ≥ 1] = nr / (1 − (1−r)^n).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (n, r) = (3.0, 0.1);
        let draws = 100_000;
        let mean: f64 = (0..draws).map(|_| at_least_one(n, r, &mut rng)).sum::<f64>() / draws as f64;
        let expected = n * r / (1.0 - (1.0f64 - r).powf(n));
        assert!((mean - expected).abs() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn combinations_in_lexicographic_order() {
        let mut idx = vec![0, 1];
        let mut seen = vec![idx.clone()];
        while next_combination(&mut idx, 4) {
            seen.push(idx.clone());
        }
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(binomial_coefficient(1000, 2), Some(499_500));
    }

    #[test]
    fn coincident_targets_are_a_success() {
        let t = Target { cells: vec![4], offsets: vec![0.5] };
        assert!(!multi_excess(&[t.clone(), t.clone()], &[vec![4]]));
        assert!(multi_excess(&[t.clone(), t.clone()], &[vec![4], vec![9]]));
        assert!(multi_excess(&[t], &[]));
    }

    #[test]
    fn threshold_decoder_agrees_with_max_density_at_high_snr() {
        let cfg = config(0.05, 60, 1, 256, 0.5);
        let table = nominal_table(&cfg).unwrap();
        let decoder = MultiTargetDecoder::new(&cfg, 1, 0.0).unwrap();
        let mut agree = 0;
        for trial in 0..100 {
            let mut rng = stream_rng(11, trial);
            let cell = rng.random_range(0..256usize);
            let book = Codebook::random(60, 256, 0.5, &mut rng).unwrap();
            let ys = oracle_and_noise(&book, &[cell], &cfg.family, &mut rng);
            let a = argmax_smallest(&codebook_scores(&book, &ys, &table));
            let b = decoder.decode(&book, &ys, 2);
            if b == vec![a] {
                agree += 1;
            }
        }
        assert!(agree > 90, "agreement {agree}/100");
    }

    #[test]
    fn multi_target_noiseless_pair() {
        let cfg = config(0.0, 40, 1, 32, 0.3);
        let opts = MultiTargetOptions::new(50);
        let s = run_multi_target(&cfg, 2, 0.0, &opts).unwrap();
        assert!(s.empirical_rate() < 0.1, "{s:?}");
    }

    #[test]
    fn tuple_budget_enforced() {
        let cfg = config(0.1, 40, 2, 100, 0.3);
        let mut opts = MultiTargetOptions::new(1);
        opts.tuple_budget = 1000;
        assert!(matches!(run_multi_target(&cfg, 2, 0.0, &opts), Err(Error::Budget(_))));
    }
}
