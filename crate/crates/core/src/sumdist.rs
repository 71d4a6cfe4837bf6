//! Exact laws of sums of i.i.d. (or independent) information densities.
//!
//! Partial sums are tracked by their lattice keys. Each convolution step shifts
//! the current support once per atom, merges the shifted copies and folds
//! together entries with identical keys.

use std::cmp::Ordering;

use crate::error::{invalid, Error, Result};
use crate::info::{Generators, InfoDensityTable};
use crate::normal::gaussian_cdf;

pub const DEFAULT_MERGE_TOL: f64 = 1e-12;
pub const DEFAULT_SUPPORT_CAP: usize = 20_000_000;

/// One outcome of a per-symbol law.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub prob: f64,
    pub key: Vec<i32>,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    value: f64,
    prob: f64,
    slot: u32,
}

/// Law of a partial sum with lattice keys, sorted by value.
#[derive(Debug, Clone)]
pub struct LatticeLaw {
    gens: Generators,
    stride: usize,
    keys: Vec<i32>,
    values: Vec<f64>,
    probs: Vec<f64>,
}

fn key_at(keys: &[i32], stride: usize, slot: u32) -> &[i32] {
    let start = slot as usize * stride;
    &keys[start..start + stride]
}

fn order(a: &Entry, b: &Entry, keys: &[i32], stride: usize) -> Ordering {
    a.value
        .total_cmp(&b.value)
        .then_with(|| key_at(keys, stride, a.slot).cmp(key_at(keys, stride, b.slot)))
}

/// Insertion pass; shifted copies are sorted up to rare near-ties.
fn restore_order(list: &mut [Entry], keys: &[i32], stride: usize) {
    for i in 1..list.len() {
        if order(&list[i - 1], &list[i], keys, stride) == Ordering::Greater {
            let e = list[i];
            let mut j = i;
            while j > 0 && order(&list[j - 1], &e, keys, stride) == Ordering::Greater {
                list[j] = list[j - 1];
                j -= 1;
            }
            list[j] = e;
        }
    }
}

fn merge_two(a: Vec<Entry>, b: Vec<Entry>, keys: &[i32], stride: usize) -> Vec<Entry> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if order(&a[i], &b[j], keys, stride) != Ordering::Greater {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Biased 16-bit fields, one per generator, packed into a `u128`.
struct Packing {
    fields: usize,
}

const FIELD_BITS: usize = 16;
const FIELD_BIAS: i64 = 1 << (FIELD_BITS - 1);

impl Packing {
    /// Packs only when every reachable key component stays inside its field.
    fn fit(law: &LatticeLaw, atoms: &[Atom], times: usize) -> Option<Self> {
        let g = law.stride;
        if g * FIELD_BITS > 128 || law.len() > u32::MAX as usize {
            return None;
        }
        for j in 0..g {
            let start = (0..law.len()).map(|i| i64::from(law.key(i)[j]).abs()).max().unwrap_or(0);
            let step = atoms.iter().map(|a| i64::from(a.key[j]).abs()).max().unwrap_or(0);
            if start + step.checked_mul(times as i64)? >= FIELD_BIAS {
                return None;
            }
        }
        Some(Self { fields: g })
    }

    fn pack(&self, key: &[i32]) -> u128 {
        key.iter()
            .enumerate()
            .map(|(j, &k)| ((i64::from(k) + FIELD_BIAS) as u128) << (j * FIELD_BITS))
            .sum()
    }

    /// The two's-complement offset that adds `key` to a packed key.
    fn delta(&self, key: &[i32]) -> u128 {
        key.iter()
            .enumerate()
            .fold(0u128, |acc, (j, &k)| acc.wrapping_add((i128::from(k) << (j * FIELD_BITS)) as u128))
    }

    fn unpack(&self, packed: u128, out: &mut [i32]) {
        for (j, o) in out.iter_mut().enumerate().take(self.fields) {
            let field = (packed >> (j * FIELD_BITS)) & ((1 << FIELD_BITS) - 1);
            *o = (field as i64 - FIELD_BIAS) as i32;
        }
    }
}

fn merge_packed(a: &[(u128, f64)], b: &[(u128, f64)]) -> Vec<(u128, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

impl LatticeLaw {
    /// The law of the empty sum.
    pub fn point_mass(gens: Generators) -> Self {
        let stride = gens.0.len();
        Self { gens, stride, keys: vec![0; stride], values: vec![0.0], probs: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn key(&self, i: usize) -> &[i32] {
        &self.keys[i * self.stride..(i + 1) * self.stride]
    }

    pub fn generators(&self) -> &Generators {
        &self.gens
    }

    /// Adds one independent symbol drawn from `atoms`.
    pub fn convolve(&self, atoms: &[Atom], cap: usize) -> Result<Self> {
        let g = self.stride;
        let s = self.len();
        let mut scratch = vec![0i32; atoms.len() * s * g];
        let mut lists = Vec::with_capacity(atoms.len());
        for (c, atom) in atoms.iter().enumerate() {
            if atom.key.len() != g {
                return Err(invalid("atom key does not match the generator set"));
            }
            let mut list = Vec::with_capacity(s);
            for i in 0..s {
                let prob = self.probs[i] * atom.prob;
                if prob == 0.0 {
                    continue;
                }
                let slot = c * s + i;
                let dst = &mut scratch[slot * g..(slot + 1) * g];
                for ((d, &a), &b) in dst.iter_mut().zip(self.key(i)).zip(&atom.key) {
                    *d = a + b;
                }
                let value = self.gens.value(dst);
                list.push(Entry { value, prob, slot: slot as u32 });
            }
            restore_order(&mut list, &scratch, g);
            lists.push(list);
        }
        while lists.len() > 1 {
            let mut next = Vec::with_capacity(lists.len().div_ceil(2));
            let mut it = lists.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(merge_two(a, b, &scratch, g)),
                    None => next.push(a),
                }
            }
            lists = next;
        }
        let merged = lists.pop().unwrap_or_default();

        let mut out = Self {
            gens: self.gens.clone(),
            stride: g,
            keys: Vec::with_capacity(merged.len() * g),
            values: Vec::with_capacity(merged.len()),
            probs: Vec::with_capacity(merged.len()),
        };
        let mut last: Option<u32> = None;
        for e in merged {
            if let Some(prev) = last {
                if key_at(&scratch, g, prev) == key_at(&scratch, g, e.slot) {
                    *out.probs.last_mut().unwrap() += e.prob;
                    continue;
                }
            }
            out.keys.extend_from_slice(key_at(&scratch, g, e.slot));
            out.values.push(e.value);
            out.probs.push(e.prob);
            last = Some(e.slot);
        }
        if out.len() > cap {
            return Err(Error::SupportExplosion { size: out.len(), cap });
        }
        Ok(out)
    }

    /// Adds `times` independent symbols drawn from `atoms`.
    pub fn convolve_power(&self, atoms: &[Atom], times: usize, cap: usize) -> Result<Self> {
        if atoms.iter().any(|a| a.key.len() != self.stride) {
            return Err(invalid("atom key does not match the generator set"));
        }
        if let Some(packing) = Packing::fit(self, atoms, times) {
            return self.convolve_packed(&packing, atoms, times, cap);
        }
        let mut law = self.clone();
        for _ in 0..times {
            law = law.convolve(atoms, cap)?;
        }
        Ok(law)
    }

    /// Runs the convolution on packed keys kept in integer order, which every
    /// shift preserves, and sorts by value once at the end.
    fn convolve_packed(&self, packing: &Packing, atoms: &[Atom], times: usize, cap: usize) -> Result<Self> {
        let mut law: Vec<(u128, f64)> =
            (0..self.len()).map(|i| (packing.pack(self.key(i)), self.probs[i])).collect();
        law.sort_unstable_by_key(|e| e.0);
        let shifts: Vec<(u128, f64)> = atoms.iter().map(|a| (packing.delta(&a.key), a.prob)).collect();
        for _ in 0..times {
            let mut runs: Vec<Vec<(u128, f64)>> = shifts
                .iter()
                .map(|&(delta, w)| {
                    law.iter().filter(|e| e.1 * w != 0.0).map(|&(k, pr)| (k.wrapping_add(delta), pr * w)).collect()
                })
                .collect();
            while runs.len() > 1 {
                let mut next = Vec::with_capacity(runs.len().div_ceil(2));
                let mut it = runs.into_iter();
                while let Some(a) = it.next() {
                    next.push(match it.next() {
                        Some(b) => merge_packed(&a, &b),
                        None => a,
                    });
                }
                runs = next;
            }
            law = runs.pop().unwrap_or_default();
            if law.len() > cap {
                return Err(Error::SupportExplosion { size: law.len(), cap });
            }
        }

        let g = self.stride;
        let mut keys = vec![0i32; law.len() * g];
        let mut entries: Vec<Entry> = law
            .iter()
            .enumerate()
            .map(|(i, &(k, prob))| {
                let dst = &mut keys[i * g..(i + 1) * g];
                packing.unpack(k, dst);
                Entry { value: self.gens.value(dst), prob, slot: i as u32 }
            })
            .collect();
        entries.sort_unstable_by(|a, b| order(a, b, &keys, g));
        let mut out = Self {
            gens: self.gens.clone(),
            stride: g,
            keys: Vec::with_capacity(keys.len()),
            values: Vec::with_capacity(entries.len()),
            probs: Vec::with_capacity(entries.len()),
        };
        for e in entries {
            out.keys.extend_from_slice(key_at(&keys, g, e.slot));
            out.values.push(e.value);
            out.probs.push(e.prob);
        }
        Ok(out)
    }

    /// `Pr{sum >= threshold}`, summed from the top for tail accuracy.
    pub fn prob_at_least(&self, threshold: f64) -> f64 {
        let start = self.values.partition_point(|&v| v < threshold);
        self.probs[start..].iter().rev().sum()
    }

    /// Drops keys and merges values closer than `merge_tol`.
    pub fn into_distribution(self, n: usize, merge_tol: f64) -> SumDistribution {
        let mut support: Vec<f64> = Vec::with_capacity(self.values.len());
        let mut probs: Vec<f64> = Vec::with_capacity(self.values.len());
        let mut prev_raw = f64::NEG_INFINITY;
        for (&v, &p) in self.values.iter().zip(&self.probs) {
            match (support.last_mut(), probs.last_mut()) {
                (Some(sv), Some(sp)) if v - prev_raw <= merge_tol => {
                    let total = *sp + p;
                    if total > 0.0 {
                        *sv = (*sv * *sp + v * p) / total;
                    }
                    *sp = total;
                }
                _ => {
                    support.push(v);
                    probs.push(p);
                }
            }
            prev_raw = v;
        }
        SumDistribution::new(n, support, probs)
    }
}

/// Per-symbol atoms of a table's joint law.
pub fn table_atoms(table: &InfoDensityTable) -> Result<Vec<Atom>> {
    table
        .used_cells()
        .map(|(x, y, w, _)| match table.key(x, y) {
            Some(key) => Ok(Atom { prob: w, key: key.to_vec() }),
            None => Err(Error::InfiniteDensity { x, y }),
        })
        .collect()
}

/// Atoms of `ι_p(X̄; y)` for an independent `X̄ ~ Bern(p)` and fixed `y`.
/// Outcomes with `ι = -∞` are dropped, so the atom masses may sum below one.
pub fn conditional_atoms(table: &InfoDensityTable, y: usize) -> Vec<Atom> {
    let px = [1.0 - table.input_prob, table.input_prob];
    (0..2)
        .filter(|&x| px[x] > 0.0)
        .filter_map(|x| table.key(x, y).map(|key| Atom { prob: px[x], key: key.to_vec() }))
        .collect()
}

/// Law of `Σ_t ι_p(X̄_t; y_t)` for an independent Bernoulli(p) codeword.
pub fn codeword_score_law(table: &InfoDensityTable, ys: &[usize], cap: usize) -> Result<LatticeLaw> {
    let mut counts = vec![0usize; table.output_size()];
    for &y in ys {
        counts[y] += 1;
    }
    let mut law = LatticeLaw::point_mass(table.generators());
    for (y, &m) in counts.iter().enumerate() {
        if m > 0 {
            law = law.convolve_power(&conditional_atoms(table, y), m, cap)?;
        }
    }
    Ok(law)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SumDistribution {
    pub n: usize,
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SumDistribution {
    pub fn new(n: usize, support: Vec<f64>, probs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { n, support, probs, cumulative }
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Right-continuous CDF.
    pub fn cdf(&self, t: f64) -> f64 {
        let idx = self.support.partition_point(|&v| v <= t);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1].min(1.0)
        }
    }

    /// `sup{t : cdf(t) <= level}`, i.e. the first support point whose CDF exceeds `level`.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(invalid(format!("quantile level must lie in (0,1), got {level}")));
        }
        let idx = self.cumulative.partition_point(|&c| c <= level);
        Ok(self.support.get(idx).copied().unwrap_or(f64::INFINITY))
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// Two-column `value,prob` text.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,prob\n");
        for (v, p) in self.support.iter().zip(&self.probs) {
            out.push_str(&format!("{v:.17e},{p:.17e}\n"));
        }
        out
    }
}

pub fn sum_distribution(table: &InfoDensityTable, n: usize, merge_tol: f64) -> Result<SumDistribution> {
    sum_distribution_capped(table, n, merge_tol, DEFAULT_SUPPORT_CAP)
}

pub fn sum_distribution_capped(
    table: &InfoDensityTable,
    n: usize,
    merge_tol: f64,
    cap: usize,
) -> Result<SumDistribution> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let atoms = table_atoms(table)?;
    let law = LatticeLaw::point_mass(table.generators()).convolve_power(&atoms, n, cap)?;
    Ok(law.into_distribution(n, merge_tol))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerryEsseen {
    pub max_gap: f64,
    pub bound: f64,
}

/// Kolmogorov distance between the exact sum law and its normal approximation,
/// with the Berry–Esseen bound `6T / (√n V^{3/2})`.
pub fn berry_esseen_gap(table: &InfoDensityTable, n: usize) -> Result<BerryEsseen> {
    let s = crate::info::stats(table)?;
    if !(s.v > 0.0) {
        return Err(invalid("Berry-Esseen gap needs a positive variance"));
    }
    let dist = sum_distribution(table, n, DEFAULT_MERGE_TOL)?;
    let nf = n as f64;
    let (mean, sd) = (nf * s.c, (nf * s.v).sqrt());
    let mut max_gap: f64 = 0.0;
    let mut below = 0.0;
    for (i, &t) in dist.support.iter().enumerate() {
        let g = gaussian_cdf((t - mean) / sd);
        let at = dist.cumulative[i].min(1.0);
        // Both one-sided limits at each jump.
        max_gap = max_gap.max((at - g).abs()).max((below - g).abs());
        below = at;
    }
    Ok(BerryEsseen { max_gap, bound: 6.0 * s.t / (nf.sqrt() * s.v.powf(1.5)) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelFamily;
    use crate::info::{density_table, stats};
    use approx::assert_abs_diff_eq;

    fn table(family: &str, q: f64, p: f64) -> InfoDensityTable {
        let family: ChannelFamily = family.parse().unwrap();
        density_table(p, &family.matrix_at(q).unwrap()).unwrap()
    }

    #[test]
    fn single_step_is_the_table() {
        let t = table("bsc:0.4", 0.3, 0.3);
        let d = sum_distribution(&t, 1, 0.0).unwrap();
        let mut cells: Vec<(f64, f64)> = t.used_cells().map(|c| (c.3, c.2)).collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(d.support, cells.iter().map(|c| c.0).collect::<Vec<_>>());
        for (p, c) in d.probs.iter().zip(&cells) {
            assert_abs_diff_eq!(*p, c.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn packed_power_matches_stepwise() {
        for (fam, q) in [("bsc:0.4", 0.3), ("bec:0.6", 0.45), ("z:0.7", 0.4)] {
            let t = table(fam, q, q);
            let atoms = table_atoms(&t).unwrap();
            let start = LatticeLaw::point_mass(t.generators());
            let fast = start.convolve_power(&atoms, 25, DEFAULT_SUPPORT_CAP).unwrap();
            let mut slow = start.clone();
            for _ in 0..25 {
                slow = slow.convolve(&atoms, DEFAULT_SUPPORT_CAP).unwrap();
            }
            assert_eq!(fast.values(), slow.values(), "{fam}");
            assert_eq!(fast.keys, slow.keys, "{fam}");
            for (a, b) in fast.probs().iter().zip(slow.probs()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn packing_declines_wide_keys() {
        let law = LatticeLaw::point_mass(Generators(vec![1.0]));
        let atoms = [Atom { prob: 1.0, key: vec![2] }];
        assert!(Packing::fit(&law, &atoms, 16_383).is_some());
        assert!(Packing::fit(&law, &atoms, 16_384).is_none());
        let far = law.convolve_power(&atoms, 20_000, 10).unwrap();
        assert_eq!(far.key(0), &[40_000]);
    }

    #[test]
    fn binomial_pair() {
        let (a, b) = (-0.3, 0.7);
        let atoms = [Atom { prob: 0.5, key: vec![1, 0] }, Atom { prob: 0.5, key: vec![0, 1] }];
        let law = LatticeLaw::point_mass(Generators(vec![a, b])).convolve_power(&atoms, 2, 100).unwrap();
        let d = law.into_distribution(2, 0.0);
        assert_eq!(d.support, vec![2.0 * a, a + b, 2.0 * b]);
        assert_eq!(d.probs, vec![0.25, 0.5, 0.25]);
    }

    #[test]
    fn cdf_edges_and_quantile() {
        let t = table("bsc:0.4", 0.3, 0.3);
        let d = sum_distribution(&t, 10, DEFAULT_MERGE_TOL).unwrap();
        assert_eq!(d.cdf(d.support[0] - 1.0), 0.0);
        assert_abs_diff_eq!(d.cdf(d.support[d.support.len() - 1] + 1.0), 1.0, epsilon = 1e-14);
        let q = d.quantile(0.3).unwrap();
        assert!(d.cdf(q) > 0.3);
        let idx = d.support.iter().position(|&v| v == q).unwrap();
        assert!(idx == 0 || d.cdf(d.support[idx - 1]) <= 0.3);
        assert!(d.quantile(1.0).is_err());
    }

    #[test]
    fn noiseless_sum_is_deterministic() {
        let t = table("bsc:0", 0.5, 0.5);
        let d = sum_distribution(&t, 40, DEFAULT_MERGE_TOL).unwrap();
        assert_eq!(d.support.len(), 1);
        assert_abs_diff_eq!(d.quantile(0.2).unwrap(), 40.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn mean_matches_moments() {
        let t = table("z:0.6", 0.4, 0.4);
        let d = sum_distribution(&t, 25, DEFAULT_MERGE_TOL).unwrap();
        assert_abs_diff_eq!(d.total_mass(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d.mean(), 25.0 * stats(&t).unwrap().c, epsilon = 1e-9);
    }

    #[test]
    fn support_cap_aborts() {
        let t = table("bec:0.5", 0.4, 0.4);
        let err = sum_distribution_capped(&t, 30, 0.0, 10).unwrap_err();
        assert!(matches!(err, Error::SupportExplosion { .. }));
    }

    #[test]
    fn berry_esseen_requires_variance() {
        let t = table("bsc:0", 0.5, 0.5);
        assert!(berry_esseen_gap(&t, 10).is_err());
    }

    #[test]
    fn csv_export() {
        let t = table("bsc:0.4", 0.3, 0.3);
        let csv = sum_distribution(&t, 2, 0.0).unwrap().to_csv();
        assert!(csv.starts_with("value,prob\n"));
        assert_eq!(csv.lines().count(), 1 + sum_distribution(&t, 2, 0.0).unwrap().support.len());
    }
}
