//! Information densities and their moments.
//!
//! Every finite density value is also carried as an integer combination of a
//! small set of log-probability generators. Sums of densities then live on an
//! integer lattice, so equal sums are detected exactly rather than by tolerance.

use crate::channel::ChannelMatrix;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct InfoStats {
    /// Mean, nats.
    pub c: f64,
    /// Variance, nats².
    pub v: f64,
    /// Third absolute central moment, nats³.
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct InfoDensityTable {
    pub input_prob: f64,
    pub channel: ChannelMatrix,
    /// `ι(x;y)`; may be infinite where `joint` is zero.
    pub values: [Vec<f64>; 2],
    pub joint: [Vec<f64>; 2],
    pub output_marginal: Vec<f64>,
    generators: Vec<f64>,
    keys: [Vec<Option<Vec<i32>>>; 2],
}

/// Generator set shared by a family of lattice keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Generators(pub Vec<f64>);

impl Generators {
    /// Evaluates `Σ key_j · g_j` in a fixed order, so equal keys give bitwise equal values.
    pub fn value(&self, key: &[i32]) -> f64 {
        let mut acc = 0.0;
        for (&k, &g) in key.iter().zip(&self.0) {
            if k != 0 {
                acc += k as f64 * g;
            }
        }
        acc
    }
}

fn generator_index(gens: &mut Vec<f64>, v: f64) -> usize {
    match gens.iter().position(|g| g.to_bits() == v.to_bits()) {
        Some(i) => i,
        None => {
            gens.push(v);
            gens.len() - 1
        }
    }
}

pub fn density_table(p: f64, channel: &ChannelMatrix) -> Result<InfoDensityTable> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("input probability must lie in [0,1], got {p}")));
    }
    let k = channel.output_size();
    let px = [1.0 - p, p];
    let marginal: Vec<f64> = (0..k).map(|y| px[0] * channel.prob(0, y) + px[1] * channel.prob(1, y)).collect();

    let mut generators = Vec::new();
    let mut raw = [vec![None; k], vec![None; k]];
    for x in 0..2 {
        for y in 0..k {
            let w = channel.prob(x, y);
            if w > 0.0 && marginal[y] > 0.0 {
                let a = generator_index(&mut generators, w.ln());
                let b = generator_index(&mut generators, marginal[y].ln());
                raw[x][y] = Some((a, b));
            }
        }
    }
    let g = generators.len();
    let gens = Generators(generators);
    let mut keys: [Vec<Option<Vec<i32>>>; 2] = [vec![None; k], vec![None; k]];
    let mut values = [vec![0.0; k], vec![0.0; k]];
    let mut joint = [vec![0.0; k], vec![0.0; k]];
    for x in 0..2 {
        for y in 0..k {
            let w = channel.prob(x, y);
            joint[x][y] = px[x] * w;
            values[x][y] = match raw[x][y] {
                Some((a, b)) => {
                    let mut key = vec![0i32; g];
                    key[a] += 1;
                    key[b] -= 1;
                    let v = gens.value(&key);
                    keys[x][y] = Some(key);
                    v
                }
                None if w == 0.0 => f64::NEG_INFINITY,
                None => f64::INFINITY,
            };
        }
    }
    Ok(InfoDensityTable {
        input_prob: p,
        channel: channel.clone(),
        values,
        joint,
        output_marginal: marginal,
        generators: gens.0,
        keys,
    })
}

impl InfoDensityTable {
    pub fn output_size(&self) -> usize {
        self.channel.output_size()
    }

    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[x][y]
    }

    pub fn is_used(&self, x: usize, y: usize) -> bool {
        self.joint[x][y] > 0.0
    }

    pub fn generators(&self) -> Generators {
        Generators(self.generators.clone())
    }

    /// Lattice key of a finite density value.
    pub fn key(&self, x: usize, y: usize) -> Option<&[i32]> {
        self.keys[x][y].as_deref()
    }

    /// `(x, y, joint, value)` over used cells.
    pub fn used_cells(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..2).flat_map(move |x| {
            (0..self.output_size())
                .filter(move |&y| self.is_used(x, y))
                .map(move |y| (x, y, self.joint[x][y], self.values[x][y]))
        })
    }

    /// Largest density over used cells.
    pub fn max_used_value(&self) -> f64 {
        self.used_cells().map(|c| c.3).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `E[exp(-ι)]` over used cells.
    pub fn exp_neg_mean(&self) -> f64 {
        self.used_cells().map(|(_, _, w, v)| w * (-v).exp()).sum()
    }
}

/// Mean, variance and third absolute central moment of a finite law.
pub fn moments<I>(cells: I) -> InfoStats
where
    I: IntoIterator<Item = (f64, f64)> + Clone,
{
    let c: f64 = cells.clone().into_iter().map(|(w, v)| w * v).sum();
    let mut v = 0.0;
    let mut t = 0.0;
    for (w, x) in cells {
        let d = (x - c).abs();
        v += w * d * d;
        t += w * d * d * d;
    }
    InfoStats { c, v, t }
}

pub fn stats(table: &InfoDensityTable) -> Result<InfoStats> {
    if let Some((x, y, _, _)) = table.used_cells().find(|c| !c.3.is_finite()) {
        return Err(Error::InfiniteDensity { x, y });
    }
    let cells: Vec<(f64, f64)> = table.used_cells().map(|c| (c.2, c.3)).collect();
    Ok(moments(cells.iter().copied()))
}

/// Binary entropy in nats.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    term(p) + term(1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelFamily;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn table(family: &str, q: f64, p: f64) -> InfoDensityTable {
        let family: ChannelFamily = family.parse().unwrap();
        density_table(p, &family.matrix_at(q).unwrap()).unwrap()
    }

    #[test]
    fn noiseless_bsc() {
        let t = table("bsc:0", 0.5, 0.5);
        assert_abs_diff_eq!(t.value(0, 0), LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(t.value(1, 1), LN_2, epsilon = 1e-15);
        assert!(!t.is_used(0, 1) && !t.is_used(1, 0));
    }

    #[test]
    fn pure_noise_bsc() {
        let t = table("bsc:1", 0.5, 0.5);
        for (_, _, _, v) in t.used_cells() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn erasure_carries_no_information() {
        let t = table("bec:0.5", 0.3, 0.3);
        // Direct computation: log(τq) - log(τq).
        assert_abs_diff_eq!(t.value(0, 2), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.value(1, 2), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bsc_closed_form() {
        let (nu, q) = (0.3, 0.4);
        let s = stats(&table("bsc:0.3", q, q)).unwrap();
        let beta = q * (1.0 - nu * q) + (1.0 - q) * nu * q;
        assert_abs_diff_eq!(s.c, binary_entropy(beta) - binary_entropy(nu * q), epsilon = 1e-12);
    }

    #[test]
    fn z_full_query_has_zero_capacity() {
        let s = stats(&table("z:0.3", 1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(s.c, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn joint_sums_to_one_and_change_of_measure() {
        let t = table("z:0.7", 0.35, 0.2);
        let total: f64 = t.joint.iter().flatten().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(t.exp_neg_mean() <= 1.0 + 1e-12);
    }

    #[test]
    fn keys_reproduce_values() {
        let t = table("bec:0.6", 0.45, 0.3);
        let gens = t.generators();
        for (x, y, _, v) in t.used_cells() {
            assert_eq!(gens.value(t.key(x, y).unwrap()), v);
        }
    }

    #[test]
    fn infinite_used_cell_is_rejected() {
        let mut t = table("bsc:0.2", 0.5, 0.5);
        t.values[0][1] = f64::NEG_INFINITY;
        assert_eq!(stats(&t), Err(Error::InfiniteDensity { x: 0, y: 1 }));
    }
}
