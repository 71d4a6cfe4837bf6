//! Quantization of the unit cube, the cell linearization Γ, random codebooks
//! and noisy oracle responses.

use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::ChannelFamily;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_CELL_CAP: u128 = 1 << 24;

/// Deterministic generator for substream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub n: usize,
    pub d: usize,
    /// Cells per axis.
    pub m: u128,
    pub p: f64,
    pub family: ChannelFamily,
    pub seed: u64,
    /// Largest `M^d` an explicit codebook may hold.
    pub cell_cap: u128,
}

impl SearchConfig {
    pub fn new(n: usize, d: usize, m: u128, p: f64, family: ChannelFamily, seed: u64) -> Result<Self> {
        let cfg = Self { n, d, m, p, family, seed, cell_cap: DEFAULT_CELL_CAP };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n must be positive"));
        }
        if self.d == 0 {
            return Err(invalid("d must be positive"));
        }
        if self.m < 2 || self.m > (1u128 << 100) {
            return Err(invalid(format!("M must lie in [2, 2^100], got {}", self.m)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid(format!("p must lie in [0,1], got {}", self.p)));
        }
        Ok(())
    }

    /// `M^d`, or `None` on overflow.
    pub fn cells(&self) -> Option<u128> {
        checked_pow(self.m, self.d)
    }

    /// `d log M`.
    pub fn log_cells(&self) -> f64 {
        self.d as f64 * (self.m as f64).ln()
    }

    /// `M^d` as an explicit cell count within `cell_cap`.
    pub fn explicit_cells(&self) -> Result<usize> {
        match self.cells() {
            Some(c) if c <= self.cell_cap => Ok(c as usize),
            _ => Err(Error::Budget(format!(
                "M^d = {}^{} exceeds the cell cap {}",
                self.m, self.d, self.cell_cap
            ))),
        }
    }
}

pub fn checked_pow(base: u128, exp: usize) -> Option<u128> {
    (0..exp).try_fold(1u128, |acc, _| acc.checked_mul(base))
}

/// `⌈sM⌉`, with `0` mapped to the first cell.
pub fn quantize(s: f64, m: u128) -> u128 {
    let w = (s * m as f64).ceil();
    if w < 1.0 {
        1
    } else if w >= m as f64 {
        m
    } else {
        w as u128
    }
}

/// Midpoint `(2w−1)/(2M)` of cell `w`.
pub fn midpoint(w: u128, m: u128) -> f64 {
    (2.0 * w as f64 - 1.0) / (2.0 * m as f64)
}

/// `1 + Σ_j (i_j − 1) M^{d−j}`.
pub fn gamma(indices: &[u128], m: u128) -> Result<u128> {
    let mut acc: u128 = 0;
    for &i in indices {
        if i == 0 || i > m {
            return Err(invalid(format!("cell index {i} outside [1, {m}]")));
        }
        acc = acc
            .checked_mul(m)
            .and_then(|a| a.checked_add(i - 1))
            .ok_or_else(|| invalid("linear index overflows u128"))?;
    }
    acc.checked_add(1).ok_or_else(|| invalid("linear index overflows u128"))
}

pub fn gamma_inv(g: u128, m: u128, d: usize) -> Result<Vec<u128>> {
    if m < 2 {
        return Err(invalid("M must be at least 2"));
    }
    if g == 0 || checked_pow(m, d).is_some_and(|total| g > total) {
        return Err(invalid(format!("linear index {g} outside [1, M^d]")));
    }
    let mut rest = g - 1;
    let mut out = vec![0u128; d];
    for slot in out.iter_mut().rev() {
        *slot = rest % m + 1;
        rest /= m;
    }
    if rest != 0 {
        return Err(invalid(format!("linear index {g} outside [1, M^d]")));
    }
    Ok(out)
}

/// A target located by cell `w_j` and in-cell offset `f_j ∈ (0,1]` per axis, so
/// `s_j = (w_j − 1 + f_j)/M`. Keeps exact cells when `M` exceeds f64 precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub cells: Vec<u128>,
    pub offsets: Vec<f64>,
}

impl Target {
    pub fn from_point(s: &[f64], m: u128) -> Result<Self> {
        if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("target coordinates must lie in [0,1]"));
        }
        let cells: Vec<u128> = s.iter().map(|&v| quantize(v, m)).collect();
        let offsets = s
            .iter()
            .zip(&cells)
            .map(|(&v, &w)| (v * m as f64 - (w - 1) as f64).clamp(f64::MIN_POSITIVE, 1.0))
            .collect();
        Ok(Self { cells, offsets })
    }

    pub fn point(&self, m: u128) -> Vec<f64> {
        self.cells.iter().zip(&self.offsets).map(|(&w, &f)| ((w - 1) as f64 + f) / m as f64).collect()
    }

    pub fn linear(&self, m: u128) -> Result<u128> {
        gamma(&self.cells, m)
    }

    /// `|ŝ_j − s_j| > 1/M` on some axis, where `ŝ` is the midpoint of `estimate`.
    pub fn is_excess(&self, estimate: &[u128]) -> bool {
        estimate.iter().zip(self.cells.iter().zip(&self.offsets)).any(|(&e, (&w, &f))| {
            let delta = e as i128 - w as i128;
            if delta.abs() >= 2 {
                return true;
            }
            (delta as f64 + 0.5 - f).abs() > 1.0
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSampler {
    Uniform,
    Fixed(Vec<f64>),
}

impl TargetSampler {
    pub fn sample<R: Rng + ?Sized>(&self, d: usize, m: u128, rng: &mut R) -> Result<Target> {
        match self {
            Self::Uniform => {
                let cells = (0..d).map(|_| rng.random_range(1..=m)).collect();
                let offsets = (0..d).map(|_| 1.0 - rng.random::<f64>()).collect();
                Ok(Target { cells, offsets })
            }
            Self::Fixed(s) if s.len() == d => Target::from_point(s, m),
            Self::Fixed(s) => Err(invalid(format!("fixed target has {} coordinates, expected {d}", s.len()))),
        }
    }
}

/// Bernoulli(p) draw using one 64-bit word.
#[inline]
pub(crate) fn bernoulli_threshold(p: f64) -> u128 {
    (p * 18_446_744_073_709_551_616.0) as u128
}

/// `n × cells` binary matrix, stored cell by cell in 64-bit words.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub n: usize,
    pub cells: usize,
    pub words_per_cell: usize,
    pub bits: Vec<u64>,
    pub column_ones: Vec<u64>,
}

impl Codebook {
    pub fn random<R: RngCore + ?Sized>(n: usize, cells: usize, p: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("p must lie in [0,1], got {p}")));
        }
        let wpc = n.div_ceil(64);
        let mut bits = vec![0u64; wpc * cells];
        let thr = bernoulli_threshold(p);
        let tail_mask = if n % 64 == 0 { u64::MAX } else { (1u64 << (n % 64)) - 1 };
        for cell in 0..cells {
            for w in 0..wpc {
                let word = if p == 0.5 {
                    rng.next_u64()
                } else {
                    let mut acc = 0u64;
                    let width = if w + 1 == wpc { n - 64 * w } else { 64 };
                    for b in 0..width {
                        if (rng.next_u64() as u128) < thr {
                            acc |= 1 << b;
                        }
                    }
                    acc
                };
                bits[cell * wpc + w] = if w + 1 == wpc { word & tail_mask } else { word };
            }
        }
        let mut book = Self { n, cells, words_per_cell: wpc, bits, column_ones: vec![0; n] };
        book.count_columns();
        Ok(book)
    }

    fn count_columns(&mut self) {
        let mut ones = vec![0u64; self.n];
        for cell in 0..self.cells {
            for (w, &word) in self.codeword(cell).iter().enumerate() {
                let mut rest = word;
                while rest != 0 {
                    ones[64 * w + rest.trailing_zeros() as usize] += 1;
                    rest &= rest - 1;
                }
            }
        }
        self.column_ones = ones;
    }

    /// Packed codeword of zero-based cell `cell`.
    pub fn codeword(&self, cell: usize) -> &[u64] {
        &self.bits[cell * self.words_per_cell..(cell + 1) * self.words_per_cell]
    }

    /// Bit of query `t` in zero-based cell `cell`.
    pub fn bit(&self, t: usize, cell: usize) -> bool {
        (self.codeword(cell)[t / 64] >> (t % 64)) & 1 == 1
    }

    /// Realized query size `q_t`.
    pub fn query_size(&self, t: usize) -> f64 {
        self.column_ones[t] as f64 / self.cells as f64
    }

    /// Writes an 8-byte header `(n, cells)` as little-endian u32, then each
    /// query row as packed bits.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.n as u32).to_le_bytes())?;
        out.write_all(&(self.cells as u32).to_le_bytes())?;
        let row_bytes = self.cells.div_ceil(8);
        for t in 0..self.n {
            let mut row = vec![0u8; row_bytes];
            for cell in 0..self.cells {
                if self.bit(t, cell) {
                    row[cell / 8] |= 1 << (cell % 8);
                }
            }
            out.write_all(&row)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Parse(e.to_string());
        let mut header = [0u8; 8];
        input.read_exact(&mut header).map_err(io)?;
        let n = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
        let cells = u32::from_le_bytes(header[4..].try_into().expect("4 bytes")) as usize;
        let wpc = n.div_ceil(64);
        let mut bits = vec![0u64; wpc * cells];
        let mut row = vec![0u8; cells.div_ceil(8)];
        for t in 0..n {
            input.read_exact(&mut row).map_err(io)?;
            for cell in 0..cells {
                if (row[cell / 8] >> (cell % 8)) & 1 == 1 {
                    bits[cell * wpc + t / 64] |= 1 << (t % 64);
                }
            }
        }
        let mut book = Self { n, cells, words_per_cell: wpc, bits, column_ones: vec![0; n] };
        book.count_columns();
        Ok(book)
    }
}

pub fn generate_codebook(config: &SearchConfig) -> Result<Codebook> {
    config.validate()?;
    let cells = config.explicit_cells()?;
    Codebook::random(config.n, cells, config.p, &mut stream_rng(config.seed, 0))
}

/// Noisy responses for targets at zero-based cells `targets`; the oracle bit is
/// their OR and the channel runs at the realized query size.
pub fn oracle_and_noise<R: Rng + ?Sized>(
    codebook: &Codebook,
    targets: &[usize],
    family: &ChannelFamily,
    rng: &mut R,
) -> Vec<usize> {
    (0..codebook.n)
        .map(|t| {
            let z = targets.iter().any(|&c| codebook.bit(t, c));
            family.sample_output(codebook.query_size(t), usize::from(z), rng)
        })
        .collect()
}
