//! Measurement-dependent binary-input channels.
//!
//! A family maps a query size `q` to a 2-row stochastic matrix. Every entry is
//! affine in `q`, which keeps derivatives and continuity bounds in closed form.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Index of the erasure symbol in the BEC output alphabet.
pub const ERASURE: usize = 2;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelFamily {
    /// Flip probability `nu * q` for both inputs.
    Bsc { nu: f64 },
    /// Erasure probability `tau * q`, erasure encoded as output 2.
    Bec { tau: f64 },
    /// `P(0|1) = zeta * q`, input 0 is noiseless.
    Z { zeta: f64 },
    /// Query-size independent channel with explicit rows.
    Constant { rows: [Vec<f64>; 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub query_size: f64,
    pub rows: [Vec<f64>; 2],
}

impl ChannelMatrix {
    pub fn output_size(&self) -> usize {
        self.rows[0].len()
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.rows[x][y]
    }
}

fn check_unit(name: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(invalid(format!("{name} must lie in [0,1], got {v}")))
    }
}

impl ChannelFamily {
    pub fn bsc(nu: f64) -> Result<Self> {
        Ok(Self::Bsc { nu: check_unit("nu", nu)? })
    }

    pub fn bec(tau: f64) -> Result<Self> {
        Ok(Self::Bec { tau: check_unit("tau", tau)? })
    }

    pub fn z(zeta: f64) -> Result<Self> {
        Ok(Self::Z { zeta: check_unit("zeta", zeta)? })
    }

    pub fn constant(rows: [Vec<f64>; 2]) -> Result<Self> {
        if rows[0].len() != rows[1].len() || rows[0].is_empty() {
            return Err(invalid("constant channel rows must have equal, nonzero length"));
        }
        for row in &rows {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(invalid("constant channel entries must be finite and nonnegative"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(invalid(format!("constant channel row sums to {sum}")));
            }
        }
        Ok(Self::Constant { rows })
    }

    /// Reads the text format `2 |Y|` followed by two rows of `|Y|` probabilities.
    pub fn constant_from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("{what}: {e}")))
        };
        let inputs = next_usize("input alphabet size")?;
        let outputs = next_usize("output alphabet size")?;
        if inputs != 2 {
            return Err(Error::Parse(format!("input alphabet size must be 2, got {inputs}")));
        }
        let values: Vec<f64> = tokens
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != 2 * outputs {
            return Err(Error::Parse(format!(
                "expected {} probabilities, found {}",
                2 * outputs,
                values.len()
            )));
        }
        Self::constant([values[..outputs].to_vec(), values[outputs..].to_vec()])
    }

    pub fn output_size(&self) -> usize {
        match self {
            Self::Bsc { .. } | Self::Z { .. } => 2,
            Self::Bec { .. } => 3,
            Self::Constant { rows } => rows[0].len(),
        }
    }

    pub fn output_label(&self, y: usize) -> String {
        match (self, y) {
            (Self::Bec { .. }, ERASURE) => "e".to_string(),
            _ => y.to_string(),
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            Self::Bsc { nu } => Some(nu),
            Self::Bec { tau } => Some(tau),
            Self::Z { zeta } => Some(zeta),
            Self::Constant { .. } => None,
        }
    }

    /// Rebuilds the family with a new noise parameter; constant channels are unchanged.
    pub fn with_parameter(&self, value: f64) -> Result<Self> {
        match self {
            Self::Bsc { .. } => Self::bsc(value),
            Self::Bec { .. } => Self::bec(value),
            Self::Z { .. } => Self::z(value),
            Self::Constant { .. } => Ok(self.clone()),
        }
    }

    /// `P^q(y|x) = base + slope * q`.
    pub fn affine(&self, x: usize, y: usize) -> (f64, f64) {
        match *self {
            Self::Bsc { nu } => {
                if x == y {
                    (1.0, -nu)
                } else {
                    (0.0, nu)
                }
            }
            Self::Bec { tau } => {
                if y == ERASURE {
                    (0.0, tau)
                } else if x == y {
                    (1.0, -tau)
                } else {
                    (0.0, 0.0)
                }
            }
            Self::Z { zeta } => match (x, y) {
                (0, 0) => (1.0, 0.0),
                (0, _) => (0.0, 0.0),
                (_, 0) => (0.0, zeta),
                _ => (1.0, -zeta),
            },
            Self::Constant { ref rows } => (rows[x][y], 0.0),
        }
    }

    pub fn prob(&self, q: f64, x: usize, y: usize) -> f64 {
        let (base, slope) = self.affine(x, y);
        if slope == 0.0 {
            base
        } else {
            base + slope * q
        }
    }

    /// `d/dq P^q(y|x)`.
    pub fn prob_slope(&self, x: usize, y: usize) -> f64 {
        self.affine(x, y).1
    }

    pub fn matrix_at(&self, q: f64) -> Result<ChannelMatrix> {
        if q.is_nan() || !(0.0..=1.0).contains(&q) {
            return Err(invalid(format!("query size must lie in [0,1], got {q}")));
        }
        let k = self.output_size();
        let row = |x: usize| (0..k).map(|y| self.prob(q, x, y)).collect::<Vec<_>>();
        Ok(ChannelMatrix { query_size: q, rows: [row(0), row(1)] })
    }

    /// Samples an output for input `x` through the channel at query size `q`.
    pub fn sample_output<R: Rng + ?Sized>(&self, q: f64, x: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let k = self.output_size();
        let mut acc = 0.0;
        let mut last = 0;
        for y in 0..k {
            let p = self.prob(q, x, y);
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = y;
            if u < acc {
                return y;
            }
        }
        last
    }

    /// The same channel evaluated at full query size, frozen into a constant matrix.
    pub fn measurement_independent(&self) -> Self {
        match self {
            Self::Constant { .. } => self.clone(),
            _ => {
                let k = self.output_size();
                let row = |x: usize| (0..k).map(|y| self.prob(1.0, x, y)).collect::<Vec<_>>();
                Self::Constant { rows: [row(0), row(1)] }
            }
        }
    }

    /// Local Lipschitz constant of `log P^q(y|x)` on `[q - xi0, q + xi0]`.
    pub fn continuity_constant(&self, q: f64, xi0: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(invalid(format!("q must lie in (0,1), got {q}")));
        }
        if !(xi0 > 0.0 && xi0 < q.min(1.0 - q)) {
            return Err(invalid(format!("window {xi0} must lie in (0, min(q, 1-q))")));
        }
        let mut c: f64 = 0.0;
        for x in 0..2 {
            for y in 0..self.output_size() {
                let (base, slope) = self.affine(x, y);
                if slope == 0.0 {
                    continue;
                }
                let lo = base + slope * (q - xi0);
                let hi = base + slope * (q + xi0);
                if lo <= 0.0 || hi <= 0.0 {
                    return Err(Error::ContinuityViolation { x, y });
                }
                // |slope / P| is monotone in q', so its sup sits at an endpoint.
                c = c.max(slope.abs() / lo.min(hi));
            }
        }
        Ok(c)
    }
}

impl fmt::Display for ChannelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bsc { nu } => write!(f, "bsc:{nu}"),
            Self::Bec { tau } => write!(f, "bec:{tau}"),
            Self::Z { zeta } => write!(f, "z:{zeta}"),
            Self::Constant { rows } => {
                let row = |r: &Vec<f64>| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
                write!(f, "const:{};{}", row(&rows[0]), row(&rows[1]))
            }
        }
    }
}

impl FromStr for ChannelFamily {
    type Err = Error;

    /// Accepts `bsc:0.4`, `bec:0.5`, `z:0.3` or `const:a,b;c,d`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected kind:parameter, got '{s}'")))?;
        let number = |t: &str| t.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{t}': {e}")));
        match kind.trim().to_ascii_lowercase().as_str() {
            "bsc" => Self::bsc(number(arg)?),
            "bec" => Self::bec(number(arg)?),
            "z" => Self::z(number(arg)?),
            "const" | "constant" => {
                let rows: Vec<Vec<f64>> = arg
                    .split(';')
                    .map(|r| r.split(',').map(number).collect::<Result<Vec<_>>>())
                    .collect::<Result<_>>()?;
                match <[Vec<f64>; 2]>::try_from(rows) {
                    Ok(rows) => Self::constant(rows),
                    Err(_) => Err(Error::Parse("constant channel needs exactly two rows".into())),
                }
            }
            other => Err(Error::Parse(format!("unknown channel family '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bsc_entries() {
        let m = ChannelFamily::bsc(0.4).unwrap().matrix_at(0.5).unwrap();
        assert_abs_diff_eq!(m.prob(0, 1), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(m.prob(1, 1), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn bec_at_zero_is_identity() {
        let m = ChannelFamily::bec(1.0).unwrap().matrix_at(0.0).unwrap();
        assert_eq!(m.rows, [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    }

    #[test]
    fn z_entries() {
        let m = ChannelFamily::z(0.3).unwrap().matrix_at(1.0).unwrap();
        assert_abs_diff_eq!(m.prob(1, 0), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(m.prob(1, 1), 0.7, epsilon = 1e-15);
        assert_eq!(m.prob(0, 0), 1.0);
        assert_eq!(m.prob(0, 1), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ChannelFamily::bsc(1.5).is_err());
        assert!(ChannelFamily::bsc(0.2).unwrap().matrix_at(f64::NAN).is_err());
        assert!(ChannelFamily::constant([vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn continuity_examples() {
        let c = ChannelFamily::bsc(0.4).unwrap().continuity_constant(0.5, 0.1).unwrap();
        assert_abs_diff_eq!(c, 2.5, epsilon = 1e-12);
        let constant = ChannelFamily::constant([vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        assert_eq!(constant.continuity_constant(0.3, 0.1).unwrap(), 0.0);
        assert_eq!(ChannelFamily::bec(0.0).unwrap().continuity_constant(0.3, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn continuity_grows_near_the_boundary() {
        let family = ChannelFamily::bsc(1.0).unwrap();
        let near = family.continuity_constant(0.9, 0.0999).unwrap();
        assert_abs_diff_eq!(near, 1.0 / (1.0 - 0.9999), epsilon = 1e-6);
        assert!(family.continuity_constant(0.9, 0.1).is_err());
        assert!(family.continuity_constant(0.0, 0.1).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for s in ["bsc:0.4", "bec:0.25", "z:1", "const:0.9,0.1;0.2,0.8"] {
            let family: ChannelFamily = s.parse().unwrap();
            assert_eq!(family.to_string(), s);
        }
        assert!("gauss:1".parse::<ChannelFamily>().is_err());
    }

    #[test]
    fn text_ingestion() {
        let family = ChannelFamily::constant_from_text("2 3\n0.7 0.2 0.1\n0.1 0.2 0.7\n").unwrap();
        assert_eq!(family.output_size(), 3);
        assert!(ChannelFamily::constant_from_text("2 2\n0.5 0.5\n").is_err());
    }
}
