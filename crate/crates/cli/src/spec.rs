//! Experiment specifications: parsing, merging and default resolution.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::failure::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CapacitySweep,
    RateCompare,
    Gain,
    PhaseTransition,
    SimNonadaptive,
    SimMultitarget,
    SimAdaptive,
    Bounds,
    BerryEsseen,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::CapacitySweep => "capacity-sweep",
            Self::RateCompare => "rate-compare",
            Self::Gain => "gain",
            Self::PhaseTransition => "phase-transition",
            Self::SimNonadaptive => "sim-nonadaptive",
            Self::SimMultitarget => "sim-multitarget",
            Self::SimAdaptive => "sim-adaptive",
            Self::Bounds => "bounds",
            Self::BerryEsseen => "berry-esseen",
        }
    }

    /// Fields the command reads, besides `seed`, `units` and `output`.
    fn fields(self) -> &'static [&'static str] {
        match self {
            Self::CapacitySweep => &["family", "params", "grid_step"],
            Self::RateCompare => &["family", "params", "n", "d", "eps"],
            Self::Gain => &["family", "n", "d", "eps"],
            Self::PhaseTransition => &["family", "n", "d", "factors", "trials", "engine"],
            Self::SimNonadaptive => {
                &["family", "n", "d", "eps", "trials", "m", "p", "engine", "separate", "freeze_codebook", "third_order"]
            }
            Self::SimMultitarget => &["family", "n", "k", "d", "eps", "trials", "m", "gamma", "grid_step", "third_order"],
            Self::SimAdaptive => &["family", "n", "d", "eps", "trials", "m", "p", "eps_split", "max_steps", "tau_histogram"],
            Self::Bounds => &["family", "n", "d", "m", "eps", "p", "eta", "samples", "beta", "kappa"],
            Self::BerryEsseen => &["family", "n", "q"],
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

impl Units {
    /// Converts an information quantity from nats.
    pub fn rate(self, nats: f64) -> f64 {
        match self {
            Self::Nats => nats,
            Self::Bits => nats / std::f64::consts::LN_2,
        }
    }

    /// Converts a variance from nats².
    pub fn variance(self, nats2: f64) -> f64 {
        match self {
            Self::Nats => nats2,
            Self::Bits => nats2 / (std::f64::consts::LN_2 * std::f64::consts::LN_2),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Nats => "nats",
            Self::Bits => "bits",
        }
    }
}

/// A list of sizes written as `60`, `50,100` or `start:stop:step`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SizesRepr", into = "Vec<usize>")]
pub struct Sizes(pub Vec<usize>);

#[derive(Deserialize)]
#[serde(untagged)]
enum SizesRepr {
    One(usize),
    Many(Vec<usize>),
    Text(String),
}

impl TryFrom<SizesRepr> for Sizes {
    type Error = String;

    fn try_from(repr: SizesRepr) -> Result<Self, String> {
        match repr {
            SizesRepr::One(n) => Ok(Sizes(vec![n])),
            SizesRepr::Many(v) if !v.is_empty() => Ok(Sizes(v)),
            SizesRepr::Many(_) => Err("empty size list".into()),
            SizesRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Sizes> for Vec<usize> {
    fn from(s: Sizes) -> Self {
        s.0
    }
}

impl FromStr for Sizes {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("cannot read sizes from '{s}'");
        let parts: Vec<&str> = s.split(':').collect();
        let sizes: Vec<usize> = match parts.as_slice() {
            [start, stop, step] => {
                let (a, b, c): (usize, usize, usize) =
                    (start.parse().map_err(|_| bad())?, stop.parse().map_err(|_| bad())?, step.parse().map_err(|_| bad())?);
                if c == 0 || a > b {
                    return Err(bad());
                }
                (a..=b).step_by(c).collect()
            }
            [list] => list.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?,
            _ => return Err(bad()),
        };
        if sizes.is_empty() {
            return Err(bad());
        }
        Ok(Sizes(sizes))
    }
}

/// Every experiment parameter; unset fields fall back to the file, then to defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spec {
    /// Channel family: `bsc:0.4`, `bec:0.5`, `z:0.3`, `const:a,b;c,d`, `file:PATH`, or a bare kind with --params.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Family parameters swept by capacity-sweep and rate-compare.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    /// Number of queries: `60`, `50,100` or `20:80:10`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Sizes>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Number of targets.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Target excess-resolution probability; gain accepts a list.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// Falls back to QRES_SEED, then 0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<Units>,
    /// Data file; the resolved spec is written next to it as `<stem>.spec.json`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Cells per axis, overriding the recipe.
    #[arg(long = "M")]
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<u64>,
    /// Codebook Bernoulli parameter, overriding the capacity-achieving one.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Query size for berry-esseen.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    /// `auto`, `explicit` or `iid-limit`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    /// Search each axis alone with n/d queries.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separate: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_codebook: Option<bool>,
    /// `none`, `minus-half-log` or `plus-log`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub third_order: Option<String>,
    /// Decoder threshold offset; defaults to ½ log n per row.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Multiples of nC/d used as d log M.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factors: Option<Vec<f64>>,
    /// Skip querying with probability (l'ε − 1)/(l' − 1).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_split: Option<bool>,
    /// Censoring cap, as a multiple of n.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Also write per-trial stopping-time counts here.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_histogram: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Monte Carlo samples for the achievability bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

fn to_map(spec: &Spec) -> Map<String, Value> {
    match serde_json::to_value(spec) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

/// Reads a spec file: a JSON object with `command` and any spec fields.
pub fn read_file(text: &str) -> Result<(Command, Spec), Failure> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Failure::invalid(format!("spec file: {e}")))?;
    let obj = value.as_object_mut().ok_or_else(|| Failure::invalid("spec file must hold a JSON object"))?;
    let command = obj.remove("command").ok_or_else(|| Failure::invalid("spec file lacks the `command` field"))?;
    let command: Command =
        serde_json::from_value(command).map_err(|e| Failure::invalid(format!("spec file `command`: {e}")))?;
    let spec: Spec = serde_json::from_value(value).map_err(|e| Failure::invalid(format!("spec file: {e}")))?;
    Ok((command, spec))
}

/// Fields set in `flags` win over those in `file`.
pub fn merge(file: &Spec, flags: &Spec) -> Result<Spec, Failure> {
    let mut merged = to_map(file);
    merged.extend(to_map(flags));
    serde_json::from_value(Value::Object(merged)).map_err(|e| Failure::invalid(e.to_string()))
}

/// Rejects fields the command does not read, then fills defaults.
pub fn resolve(command: Command, mut spec: Spec, env_seed: Option<&str>) -> Result<Spec, Failure> {
    let allowed = command.fields();
    for key in to_map(&spec).keys() {
        if !["seed", "units", "output"].contains(&key.as_str()) && !allowed.contains(&key.to_lowercase().as_str()) {
            return Err(Failure::invalid(format!("field `{key}` does not apply to {command}")));
        }
    }
    if spec.family.is_none() {
        return Err(Failure::invalid(format!("{command} needs `family`")));
    }
    if spec.seed.is_none() {
        spec.seed = Some(match env_seed {
            Some(s) => s.trim().parse().map_err(|_| Failure::invalid(format!("QRES_SEED is not a u64: '{s}'")))?,
            None => 0,
        });
    }
    spec.units.get_or_insert(Units::Nats);

    let needs_n = !matches!(command, Command::CapacitySweep | Command::RateCompare);
    if needs_n && spec.n.is_none() {
        return Err(Failure::invalid(format!("{command} needs `n`")));
    }
    let uses = |f: &str| allowed.contains(&f);
    if uses("d") {
        spec.d.get_or_insert(1);
    }
    if uses("eps") {
        spec.eps.get_or_insert_with(|| vec![0.1]);
    }
    if uses("trials") {
        spec.trials.get_or_insert(match command {
            Command::PhaseTransition => 1000,
            _ => 10_000,
        });
    }
    if uses("engine") {
        spec.engine.get_or_insert_with(|| "auto".into());
    }
    if uses("separate") {
        spec.separate.get_or_insert(false);
    }
    if uses("freeze_codebook") {
        spec.freeze_codebook.get_or_insert(false);
    }
    if uses("third_order") {
        spec.third_order.get_or_insert_with(|| match command {
            Command::SimMultitarget => "minus-half-log".into(),
            _ => "none".into(),
        });
    }
    if uses("grid_step") {
        spec.grid_step.get_or_insert(match command {
            Command::CapacitySweep => 0.01,
            _ => 1e-4,
        });
    }
    if uses("k") {
        spec.k.get_or_insert(2);
    }
    if uses("factors") {
        spec.factors.get_or_insert_with(|| vec![0.9, 1.1]);
    }
    if uses("eps_split") {
        spec.eps_split.get_or_insert(true);
    }
    if uses("max_steps") {
        spec.max_steps.get_or_insert(20);
    }
    if uses("samples") {
        spec.samples.get_or_insert(10_000);
    }
    Ok(spec)
}

/// The resolved spec as written next to outputs.
pub fn to_json(command: Command, spec: &Spec) -> String {
    let mut map = Map::new();
    map.insert("command".into(), Value::String(command.name().into()));
    map.extend(to_map(spec));
    let mut text = serde_json::to_string_pretty(&Value::Object(map)).unwrap_or_default();
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_forms() {
        assert_eq!("20:80:10".parse::<Sizes>().unwrap().0, vec![20, 30, 40, 50, 60, 70, 80]);
        assert_eq!("50,100".parse::<Sizes>().unwrap().0, vec![50, 100]);
        assert_eq!("7".parse::<Sizes>().unwrap().0, vec![7]);
        assert!("9:1:1".parse::<Sizes>().is_err());
        assert!("1:2:0".parse::<Sizes>().is_err());
        let s: Sizes = serde_json::from_str("\"1:3:1\"").unwrap();
        assert_eq!(s.0, vec![1, 2, 3]);
        let s: Sizes = serde_json::from_str("[4,5]").unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "[4,5]");
    }

    #[test]
    fn flags_override_file() {
        let (cmd, file) = read_file(r#"{"command":"gain","family":"bsc:0.4","n":[10],"d":2}"#).unwrap();
        assert_eq!(cmd, Command::Gain);
        let flags = Spec { d: Some(3), ..Spec::default() };
        let merged = merge(&file, &flags).unwrap();
        assert_eq!(merged.d, Some(3));
        assert_eq!(merged.family.as_deref(), Some("bsc:0.4"));
    }

    #[test]
    fn unknown_and_foreign_fields_are_rejected() {
        assert!(read_file(r#"{"command":"gain","family":"bsc:0.4","bogus":1}"#).is_err());
        assert!(read_file(r#"{"family":"bsc:0.4"}"#).is_err());
        let spec = Spec { family: Some("bsc:0.4".into()), n: Some(Sizes(vec![5])), trials: Some(3), ..Spec::default() };
        assert!(resolve(Command::Gain, spec, None).is_err());
    }

    #[test]
    fn seed_fallback_order() {
        let base = Spec { family: Some("bsc:0.4".into()), n: Some(Sizes(vec![5])), ..Spec::default() };
        assert_eq!(resolve(Command::Gain, base.clone(), Some("17")).unwrap().seed, Some(17));
        let flagged = Spec { seed: Some(3), ..base.clone() };
        assert_eq!(resolve(Command::Gain, flagged, Some("17")).unwrap().seed, Some(3));
        assert_eq!(resolve(Command::Gain, base.clone(), None).unwrap().seed, Some(0));
        assert!(resolve(Command::Gain, base, Some("x")).is_err());
    }

    #[test]
    fn resolved_spec_round_trips() {
        let spec = Spec { family: Some("bsc:0.4".into()), n: Some(Sizes(vec![20, 30])), ..Spec::default() };
        let resolved = resolve(Command::SimAdaptive, spec, None).unwrap();
        let (cmd, back) = read_file(&to_json(Command::SimAdaptive, &resolved)).unwrap();
        assert_eq!(cmd, Command::SimAdaptive);
        assert_eq!(back, resolved);
    }
}
