//! One runner per command, turning a resolved spec into output bytes.

use std::path::PathBuf;

use qres::adaptive::{run_adaptive, verify_stopping_bounds, AdaptiveConfig, AdaptiveOptions, EpsSplit};
use qres::asymptotics::{
    adaptive_resolution_bound, adaptivity_gain_lower, capacity_default, dispersion_for_eps, mi_capacity,
    second_order_resolution, separate_search_resolution, stats_at, ThirdOrder,
};
use qres::bounds::{achievability_bound, converse_bound, default_q_grid};
use qres::multitarget::{multi_target_optimize, multi_target_resolution};
use qres::nonadaptive::{run_multi_target, run_separate_search, run_single_target, Engine, MultiTargetOptions, SimOptions};
use qres::recipes::{adaptive_recipe, multi_target_recipe, single_target_recipe};
use qres::search::SearchConfig;
use qres::{berry_esseen_gap, density_table, gaussian_cdf, ChannelFamily};
use serde_json::{json, Value};

use crate::failure::Failure;
use crate::spec::{Command, Spec, Units};

/// Bytes to write, plus checks that did not hold.
#[derive(Debug, Default)]
pub struct Report {
    pub body: Vec<u8>,
    pub extras: Vec<(PathBuf, Vec<u8>)>,
    pub failed_checks: Vec<String>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn into_bytes(self) -> Result<Vec<u8>, Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| Failure::Io(e.to_string()))
    }
}

fn cell(v: impl ToString) -> String {
    v.to_string()
}

/// Parses a family string; `file:PATH` reads a constant matrix from a text file.
pub fn parse_family(text: &str) -> Result<ChannelFamily, Failure> {
    match text.strip_prefix("file:") {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("{path}: {e}")))?;
            Ok(ChannelFamily::constant_from_text(&body)?)
        }
        None => Ok(text.parse()?),
    }
}

/// `kind` together with a parameter, or a full family string with its parameter replaced.
fn family_at(text: &str, param: f64) -> Result<ChannelFamily, Failure> {
    if text.contains(':') {
        Ok(parse_family(text)?.with_parameter(param)?)
    } else {
        Ok(format!("{text}:{param}").parse()?)
    }
}

struct Ctx<'a> {
    spec: &'a Spec,
    units: Units,
    seed: u64,
}

impl Ctx<'_> {
    fn family(&self) -> Result<ChannelFamily, Failure> {
        parse_family(self.spec.family.as_deref().unwrap_or_default())
    }

    /// Families to sweep: one per `params` entry, or the family itself.
    fn swept(&self) -> Result<Vec<(f64, ChannelFamily)>, Failure> {
        let text = self.spec.family.as_deref().unwrap_or_default();
        match &self.spec.params {
            Some(params) => params.iter().map(|&v| family_at(text, v).map(|f| (v, f))).collect(),
            None => {
                let fam = parse_family(text)?;
                let v = fam.parameter().ok_or_else(|| Failure::invalid("a constant family needs no sweep; give a parameterized family"))?;
                Ok(vec![(v, fam)])
            }
        }
    }

    fn sizes(&self) -> &[usize] {
        self.spec.n.as_ref().map(|s| s.0.as_slice()).unwrap_or(&[])
    }

    fn d(&self) -> usize {
        self.spec.d.unwrap_or(1)
    }

    fn eps(&self) -> Result<f64, Failure> {
        match self.spec.eps.as_deref() {
            Some([e]) => Ok(*e),
            _ => Err(Failure::invalid("this command takes a single `eps`")),
        }
    }

    fn third(&self) -> Result<ThirdOrder, Failure> {
        Ok(self.spec.third_order.as_deref().unwrap_or("none").parse()?)
    }

    fn rate_col(&self, name: &str) -> String {
        format!("{name}_{}", self.units.label())
    }

    fn rate(&self, nats: f64) -> String {
        cell(self.units.rate(nats))
    }

    /// Seed for the `i`-th row.
    fn row_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }
}

pub fn run(command: Command, spec: &Spec) -> Result<Report, Failure> {
    let ctx = Ctx { spec, units: spec.units.unwrap_or_default(), seed: spec.seed.unwrap_or(0) };
    match command {
        Command::CapacitySweep => capacity_sweep(&ctx),
        Command::RateCompare => rate_compare(&ctx),
        Command::Gain => gain(&ctx),
        Command::PhaseTransition => phase_transition(&ctx),
        Command::SimNonadaptive => sim_nonadaptive(&ctx),
        Command::SimMultitarget => sim_multitarget(&ctx),
        Command::SimAdaptive => sim_adaptive(&ctx),
        Command::Bounds => bounds(&ctx),
        Command::BerryEsseen => berry_esseen(&ctx),
    }
}

fn csv_report(table: Table) -> Result<Report, Failure> {
    Ok(Report { body: table.into_bytes()?, ..Report::default() })
}

fn capacity_sweep(ctx: &Ctx) -> Result<Report, Failure> {
    let step = ctx.spec.grid_step.unwrap_or(0.01);
    if !(step > 0.0 && step < 0.5) {
        return Err(Failure::invalid(format!("grid_step must lie in (0, 0.5), got {step}")));
    }
    let u = ctx.units.label();
    let mut t = Table::new(&["param", "q", &format!("C_{u}"), &format!("V_{u}2")]);
    let points = (1.0 / step).round() as usize;
    for (param, fam) in ctx.swept()? {
        for i in 1..points {
            let q = i as f64 * step;
            let s = stats_at(&fam, q)?;
            t.push(vec![cell(param), cell(q), ctx.rate(s.c), cell(ctx.units.variance(s.v))]);
        }
    }
    csv_report(t)
}

fn rate_compare(ctx: &Ctx) -> Result<Report, Failure> {
    let (d, eps) = (ctx.d(), ctx.eps()?);
    let with_n = ctx.spec.n.is_some();
    let mut header = vec!["param".to_string(), "q_star".into(), ctx.rate_col("md_rate"), ctx.rate_col("mi_rate")];
    if with_n {
        header.extend(["n".into(), ctx.rate_col("md_neg_log_delta"), ctx.rate_col("mi_neg_log_delta")]);
    }
    let mut t = Table { header, rows: Vec::new() };
    for (param, fam) in ctx.swept()? {
        let md = capacity_default(&fam)?;
        let mi = mi_capacity(&fam)?;
        let base = vec![cell(param), cell(md.maximizer_for_eps(eps)), ctx.rate(md.c), ctx.rate(mi.c)];
        if !with_n {
            t.push(base);
            continue;
        }
        for &n in ctx.sizes() {
            let md_res = second_order_resolution(md.c, dispersion_for_eps(&md, eps)?, n, d, eps, ThirdOrder::None)?;
            let mi_res = second_order_resolution(mi.c, dispersion_for_eps(&mi, eps)?, n, d, eps, ThirdOrder::None)?;
            let mut row = base.clone();
            row.extend([cell(n), ctx.rate(md_res), ctx.rate(mi_res)]);
            t.push(row);
        }
    }
    csv_report(t)
}

fn gain(ctx: &Ctx) -> Result<Report, Failure> {
    let fam = ctx.family()?;
    let cap = capacity_default(&fam)?;
    let d = ctx.d();
    let header = ["n".to_string(), "eps".into(), ctx.rate_col("nonadaptive"), ctx.rate_col("adaptive"), ctx.rate_col("gain")];
    let mut t = Table { header: header.to_vec(), rows: Vec::new() };
    for &eps in ctx.spec.eps.as_deref().unwrap_or(&[0.1]) {
        let v = dispersion_for_eps(&cap, eps)?;
        for &n in ctx.sizes() {
            let non = second_order_resolution(cap.c, v, n, d, eps, ThirdOrder::None)?;
            let ada = adaptive_resolution_bound(cap.c, n as f64, d, eps)?;
            let g = adaptivity_gain_lower(cap.c, v, n, d, eps)?;
            t.push(vec![cell(n), cell(eps), ctx.rate(non), ctx.rate(ada), ctx.rate(g)]);
        }
    }
    csv_report(t)
}

fn engine(ctx: &Ctx) -> Result<Engine, Failure> {
    Ok(ctx.spec.engine.as_deref().unwrap_or("auto").parse()?)
}

fn sim_header(ctx: &Ctx) -> Vec<String> {
    vec![
        "n".into(),
        "M".into(),
        "delta".into(),
        "empirical_rate".into(),
        "halfwidth".into(),
        "decode_error_rate".into(),
        ctx.rate_col("theory_resolution"),
        ctx.rate_col("log_M"),
    ]
}

fn m_override(ctx: &Ctx) -> Option<u128> {
    ctx.spec.m.map(u128::from)
}

fn phase_transition(ctx: &Ctx) -> Result<Report, Failure> {
    let fam = ctx.family()?;
    let cap = capacity_default(&fam)?;
    let d = ctx.d();
    let trials = ctx.spec.trials.unwrap_or(1000);
    let mut options = SimOptions::new(trials);
    options.engine = engine(ctx)?;
    let mut t = Table::new(&["n", "factor", "M", "empirical_rate", "halfwidth", "theory_rate"]);
    let mut row = 0;
    for &n in ctx.sizes() {
        for &factor in ctx.spec.factors.as_deref().unwrap_or(&[0.9, 1.1]) {
            let log_m = factor * n as f64 * cap.c / d as f64;
            let m = qres::recipes::cells_from_log(log_m)?;
            let cfg = SearchConfig::new(n, d, m, cap.maximizers[0], fam.clone(), ctx.row_seed(row))?;
            row += 1;
            let stats = run_single_target(&cfg, &options)?;
            let predicted = gaussian_cdf((factor - 1.0) * n as f64 * cap.c / (n as f64 * cap.v_low).sqrt());
            t.push(vec![
                cell(n),
                cell(factor),
                cell(m),
                cell(stats.empirical_rate()),
                cell(stats.half_width()),
                cell(predicted),
            ]);
        }
    }
    csv_report(t)
}

fn sim_nonadaptive(ctx: &Ctx) -> Result<Report, Failure> {
    let fam = ctx.family()?;
    let cap = capacity_default(&fam)?;
    let (d, eps) = (ctx.d(), ctx.eps()?);
    let separate = ctx.spec.separate.unwrap_or(false);
    let third = ctx.third()?;
    let p = ctx.spec.p.unwrap_or_else(|| cap.maximizer_for_eps(eps));
    let mut options = SimOptions::new(ctx.spec.trials.unwrap_or(10_000));
    options.engine = engine(ctx)?;
    options.freeze_codebook = ctx.spec.freeze_codebook.unwrap_or(false);
    let mut t = Table { header: sim_header(ctx), rows: Vec::new() };
    for (i, &n) in ctx.sizes().iter().enumerate() {
        let (m, theory) = if separate {
            if d < 2 {
                return Err(Failure::invalid("separate search needs d >= 2"));
            }
            let v_split = dispersion_for_eps(&cap, eps / d as f64)?;
            let m = match m_override(ctx) {
                Some(m) => m,
                None => single_target_recipe(&cap, n / d, 1, eps / d as f64)?.m,
            };
            (m, separate_search_resolution(cap.c, v_split, n, d, eps)?)
        } else {
            let m = match m_override(ctx) {
                Some(m) => m,
                None => single_target_recipe(&cap, n, d, eps)?.m,
            };
            (m, second_order_resolution(cap.c, dispersion_for_eps(&cap, eps)?, n, d, eps, third)?)
        };
        let cfg = SearchConfig::new(n, d, m, p, fam.clone(), ctx.row_seed(i))?;
        let stats = if separate { run_separate_search(&cfg, &options)? } else { run_single_target(&cfg, &options)? };
        t.push(sim_row(ctx, n, m, stats.delta, &stats, theory));
    }
    csv_report(t)
}

fn sim_row(ctx: &Ctx, n: usize, m: u128, delta: f64, stats: &qres::nonadaptive::TrialStats, theory: f64) -> Vec<String> {
    vec![
        cell(n),
        cell(m),
        cell(delta),
        cell(stats.empirical_rate()),
        cell(stats.half_width()),
        cell(stats.decode_error_rate()),
        ctx.rate(theory),
        ctx.rate((m as f64).ln()),
    ]
}

fn sim_multitarget(ctx: &Ctx) -> Result<Report, Failure> {
    let fam = ctx.family()?;
    let (d, eps) = (ctx.d(), ctx.eps()?);
    let k = ctx.spec.k.unwrap_or(2);
    let mt = multi_target_optimize(&fam, k, ctx.spec.grid_step.unwrap_or(1e-4))?;
    let third = ctx.third()?;
    let options = MultiTargetOptions::new(ctx.spec.trials.unwrap_or(10_000));
    let mut header = sim_header(ctx);
    header.extend(["t_star".into(), ctx.rate_col("gamma")]);
    let mut t = Table { header, rows: Vec::new() };
    for (i, &n) in ctx.sizes().iter().enumerate() {
        let recipe = multi_target_recipe(&mt, n, d, eps)?;
        let m = m_override(ctx).unwrap_or(recipe.m);
        let gamma = ctx.spec.gamma.unwrap_or(recipe.gamma);
        let cfg = SearchConfig::new(n, d, m, mt.p_star, fam.clone(), ctx.row_seed(i))?;
        let stats = run_multi_target(&cfg, k, gamma, &options)?;
        let theory = multi_target_resolution(&mt, n, d, eps, third)?;
        let mut row = sim_row(ctx, n, m, stats.delta, &stats, theory);
        row.extend([cell(mt.t_star), ctx.rate(gamma)]);
        t.push(row);
    }
    csv_report(t)
}

fn sim_adaptive(ctx: &Ctx) -> Result<Report, Failure> {
    let fam = ctx.family()?;
    let cap = capacity_default(&fam)?;
    let (d, eps) = (ctx.d(), ctx.eps()?);
    let p = ctx.spec.p.unwrap_or(cap.maximizers[0]);
    let trials = ctx.spec.trials.unwrap_or(10_000);
    let split = ctx.spec.eps_split.unwrap_or(true);
    let steps_factor = ctx.spec.max_steps.unwrap_or(20);
    let header = [
        "n".to_string(),
        "targetM".into(),
        ctx.rate_col("lambda"),
        "meanTau".into(),
        "tauStd".into(),
        "empirical_rate".into(),
        "halfwidth".into(),
        "decode_error_rate".into(),
        ctx.rate_col("theory_rate"),
        "tau_check".into(),
        "error_check".into(),
        "censored".into(),
    ];
    let mut t = Table { header: header.to_vec(), rows: Vec::new() };
    let mut hist = Table::new(&["n", "tau", "count"]);
    let mut failed = Vec::new();
    for (i, &n) in ctx.sizes().iter().enumerate() {
        let a0 = AdaptiveConfig::new(2, d, p, 1.0, fam.clone(), 0, 1)?.a0()?;
        let recipe = adaptive_recipe(cap.c, a0, n, d, eps)?;
        let m = m_override(ctx).unwrap_or(recipe.m);
        let cfg = AdaptiveConfig::new(m, d, p, recipe.lambda, fam.clone(), ctx.row_seed(i), steps_factor * n)?;
        let mut options = AdaptiveOptions::new(trials);
        if split && eps > 0.0 {
            options.eps_split = Some(EpsSplit { l_prime: recipe.l_prime, eps });
        }
        let stats = run_adaptive(&cfg, &options)?;
        let all = stats.overall();
        let check = verify_stopping_bounds(&stats, m, d, stats.c, 0.1);
        if !check.passed() {
            failed.push(format!(
                "stopping bounds at n={n}: E[τ] {} vs {}, error rate {} vs {}, censored {}",
                check.mean_tau, check.tau_bound, check.error_rate, check.error_bound, check.censored
            ));
        }
        t.push(vec![
            cell(n),
            cell(m),
            ctx.rate(recipe.lambda),
            cell(all.mean_tau),
            cell(all.var_tau.sqrt()),
            cell(all.excess_rate()),
            cell(all.excess_half_width()),
            cell(all.decode_error_rate()),
            ctx.rate(adaptive_resolution_bound(cap.c, n as f64, d, eps)?),
            cell(check.tau_ok),
            cell(check.error_ok),
            cell(all.censored),
        ]);
        let mut counts = std::collections::BTreeMap::new();
        for tau in stats.stopping_times() {
            *counts.entry(tau).or_insert(0u64) += 1;
        }
        for (tau, count) in counts {
            hist.push(vec![cell(n), cell(tau), cell(count)]);
        }
    }
    let mut report = csv_report(t)?;
    if let Some(path) = &ctx.spec.tau_histogram {
        report.extras.push((path.clone(), hist.into_bytes()?));
    }
    report.failed_checks = failed;
    Ok(report)
}

fn scale_converse(ctx: &Ctx, mut v: Value) -> Value {
    for key in ["best_quantile", "neg_log_delta_upper"] {
        if let Some(x) = v.get(key).and_then(Value::as_f64) {
            v[key] = json!(ctx.units.rate(x));
        }
    }
    v
}

fn bounds(ctx: &Ctx) -> Result<Report, Failure> {
    let fam = ctx.family()?;
    let cap = capacity_default(&fam)?;
    let (d, eps) = (ctx.d(), ctx.eps()?);
    let p = ctx.spec.p.unwrap_or_else(|| cap.maximizer_for_eps(eps));
    let samples = ctx.spec.samples.unwrap_or(10_000);
    let grid = default_q_grid(&cap.maximizers);
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for (i, &n) in ctx.sizes().iter().enumerate() {
        let m = match m_override(ctx) {
            Some(m) => m,
            None => single_target_recipe(&cap, n, d, eps)?.m,
        };
        let ach = achievability_bound(&fam, n, d, m, p, ctx.spec.eta, samples, ctx.row_seed(i))?;
        let conv = converse_bound(&fam, n, d, eps, &grid, ctx.spec.beta, ctx.spec.kappa)?;
        let log_m = (m as f64).ln();
        if ach.eps_upper <= eps && conv.neg_log_delta_upper < log_m {
            failed.push(format!("n={n}: achievable log M {log_m} exceeds the converse {}", conv.neg_log_delta_upper));
        }
        let conv_json = serde_json::to_value(&conv).map_err(|e| Failure::Io(e.to_string()))?;
        let ach_json = serde_json::to_value(&ach).map_err(|e| Failure::Io(e.to_string()))?;
        reports.push(json!({
            "units": ctx.units.label(),
            "n": n,
            "d": d,
            "M": m,
            "eps": eps,
            "log_M": ctx.units.rate(log_m),
            "achievability": ach_json,
            "converse": scale_converse(ctx, conv_json),
        }));
    }
    let value = if reports.len() == 1 { reports.remove(0) } else { Value::Array(reports) };
    let mut body = serde_json::to_vec_pretty(&value).map_err(|e| Failure::Io(e.to_string()))?;
    body.push(b'\n');
    Ok(Report { body, extras: Vec::new(), failed_checks: failed })
}

fn berry_esseen(ctx: &Ctx) -> Result<Report, Failure> {
    let fam = ctx.family()?;
    let q = match ctx.spec.q {
        Some(q) => q,
        None => capacity_default(&fam)?.maximizers[0],
    };
    let table = density_table(q, &fam.matrix_at(q)?)?;
    let mut t = Table::new(&["n", "q", "max_gap", "bound", "within_bound"]);
    let mut failed = Vec::new();
    for &n in ctx.sizes() {
        let be = berry_esseen_gap(&table, n)?;
        let ok = be.max_gap <= be.bound;
        if !ok {
            failed.push(format!("n={n}: gap {} exceeds bound {}", be.max_gap, be.bound));
        }
        t.push(vec![cell(n), cell(q), cell(be.max_gap), cell(be.bound), cell(ok)]);
    }
    let mut report = csv_report(t)?;
    report.failed_checks = failed;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_sweep_forms() {
        assert_eq!(family_at("bsc", 0.2).unwrap(), ChannelFamily::bsc(0.2).unwrap());
        assert_eq!(family_at("bec:0.9", 0.3).unwrap(), ChannelFamily::bec(0.3).unwrap());
        assert!(family_at("nope", 0.3).is_err());
    }

    #[test]
    fn units_in_headers() {
        let spec = Spec { units: Some(Units::Bits), ..Spec::default() };
        let ctx = Ctx { spec: &spec, units: Units::Bits, seed: 0 };
        assert_eq!(ctx.rate_col("gain"), "gain_bits");
        assert_eq!(ctx.rate(std::f64::consts::LN_2), "1");
    }
}
