//! Acceptance criteria, run in order. Each prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use qres::adaptive::{run_adaptive, verify_stopping_bounds, AdaptiveConfig, AdaptiveOptions, EpsSplit};
use qres::asymptotics::{
    capacity_default, dispersion_for_eps, second_order_resolution, separate_search_resolution, stats_at, ThirdOrder,
};
use qres::bounds::{achievability_bound, converse_bound, default_q_grid, inner_probability};
use qres::multitarget::multi_target_optimize;
use qres::nonadaptive::{run_multi_target, run_separate_search, run_single_target, MultiTargetOptions, SimOptions};
use qres::recipes::{adaptive_recipe, multi_target_recipe, single_target_recipe};
use qres::search::{gamma, gamma_inv, stream_rng, SearchConfig};
use qres::sumdist::{codeword_score_law, DEFAULT_SUPPORT_CAP};
use qres::{berry_esseen_gap, density_table, gaussian_cdf, ChannelFamily, InfoDensityTable};
use rand::Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Binary entropy in nats, written out here so the closed forms do not share code with the library.
fn h(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    term(p) + term(1.0 - p)
}

fn closed_form_agreement() -> Check {
    let mut rng = stream_rng(101, 0);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let a = rng.random::<f64>();
        let q = rng.random_range(1e-6..1.0 - 1e-6);
        let (fam, expected) = match i % 3 {
            0 => {
                let beta = q * (1.0 - a * q) + (1.0 - q) * a * q;
                (ChannelFamily::bsc(a).unwrap(), h(beta) - h(a * q))
            }
            1 => (ChannelFamily::bec(a).unwrap(), (1.0 - q * a) * h(q)),
            _ => (ChannelFamily::z(a).unwrap(), h(q * (1.0 - a * q)) - q * h(a * q)),
        };
        let c = stats_at(&fam, q).map_err(|e| e.to_string())?.c;
        worst = worst.max((c - expected).abs());
    }
    ensure(worst <= 1e-10, format!("max |C - closed form| = {worst:.2e} over 200 triples"))
}

fn capacity_structure() -> Check {
    let one = capacity_default(&ChannelFamily::bsc(1.0).unwrap()).map_err(|e| e.to_string())?;
    if one.maximizers.len() != 2 {
        return Err(format!("bsc:1 has {} maximizers", one.maximizers.len()));
    }
    let sum = one.maximizers[0] + one.maximizers[1];
    let var_gap = (one.v_at[0] - one.v_at[1]).abs();
    let mut detail = format!("bsc:1 q* = {:?}, |sum - 1| = {:.1e}, |ΔV| = {var_gap:.1e}", one.maximizers, (sum - 1.0).abs());
    let mut ok = (sum - 1.0).abs() <= 1e-6 && var_gap <= 1e-9;
    for fam in [ChannelFamily::bsc(0.0).unwrap(), ChannelFamily::bec(0.0).unwrap()] {
        let r = capacity_default(&fam).map_err(|e| e.to_string())?;
        let c_err = (r.c - std::f64::consts::LN_2).abs();
        let q_err = r.maximizers.iter().map(|q| (q - 0.5).abs()).fold(0.0, f64::max);
        ok &= c_err <= 1e-9 && q_err <= 1e-9 && r.maximizers.len() == 1;
        detail.push_str(&format!("; {fam}: |C - ln 2| = {c_err:.1e}, |q* - 0.5| = {q_err:.1e}"));
    }
    ensure(ok, detail)
}

fn berry_esseen_certificate() -> Check {
    let fam = ChannelFamily::bsc(0.4).unwrap();
    let cap = capacity_default(&fam).map_err(|e| e.to_string())?;
    let q = cap.maximizers[0];
    let table = density_table(q, &fam.matrix_at(q).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut gaps = Vec::new();
    for n in [10, 100, 1000] {
        let be = berry_esseen_gap(&table, n).map_err(|e| e.to_string())?;
        gaps.push((n, be.max_gap, be.bound));
    }
    let ok = gaps.iter().all(|g| g.1 <= g.2) && gaps[2].1 < gaps[0].1;
    let detail = gaps.iter().map(|(n, g, b)| format!("n={n}: gap {g:.4} ≤ {b:.4}")).collect::<Vec<_>>().join(", ");
    ensure(ok, detail)
}

fn single_target_reproduction() -> Check {
    let fam = ChannelFamily::bsc(0.4).unwrap();
    let cap = capacity_default(&fam).map_err(|e| e.to_string())?;
    let eps = 0.1;
    let p = cap.maximizer_for_eps(eps);
    let mut rows = Vec::new();
    let mut ok = true;
    for n in (20..=80).step_by(10) {
        let recipe = single_target_recipe(&cap, n, 1, eps).map_err(|e| e.to_string())?;
        let cfg = SearchConfig::new(n, 1, recipe.m, p, fam.clone(), 40 + n as u64).map_err(|e| e.to_string())?;
        let stats = run_single_target(&cfg, &SimOptions::new(10_000)).map_err(|e| e.to_string())?;
        let rate = stats.empirical_rate();
        ok &= (0.02..=0.25).contains(&rate);
        rows.push(format!("n={n} M={} rate={rate:.4}", recipe.m));
    }
    ensure(ok, rows.join(", "))
}

fn phase_transition() -> Check {
    let fam = ChannelFamily::bsc(0.2).unwrap();
    let cap = capacity_default(&fam).map_err(|e| e.to_string())?;
    let (n, d) = (200, 2);
    let mut rates = Vec::new();
    for factor in [1.1, 0.9] {
        let log_m = factor * n as f64 * cap.c / d as f64;
        let m = log_m.exp().round() as u128;
        let cfg = SearchConfig::new(n, d, m, cap.maximizers[0], fam.clone(), 5).map_err(|e| e.to_string())?;
        let stats = run_single_target(&cfg, &SimOptions::new(1000)).map_err(|e| e.to_string())?;
        // Second-order prediction Φ((d log M − nC)/√(nV)).
        let spread = (n as f64 * cap.v_low).sqrt();
        let predicted = gaussian_cdf((factor - 1.0) * n as f64 * cap.c / spread);
        rates.push((factor, stats.empirical_rate(), stats.half_width(), predicted));
    }
    let ok = rates[0].1 >= 0.9 && rates[1].1 <= 0.1;
    let detail = rates
        .iter()
        .map(|(f, r, hw, pred)| format!("log M = {f}·nC/d: rate {r:.3} ± {hw:.3} (second-order prediction {pred:.3})"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(ok, detail)
}

fn separate_search() -> Check {
    let fam = ChannelFamily::bsc(0.4).unwrap();
    let cap = capacity_default(&fam).map_err(|e| e.to_string())?;
    let mut formula_ok = true;
    for d in [2, 3, 4] {
        for eps in [0.1, 0.3] {
            for n in [50, 100, 200] {
                let v = dispersion_for_eps(&cap, eps).map_err(|e| e.to_string())?;
                let v_split = dispersion_for_eps(&cap, eps / d as f64).map_err(|e| e.to_string())?;
                let joint = second_order_resolution(cap.c, v, n, d, eps, ThirdOrder::None).map_err(|e| e.to_string())?;
                let apart = separate_search_resolution(cap.c, v_split, n, d, eps).map_err(|e| e.to_string())?;
                formula_ok &= apart < joint;
            }
        }
    }

    // Joint search at its recipe M versus per-axis search with n/2 queries at level ε/2.
    let (n, d, eps, trials) = (60, 2, 0.1, 10_000);
    let p = cap.maximizer_for_eps(eps);
    let joint_m = single_target_recipe(&cap, n, d, eps).map_err(|e| e.to_string())?.m;
    let sep_m = single_target_recipe(&cap, n / d, 1, eps / d as f64).map_err(|e| e.to_string())?.m;
    let joint_cfg = SearchConfig::new(n, d, joint_m, p, fam.clone(), 61).map_err(|e| e.to_string())?;
    let joint = run_single_target(&joint_cfg, &SimOptions::new(trials)).map_err(|e| e.to_string())?;
    let mut sep_cfg = joint_cfg.clone();
    sep_cfg.seed = 62;
    let sep_same = run_separate_search(&sep_cfg, &SimOptions::new(trials)).map_err(|e| e.to_string())?;
    sep_cfg.m = sep_m;
    let sep_own = run_separate_search(&sep_cfg, &SimOptions::new(trials)).map_err(|e| e.to_string())?;

    let margin = 3.0 * (joint.half_width() + sep_same.half_width());
    let finer = joint_m > sep_m && joint.empirical_rate() <= sep_own.empirical_rate() + 3.0 * (joint.half_width() + sep_own.half_width());
    let separated = sep_same.empirical_rate() - joint.empirical_rate() > margin;
    ensure(
        formula_ok && finer && separated,
        format!(
            "formula holds on 18 cases: {formula_ok}; joint δ=1/{joint_m} rate {:.4} ± {:.4}; separate δ=1/{sep_m} rate {:.4} ± {:.4}; separate at δ=1/{joint_m} rate {:.4}",
            joint.empirical_rate(),
            joint.half_width(),
            sep_own.empirical_rate(),
            sep_own.half_width(),
            sep_same.empirical_rate()
        ),
    )
}

fn multi_target() -> Check {
    let fam = ChannelFamily::bsc(0.4).unwrap();
    let stats = multi_target_optimize(&fam, 2, 1e-4).map_err(|e| e.to_string())?;
    let n = 50;
    let recipe = multi_target_recipe(&stats, n, 1, 0.1).map_err(|e| e.to_string())?;
    let cfg = SearchConfig::new(n, 1, recipe.m, stats.p_star, fam, 71).map_err(|e| e.to_string())?;
    let run = run_multi_target(&cfg, 2, recipe.gamma, &MultiTargetOptions::new(10_000)).map_err(|e| e.to_string())?;
    let rate = run.empirical_rate();
    ensure(
        stats.t_star == 2 && rate <= 0.25,
        format!(
            "t* = {}, p* = {:.5}, M = {}, γ = {:.4}, rate {rate:.4} ± {:.4}",
            stats.t_star,
            stats.p_star,
            recipe.m,
            recipe.gamma,
            run.half_width()
        ),
    )
}

fn adaptive() -> Check {
    let fam = ChannelFamily::bsc(0.4).unwrap();
    let cap = capacity_default(&fam).map_err(|e| e.to_string())?;
    let p = cap.maximizers[0];
    let eps = 0.1;
    let mut rows = Vec::new();
    let mut ok = true;
    for n in (20..=60).step_by(10) {
        let a0 = AdaptiveConfig::new(2, 1, p, 1.0, fam.clone(), 0, 1).and_then(|c| c.a0()).map_err(|e| e.to_string())?;
        let recipe = adaptive_recipe(cap.c, a0, n, 1, eps).map_err(|e| e.to_string())?;
        let cfg = AdaptiveConfig::new(recipe.m, 1, p, recipe.lambda, fam.clone(), 80 + n as u64, 20 * n)
            .map_err(|e| e.to_string())?;
        let mut options = AdaptiveOptions::new(10_000);
        options.eps_split = Some(EpsSplit { l_prime: recipe.l_prime, eps });
        let stats = run_adaptive(&cfg, &options).map_err(|e| e.to_string())?;
        let all = stats.overall();
        let report = verify_stopping_bounds(&stats, recipe.m, 1, stats.c, 0.1);
        let tau_close = (all.mean_tau - n as f64).abs() <= 0.15 * n as f64;
        ok &= tau_close && all.excess_rate() <= 0.2 && report.passed();
        rows.push(format!(
            "n={n} M={} E[τ]={:.2} rate={:.4} τ-check {} error-check {}",
            recipe.m,
            all.mean_tau,
            all.excess_rate(),
            report.tau_ok,
            report.error_ok
        ));
    }
    ensure(ok, rows.join(", "))
}

fn bound_sandwich() -> Check {
    let fam = ChannelFamily::bsc(0.4).unwrap();
    let cap = capacity_default(&fam).map_err(|e| e.to_string())?;
    let eps = 0.1;
    let p = cap.maximizer_for_eps(eps);
    let mut rows = Vec::new();
    let mut ok = true;
    for n in [50, 100] {
        let recipe = single_target_recipe(&cap, n, 1, eps).map_err(|e| e.to_string())?;
        let ach = achievability_bound(&fam, n, 1, recipe.m, p, None, 10_000, 90 + n as u64).map_err(|e| e.to_string())?;
        let cfg = SearchConfig::new(n, 1, recipe.m, p, fam.clone(), 95 + n as u64).map_err(|e| e.to_string())?;
        let sim = run_single_target(&cfg, &SimOptions::new(10_000)).map_err(|e| e.to_string())?;
        let conv = converse_bound(&fam, n, 1, eps, &default_q_grid(&cap.maximizers), None, None).map_err(|e| e.to_string())?;
        let achievable = (recipe.m as f64).ln();
        ok &= ach.eps_upper >= sim.empirical_rate() && conv.neg_log_delta_upper >= achievable;
        rows.push(format!(
            "n={n}: ε upper {:.4} vs empirical {:.4}; converse -log δ ≤ {:.3} vs achievable {:.3}",
            ach.eps_upper,
            sim.empirical_rate(),
            conv.neg_log_delta_upper,
            achievable
        ));
    }
    ensure(ok, rows.join("; "))
}

/// Sum of lattice keys, or `None` when some symbol has zero probability.
fn key_sum(table: &InfoDensityTable, xs: &[usize], ys: &[usize]) -> Option<Vec<i32>> {
    let mut key = vec![0i32; table.generators().0.len()];
    for (&x, &y) in xs.iter().zip(ys) {
        for (a, b) in key.iter_mut().zip(table.key(x, y)?) {
            *a += b;
        }
    }
    Some(key)
}

fn oracle_equivalence() -> Check {
    let mut rng = stream_rng(111, 0);
    let mut cases = 0;
    for fam in ["bsc:0.4", "bec:0.6", "z:0.7"] {
        let fam: ChannelFamily = fam.parse().map_err(|e: qres::Error| e.to_string())?;
        for n in [4, 8, 12] {
            let p = rng.random_range(0.1..0.9);
            let table = density_table(p, &fam.matrix_at(p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let gens = table.generators();
            for _ in 0..3 {
                let xs: Vec<usize> = (0..n).map(|_| usize::from(rng.random::<f64>() < p)).collect();
                let ys: Vec<usize> = xs.iter().map(|&x| fam.sample_output(p, x, &mut rng)).collect();
                let own = gens.value(&key_sum(&table, &xs, &ys).ok_or("true codeword has zero probability")?);

                let mut brute: BTreeMap<Vec<i32>, f64> = BTreeMap::new();
                let mut tail = 0.0;
                for word in 0u32..1 << n {
                    let other: Vec<usize> = (0..n).map(|t| (word >> t & 1) as usize).collect();
                    let ones = word.count_ones() as i32;
                    let prob = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
                    if let Some(key) = key_sum(&table, &other, &ys) {
                        if gens.value(&key) >= own {
                            tail += prob;
                        }
                        *brute.entry(key).or_default() += prob;
                    }
                }
                let law = codeword_score_law(&table, &ys, DEFAULT_SUPPORT_CAP).map_err(|e| e.to_string())?;
                let mut law_mass: BTreeMap<Vec<i32>, f64> = BTreeMap::new();
                for i in 0..law.len() {
                    if law.probs()[i] > 0.0 {
                        *law_mass.entry(law.key(i).to_vec()).or_default() += law.probs()[i];
                        if law.values()[i] != gens.value(law.key(i)) {
                            return Err(format!("{fam} n={n}: law value differs from its key"));
                        }
                    }
                }
                if law_mass.keys().ne(brute.keys()) {
                    return Err(format!("{fam} n={n}: lattice supports differ"));
                }
                for (k, m) in &brute {
                    if (law_mass[k] - m).abs() > 1e-12 {
                        return Err(format!("{fam} n={n}: mass at {k:?} differs by {:.1e}", (law_mass[k] - m).abs()));
                    }
                }
                let inner = inner_probability(&table, &xs, &ys).map_err(|e| e.to_string())?;
                if (inner - tail).abs() > 1e-12 {
                    return Err(format!("{fam} n={n}: inner probability {inner} vs brute force {tail}"));
                }
                cases += 1;
            }
        }
    }
    for i in 0..100_000u64 {
        let m = rng.random_range(2u128..=1 << 20);
        let d = rng.random_range(1..=5usize);
        let cells: Vec<u128> = (0..d).map(|_| rng.random_range(1..=m)).collect();
        let g = gamma(&cells, m).map_err(|e| e.to_string())?;
        if gamma_inv(g, m, d).map_err(|e| e.to_string())? != cells {
            return Err(format!("gamma round trip failed at case {i}"));
        }
    }
    Ok(format!("{cases} brute-force cases exact; 100000 gamma round trips exact"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 10] = [
        ("closed-form agreement", Duration::from_secs(1), closed_form_agreement),
        ("capacity structure", Duration::from_secs(5), capacity_structure),
        ("Berry-Esseen certificate", Duration::from_secs(30), berry_esseen_certificate),
        ("single-target reproduction", Duration::from_secs(300), single_target_reproduction),
        ("phase transition", Duration::from_secs(300), phase_transition),
        ("separate-search suboptimality", Duration::from_secs(600), separate_search),
        ("multi-target", Duration::from_secs(600), multi_target),
        ("adaptive", Duration::from_secs(600), adaptive),
        ("bound sandwich", Duration::from_secs(600), bound_sandwich),
        ("oracle equivalence", Duration::from_secs(60), oracle_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {elapsed:.1?}, budget {budget:?}")),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(status == "FAIL");
        println!("criterion {:>2} {status} [{name}] ({elapsed:.2?}) {detail}", i + 1);
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
