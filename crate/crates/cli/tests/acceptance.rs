//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fail.

mod common;

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{Fixture, BIN};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use replayroi_core::estimator::{
    break_even, estimate, fit_bayes, fit_counts, fit_linear, fit_log_model, posterior_predictive, Accrual, CountMode,
    CumulativeCurve, CurveOrigin, EstimateConfig, Frequency, McmcConfig, ModelKind, Predictor, Priors, RHAT_MAX,
};
use replayroi_core::fixture;
use replayroi_core::ledger::{
    fold_events, implementation_stats, summary_stats, EventKind, Folder, Ledger, MaintenanceFilter, MeasurementTables,
};
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn near(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got:.4}, want {want} ± {tol}"))
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(t0: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t0.elapsed();
    ensure(e < limit, || format!("took {e:.2?}, limit {limit:?}"))?;
    Ok(e)
}

fn study_tables() -> MeasurementTables {
    fold_events(&fixture::events())
}

fn table_2_implementation_totals() -> Check {
    let t0 = Instant::now();
    let rows = implementation_stats(&study_tables());
    let mut out = Vec::new();
    for (fw, total, mean, sd) in [("se", 2284.9, 380.82, 226.47), ("ea", 1194.37, 199.06, 117.49)] {
        let r = rows.iter().find(|r| r.framework == fw).ok_or(format!("no row for {fw}"))?;
        near(&format!("{fw} total"), r.total_minutes, total, 0.01)?;
        near(&format!("{fw} mean"), r.per_protocol_stats.mean, mean, 0.01)?;
        near(&format!("{fw} sd"), r.per_protocol_stats.sd, sd, 0.01)?;
        out.push(format!(
            "{fw} {:.2}/{:.2}/{:.2}",
            r.total_minutes, r.per_protocol_stats.mean, r.per_protocol_stats.sd
        ));
    }
    let e = within_time(t0, Duration::from_secs(1))?;
    Ok(format!("{} in {e:.2?}", out.join(", ")))
}

fn table_3_maintenance_aggregates() -> Check {
    let stats = summary_stats(&study_tables(), &MaintenanceFilter::default());
    let mut means = BTreeMap::new();
    for (fw, total, mean) in [("se", 467.53, 7.19), ("ea", 682.8, 10.50)] {
        let s = stats.framework(fw).ok_or(format!("no summary for {fw}"))?;
        near(&format!("{fw} total"), s.total_minutes, total, 0.05)?;
        ensure(s.steps == 65, || format!("{fw}: {} steps", s.steps))?;
        near(&format!("{fw} per-version mean"), s.per_version.mean, mean, 0.05)?;
        near(&format!("{fw} total/65"), s.total_minutes / 65.0, mean, 0.05)?;
        means.insert(fw, s.per_version.mean);
    }
    let ratio = means["ea"] / means["se"];
    ensure(ratio > 1.3, || format!("ratio {ratio:.3} not above 1.3"))?;
    Ok(format!("means se {:.2}, ea {:.2}, ratio {ratio:.3}", means["se"], means["ea"]))
}

fn scan(agt: &[f64], mgt: &[f64]) -> Option<usize> {
    (0..agt.len().min(mgt.len())).find(|&k| mgt[k] >= agt[k])
}

fn break_even_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut found = 0;
    for case in 0..200 {
        let m = rng.random_range(1..=200);
        let cost = rng.random_range(1..=120) as f64;
        let mut agt = vec![rng.random_range(0..=4000) as f64];
        let mut mgt = vec![0.0];
        for _ in 0..m {
            // integer increments so ties happen
            agt.push(agt.last().unwrap() + rng.random_range(0..=40) as f64);
            let session = if rng.random_bool(0.6) { cost } else { 0.0 };
            mgt.push(mgt.last().unwrap() + session);
        }
        let got = break_even(&agt, &mgt);
        let want = scan(&agt, &mgt);
        ensure(got == want, || format!("case {case}: solver {got:?}, scan {want:?}"))?;
        found += usize::from(want.is_some());
    }

    // zero maintenance: AGT stays at the implementation cost
    let impl_min = fixture::EYEAUTOMATE_IMPL_S.iter().sum::<u64>() as f64 / 60.0;
    near("ea implementation", impl_min, 1194.37, 0.01)?;
    ensure(75.0 * 15.0 < impl_min && impl_min <= 75.0 * 16.0, || "analytic bracket".into())?;
    let events: Vec<_> = fixture::events()
        .into_iter()
        .filter(|e| !matches!(e.kind, EventKind::ActivityStarted { .. } | EventKind::ActivityStopped { .. }))
        .collect();
    let cfg = EstimateConfig {
        frameworks: vec!["ea".into()],
        frequency: Frequency::PerVersion,
        session_cost: Some(75.0),
        accrual: Accrual::PerStep,
        model: ModelKind::Observed,
        horizon: 0,
        ..EstimateConfig::default()
    };
    let r = estimate(&fold_events(&events), &cfg).map_err(|e| e.to_string())?;
    let k = r.frameworks[0].roi.break_even_step;
    ensure(k == Some(16), || format!("analytic case gave {k:?}"))?;
    let e = within_time(t0, Duration::from_secs(5))?;
    Ok(format!("200/200 equal to scan ({found} with a crossing), analytic k=16, {e:.2?}"))
}

fn ordering_reproduction() -> Check {
    let tables = study_tables();
    let r = estimate(&tables, &EstimateConfig::default()).map_err(|e| e.to_string())?;
    let step = |fw: &str| r.framework(fw).and_then(|f| f.roi.break_even_step);
    let (se, ea) = (step("se"), step("ea"));
    let ea_k = ea.ok_or("EyeAutomate never breaks even")?;
    ensure(se.is_none_or(|s| ea_k < s), || format!("ea {ea:?} not before se {se:?}"))?;
    let rows = implementation_stats(&tables);
    let gap = rows[0].total_minutes.max(rows[1].total_minutes) / rows[0].total_minutes.min(rows[1].total_minutes);
    ensure((1.8..2.0).contains(&gap), || format!("implementation gap {gap:.2}"))?;
    Ok(format!("break-even ea {ea_k} < se {se:?}, implementation gap {gap:.2}x"))
}

fn model_fit_recovery() -> Check {
    let t0 = Instant::now();
    let xs: Vec<f64> = (0..66).map(f64::from).collect();
    let mut worst: f64 = 0.0;
    for (a, b) in [(1194.37, 180.5), (2284.9, -3.25), (0.0, 1e-3), (-50.0, 400.0)] {
        let ys: Vec<f64> = xs.iter().map(|x| a + b * (x + 1.0).ln()).collect();
        let f = fit_log_model(&xs, &ys).map_err(|e| e.to_string())?;
        worst = worst.max((f.a - a).abs()).max((f.b - b).abs());
        let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
        let f = fit_linear(&xs, &ys).map_err(|e| e.to_string())?;
        worst = worst.max((f.a - a).abs()).max((f.b - b).abs());
    }
    ensure(worst < 1e-6, || format!("max parameter error {worst:e}"))?;
    let e = within_time(t0, Duration::from_secs(1))?;
    Ok(format!("max |Δ| {worst:.1e}, {e:.2?}"))
}

/// Negative-binomial counts as a Gamma-Poisson mixture.
fn simulate(alpha: f64, beta: f64, phi: f64, xs: &[f64], rng: &mut ChaCha8Rng) -> Vec<u64> {
    xs.iter()
        .map(|x| {
            let mu = (alpha + beta * x).exp();
            let lam = Gamma::new(phi, mu / phi).unwrap().sample(rng);
            Poisson::new(lam).map(|p| p.sample(rng) as u64).unwrap_or(0)
        })
        .collect()
}

fn bayes_simulate_and_recover() -> Check {
    let t0 = Instant::now();
    let (alpha, beta, phi) = (4.0, 0.03, 10.0);
    let xs: Vec<f64> = (1..=66).map(f64::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut cover = [0usize; 3];
    let mut worst_rhat: f64 = 0.0;
    let runs = 40;
    let mut first = None;
    for i in 0..runs {
        let ys = simulate(alpha, beta, phi, &xs, &mut rng);
        let cfg = McmcConfig { seed: 20190422 + i, ..McmcConfig::default() };
        let post = fit_counts(&xs, &ys, &Priors::default(), &cfg).map_err(|e| e.to_string())?;
        let d = &post.diagnostics;
        worst_rhat = worst_rhat.max(d.alpha.rhat).max(d.beta.rhat).max(d.phi.rhat);
        cover[0] += usize::from(post.alpha_interval(0.95).contains(alpha));
        cover[1] += usize::from(post.beta_interval(0.95).contains(beta));
        cover[2] += usize::from(post.phi_interval(0.95).contains(phi));
        if first.is_none() {
            first = Some((ys, cfg, post));
        }
    }
    ensure(worst_rhat < RHAT_MAX, || format!("split-R̂ reached {worst_rhat:.4}"))?;
    let need = (0.85 * runs as f64).ceil() as usize;
    for (name, c) in ["alpha", "beta", "phi"].iter().zip(cover) {
        ensure(c >= need, || format!("{name} covered in {c}/{runs}"))?;
    }
    let (ys, cfg, post) = first.unwrap();
    let again = fit_counts(&xs, &ys, &Priors::default(), &cfg).map_err(|e| e.to_string())?;
    let bits = |p: &replayroi_core::estimator::PosteriorSamples| {
        p.draws.iter().flat_map(|d| [d.alpha.to_bits(), d.beta.to_bits(), d.phi.to_bits()]).collect::<Vec<_>>()
    };
    ensure(bits(&post) == bits(&again), || "rerun with the same seed differs".into())?;
    let e = within_time(t0, Duration::from_secs(300))?;
    Ok(format!(
        "coverage alpha {}/{runs}, beta {}/{runs}, phi {}/{runs}; max R̂ {worst_rhat:.4}; reproducible; {e:.1?}",
        cover[0], cover[1], cover[2]
    ))
}

fn predictive_band_calibration() -> Check {
    let (alpha, beta, phi) = (4.0, 0.03, 10.0);
    let m = 65;
    let horizon = 24;
    let fits = 10;
    let per_fit = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(95);
    let (mut inside, mut total) = (0usize, 0usize);
    let mut widths = Vec::new();
    for i in 0..fits {
        let steps: Vec<f64> = (0..=m).map(|k| k as f64).collect();
        let ys = simulate(alpha, beta, phi, &steps, &mut rng);
        let curve = CumulativeCurve {
            points: ys.iter().map(|&y| y as f64).collect(),
            calendar_times: Vec::new(),
            origin: CurveOrigin::Agt { framework: "sim".into() },
        };
        let cfg = McmcConfig { seed: 7 + i, ..McmcConfig::default() };
        let fit = fit_bayes(&curve, Predictor::Step, CountMode::Cumulative, &Priors::default(), &cfg)
            .map_err(|e| e.to_string())?;
        let bands = posterior_predictive(&fit, horizon, 11 + i, None).bands;
        let future: Vec<f64> = (m + 1..=m + horizon).map(|k| k as f64).collect();
        for _ in 0..per_fit {
            for (j, y) in simulate(alpha, beta, phi, &future, &mut rng).into_iter().enumerate() {
                let p = &bands.points[m + 1 + j];
                inside += usize::from(p.lower <= y as f64 && y as f64 <= p.upper);
                total += 1;
            }
        }
        let w1 = bands.width(m + 1).ok_or("no band at H=1")?;
        let w24 = bands.width(m + horizon).ok_or("no band at H=24")?;
        widths.push((w1, w24));
    }
    let rate = inside as f64 / total as f64;
    ensure((rate - 0.95).abs() <= 0.05, || format!("coverage {:.1}%", 100.0 * rate))?;
    ensure(widths.iter().all(|(w1, w24)| w24 > w1), || format!("widths {widths:?}"))?;
    let (w1, w24) = widths[0];
    Ok(format!("coverage {:.1}% over {} trajectories; width H=1 {w1:.0}, H=24 {w24:.0}", 100.0 * rate, fits * per_fit))
}

fn ledger_round_trip() -> Check {
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    runner
        .run(&(any::<u64>(), 1..6usize, 0..160usize, 0.0..=1.0f64), |(seed, m, ops, cut)| {
            let events = fixture::random_replay(seed, m, ops);
            let k = (cut * events.len() as f64) as usize;
            let mut head = Folder::new();
            head.apply_all(&events[..k]);
            let mut resumed: Folder = serde_json::from_str(&serde_json::to_string(&head).unwrap()).unwrap();
            resumed.apply_all(&events[k..]);
            prop_assert_eq!(resumed.finish(), fold_events(&events));
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    // kill the binary while a test command is running
    let f = Fixture::new(3, &[("se", "Selenium")], "");
    let marker = f.path().join("state").join("slept");
    let text = std::fs::read_to_string(f.config()).unwrap();
    let slow = format!("run = \"[ -e '{m}' ] || {{ touch '{m}'; sleep 30; }}; FAIL_AT=", m = marker.display());
    std::fs::write(f.config(), text.replacen("run = \"FAIL_AT=", &slow, 1)).unwrap();
    f.ok(&["versions", "select"]);
    f.baseline(&[("T1", "30"), ("T2", "45")], &[("T1", "se", "120"), ("T2", "se", "90")]);
    f.ok(&["replay", "start"]);
    let before = f.json(&["export"])["tables"].clone();
    let mut child = Command::new(BIN)
        .current_dir(f.path())
        .env_remove("REPLAYROI_LEDGER")
        .args(["replay", "run"])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    while !marker.exists() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    ensure(marker.exists(), || "test command never started".into())?;
    let after = f.json(&["export"])["tables"].clone();
    ensure(before == after, || "totals changed across the kill".into())?;
    let l = Ledger::open(f.ledger()).map_err(|e| format!("reopen: {e}"))?;
    drop(l);
    f.ok(&["replay", "run"]);
    f.ok(&["replay", "advance"]);
    Ok("500 randomized logs fold identically; totals unchanged after SIGKILL".into())
}

fn end_to_end_replay() -> Check {
    let f = Fixture::new(10, &[("se", "Selenium"), ("ea", "EyeAutomate")], "T1-se-3 T2-ea-5 T1-ea-7 T2-se-8");
    f.ok(&["versions", "select"]);
    f.baseline(
        &[("T1", "30"), ("T2", "45")],
        &[("T1", "se", "100"), ("T2", "se", "110"), ("T1", "ea", "50"), ("T2", "ea", "60")],
    );
    f.ok(&["replay", "start"]);
    let timed = |category: &str, test: &str, secs: &str| -> u64 {
        f.ok(&["activity", "start", "--category", category, "--test", test]);
        let stop = f.json(&["activity", "stop", "--override-seconds", secs]);
        stop["record"]["activity_id"].as_u64().unwrap()
    };
    for v in 1..=10 {
        f.ok(&["replay", "run"]);
        match v {
            3 => {
                f.ok(&["replay", "classify", "--test", "T1/se", "--kind", "bug"]);
                let id = timed("handle_bug", "T1/se", "600").to_string();
                let args = ["replay", "bug", "--activity", &id, "--description", "login NPE", "--resolution", "fix"];
                f.ok(&args);
            }
            5 => {
                f.ok(&["replay", "classify", "--test", "T2/ea", "--kind", "broken-test"]);
                timed("analysis_broken_test", "T2/ea", "300");
                timed("repair_broken_test", "T2/ea", "900");
            }
            7 => {
                f.ok(&["replay", "classify", "--test", "T1/ea", "--kind", "false-negative"]);
                timed("handle_false_negative", "T1/ea", "120");
            }
            8 => {
                f.ok(&["replay", "classify", "--test", "T2/se", "--kind", "crash"]);
                timed("handle_crash", "T2/se", "60");
            }
            _ => {}
        }
        f.ok(&["replay", "run"]);
        let out = f.ok(&["replay", "advance"]);
        if v == 10 {
            ensure(out.contains("replay completed"), || out.clone())?;
        }
    }

    let expected: BTreeMap<(String, String), usize> = [
        ("se", "handle_bug"),
        ("se", "handle_crash"),
        ("ea", "analysis_broken_test"),
        ("ea", "repair_broken_test"),
        ("ea", "handle_false_negative"),
    ]
    .into_iter()
    .map(|(a, b)| ((a.to_string(), b.to_string()), 1))
    .collect();

    // counted straight from the ledger file
    let mut raw: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut bugs = 0;
    for line in std::fs::read_to_string(f.ledger()).unwrap().lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        match v["kind"].as_str() {
            Some("ActivityStopped") => {
                let r = &v["payload"]["record"];
                let fw = r["framework"].as_str().unwrap_or("").to_string();
                *raw.entry((fw, r["category"].as_str().unwrap().to_string())).or_default() += 1;
            }
            Some("BugRecorded") => bugs += 1,
            _ => {}
        }
    }
    ensure(raw == expected, || format!("ledger counts {raw:?}"))?;
    ensure(bugs == 1, || format!("{bugs} bug records"))?;

    let bundle: Value = serde_json::from_str(&f.ok(&["report", "--format", "bundle"])).unwrap();
    let mut reported: BTreeMap<(String, String), usize> = BTreeMap::new();
    for fw in bundle["maintenance"]["frameworks"].as_array().unwrap() {
        for c in fw["categories"].as_array().unwrap() {
            let n = c["occurrences"].as_u64().unwrap() as usize;
            if n > 0 {
                let key = (fw["framework"].as_str().unwrap().into(), c["category"].as_str().unwrap().into());
                reported.insert(key, n);
            }
        }
    }
    ensure(reported == expected, || format!("reported counts {reported:?}"))?;

    let out = Command::new(BIN)
        .current_dir(f.path())
        .env_remove("REPLAYROI_LEDGER")
        .args(["--json", "estimate"])
        .output()
        .unwrap();
    ensure(out.status.code() == Some(0), || format!("estimate exit {:?}", out.status.code()))?;
    let est: Value = serde_json::from_slice(&out.stdout).unwrap();
    let mut steps = Vec::new();
    for fw in est["frameworks"].as_array().unwrap() {
        let k = fw["roi"]["break_even_step"].as_u64();
        let name = fw["framework"].as_str().unwrap().to_string();
        ensure(k.is_some(), || format!("{name} never breaks even"))?;
        steps.push(format!("{name} {}", k.unwrap()));
    }
    Ok(format!("5 categories counted once each, 1 bug record, break-even {}", steps.join(", ")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("implementation totals", table_2_implementation_totals),
        ("maintenance aggregates", table_3_maintenance_aggregates),
        ("break-even oracle equivalence", break_even_oracle),
        ("framework ordering", ordering_reproduction),
        ("model-fit recovery", model_fit_recovery),
        ("bayesian simulate-and-recover", bayes_simulate_and_recover),
        ("predictive-band calibration", predictive_band_calibration),
        ("ledger round-trip", ledger_round_trip),
        ("end-to-end replay", end_to_end_replay),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let res = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match res {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
