//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use notipkit::calibration::{count_violations, jer_budget};
use notipkit::templates::simes_family;
use notipkit::{
    calibrate_learned, calibrate_simes, default_k_max, estimate_jer, experiment_driver,
    false_positive_bound, hommel_value, largest_controlled_region, learn_template, Calibration,
    ExperimentReport, Method, NullPValueMatrix, SimulationConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---- definition-level oracles ------------------------------------------

fn brute_bound(p: &[f64], t: &[f64], k_max: usize) -> usize {
    let mut best = p.len();
    for k in 1..=k_max.min(p.len()) {
        let not_below = p.iter().filter(|&&x| x >= t[k - 1]).count();
        best = best.min(not_below + k - 1);
    }
    best
}

fn brute_region(p: &[f64], t: &[f64], q: f64, k_max: usize) -> (usize, usize) {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut best = (0, 0);
    for s in 1..=p.len() {
        let subset: Vec<f64> = order[..s].iter().map(|&i| p[i]).collect();
        let v = brute_bound(&subset, t, k_max);
        if v as f64 <= q * s as f64 {
            best = (s, v);
        }
    }
    best
}

fn brute_hommel(sorted: &[f64], alpha: f64) -> usize {
    let m = sorted.len();
    (0..=m)
        .filter(|&i| (1..=i).all(|k| sorted[m - i + k - 1] > k as f64 * alpha / i as f64))
        .max()
        .unwrap()
}

// ---- random instances ---------------------------------------------------

fn pvalue(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..5) {
        0 => rng.random_range(0.0..0.01),
        1 => [0.001, 0.01, 0.05, 0.5][rng.random_range(0..4)],
        _ => rng.random::<f64>(),
    }
}

fn pvalues(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| pvalue(rng)).collect()
}

fn family(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let scale = [0.01, 0.1, 0.5][rng.random_range(0..3)];
    let mut t: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * scale).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// Sorted null rows with a shared per-row shift, so ranks are dependent.
fn null_matrix(rng: &mut ChaCha8Rng, b: usize, m: usize) -> NullPValueMatrix {
    let mut v = Vec::with_capacity(b * m);
    for _ in 0..b {
        let power = rng.random_range(0.3..3.0f64);
        for _ in 0..m {
            v.push(rng.random::<f64>().powf(power));
        }
    }
    NullPValueMatrix::from_unsorted(v, b, m).unwrap()
}

// ---- criteria -----------------------------------------------------------

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let s = rng.random_range(1..=50);
        let k_max = rng.random_range(1..=60);
        let p = pvalues(&mut rng, s);
        let t = family(&mut rng, k_max);
        if false_positive_bound(&p, &t, k_max).unwrap() != brute_bound(&p, &t, k_max) {
            mismatches += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        mismatches == 0 && el < Duration::from_secs(10),
        format!("1000 instances, {mismatches} mismatches, {el:.2?} (limit 10 s)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = rng.random_range(1..=200);
        let k_max = rng.random_range(1..=m.min(40));
        let q = [0.05, 0.1, 0.2, 0.5][rng.random_range(0..4)];
        let p = pvalues(&mut rng, m);
        let t = family(&mut rng, k_max);
        let r = largest_controlled_region(&p, &t, q, k_max).unwrap();
        if (r.size, r.report.v) != brute_region(&p, &t, q, k_max) {
            mismatches += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        mismatches == 0 && el < Duration::from_secs(30),
        format!("200 instances, m <= 200, {mismatches} mismatches, {el:.2?} (limit 30 s)"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..500 {
        let m = rng.random_range(1..=12);
        let alpha = rng.random_range(0.01..0.5);
        let mut p = pvalues(&mut rng, m);
        p.sort_by(f64::total_cmp);
        if hommel_value(&p, alpha).unwrap() != brute_hommel(&p, alpha) {
            mismatches += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        mismatches == 0 && el < Duration::from_secs(10),
        format!("500 vectors, m <= 12, {mismatches} mismatches, {el:.2?} (limit 10 s)"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let mut bad = Vec::new();
    for i in 0..100 {
        let m = rng.random_range(10..=200);
        let b = rng.random_range(40..=300);
        let alpha = [0.05, 0.1, 0.2][rng.random_range(0..3)];
        let k_max = rng.random_range(1..=m.min(30));
        let budget = jer_budget(alpha, b);
        let nulls = null_matrix(&mut rng, b, m);

        let simes = calibrate_simes(&nulls, alpha, k_max).unwrap();
        let Calibration::Lambda(lambda) = simes.calibration else {
            unreachable!()
        };
        let jer = |l: f64| {
            let t = simes_family(m, l, k_max).unwrap();
            count_violations(&nulls, t.thresholds(), k_max).unwrap()
        };
        let next = f64::from_bits(lambda.to_bits() + 1);
        if !(jer(lambda) <= budget && jer(next) > budget) {
            bad.push(format!("simes #{i}"));
        }

        let b_train = rng.random_range(20..=200);
        let train = null_matrix(&mut rng, b_train, m);
        let tpl = learn_template(&train, k_max).unwrap();
        let learned = calibrate_learned(&nulls, &tpl, alpha, k_max).unwrap();
        let qualifies = |c: usize| count_violations(&nulls, tpl.curve(c), k_max).unwrap() <= budget;
        let ok = match learned.calibration {
            Calibration::Curve(c) => qualifies(c) && (c == b_train || !qualifies(c + 1)),
            _ => learned.fallback && !qualifies(1),
        };
        if !ok {
            bad.push(format!("learned #{i}"));
        }
    }
    let el = start.elapsed();
    outcome(
        bad.is_empty() && el < Duration::from_secs(60),
        format!("100 instances x 2 calibrations, failures {bad:?}, {el:.2?} (limit 60 s)"),
    )
}

fn criterion_5_config(pi0: f64, n_runs: usize) -> SimulationConfig {
    SimulationConfig {
        dims: vec![10, 10, 10],
        pi0,
        fwhm: 4.0,
        n_train: 40,
        n_infer: 30,
        b_train: 200,
        b_infer: 200,
        q: 0.1,
        alpha: 0.05,
        n_runs,
        seed: 20_240_501,
        ..Default::default()
    }
}

fn criterion_5(report: &ExperimentReport, elapsed: Duration) -> Outcome {
    let runs = report.runs.len() as f64;
    let limit = 0.05 + 2.0 * (0.05 * 0.95 / runs).sqrt();
    let mut pass = report.failures.is_empty() && report.runs.len() == 200;
    let mut parts = Vec::new();
    for method in Method::ALL {
        let s = report.summary_for(method).unwrap();
        pass &= s.violation_fraction <= limit;
        parts.push(format!("{} {:.3}", method, s.violation_fraction));
    }
    pass &= elapsed < Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "FDP > q fraction over {runs} runs: {} (limit {limit:.3}), {elapsed:.1?}",
            parts.join(", ")
        ),
    )
}

fn criterion_6(report: &ExperimentReport) -> Outcome {
    let tpr = |m| report.summary_for(m).unwrap().mean_tpr;
    let (ari, simes, notip) = (
        tpr(Method::Ari),
        tpr(Method::CalibratedSimes),
        tpr(Method::Notip),
    );
    let gain_ari = report.tpr_gain(Method::Notip, Method::Ari).unwrap();
    let gain_simes = report
        .tpr_gain(Method::Notip, Method::CalibratedSimes)
        .unwrap();
    let pass = notip >= simes && simes >= ari && gain_ari >= 0.30 && gain_simes >= 0.10;
    outcome(
        pass,
        format!(
            "mean TPR ari {ari:.3}, calibrated-simes {simes:.3}, notip {notip:.3}, notip-single {:.3}; \
             gain over ari {:+.1}% (need >= 30%), over simes {:+.1}% (need >= 10%)",
            tpr(Method::NotipSingle),
            100.0 * gain_ari,
            100.0 * gain_simes
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Instant::now();
    let mut bad = 0;
    for _ in 0..50 {
        let m = rng.random_range(200..=400);
        let nulls = null_matrix(&mut rng, 100, m);
        let t = if rng.random_bool(0.5) {
            let train = null_matrix(&mut rng, 100, m);
            let tpl = learn_template(&train, 200).unwrap();
            tpl.curve(rng.random_range(1..=100)).to_vec()
        } else {
            family(&mut rng, 200)
        };
        let j: Vec<f64> = [10, 50, 200]
            .iter()
            .map(|&k| estimate_jer(&nulls, &t, k).unwrap())
            .collect();
        if !(j[0] <= j[1] && j[1] <= j[2]) {
            bad += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        bad == 0 && el < Duration::from_secs(30),
        format!("50 instances, K in {{10, 50, 200}}, {bad} violations, {el:.2?} (limit 30 s)"),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let report = experiment_driver(&criterion_5_config(1.0, 100)).unwrap();
    let el = start.elapsed();
    let limit = 0.95 - 2.0 * (0.05 * 0.95 / 100.0f64).sqrt();
    let mut pass = report.failures.is_empty() && el < Duration::from_secs(5 * 60);
    let mut parts = Vec::new();
    for method in Method::ALL {
        let s = report.summary_for(method).unwrap();
        pass &= s.empty_region_fraction >= limit;
        parts.push(format!("{} {:.2}", method, s.empty_region_fraction));
    }
    outcome(
        pass,
        format!(
            "empty-region fraction: {} (need >= {limit:.3}), {el:.1?}",
            parts.join(", ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.toml");
    std::fs::write(&config, criterion_5_config(0.9, 20).to_toml_string()).unwrap();
    let start = Instant::now();
    let run = |out: &Path| {
        Command::new(env!("CARGO_BIN_EXE_notipkit"))
            .args(["experiment", "--config"])
            .arg(&config)
            .arg("--output-dir")
            .arg(out)
            .output()
            .unwrap()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (ra, rb) = (run(&a), run(&b));
    let el = start.elapsed();
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap_or_default();
    let (ca, cb) = (read(&a), read(&b));
    let pass = ra.status.success()
        && rb.status.success()
        && !ca.is_empty()
        && ca == cb
        && el < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "two runs of `notipkit experiment` (20 runs each): metrics.csv {} ({} bytes), {el:.1?}",
            if ca == cb {
                "byte-identical"
            } else {
                "DIFFERENT"
            },
            ca.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let k = default_k_max(50_000);
    outcome(k == 1000, format!("default k_max for m = 50000 is {k}"))
}

fn main() {
    // the test harness passes filters and flags; run everything regardless
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "bound oracle equivalence", criterion_1()),
        (2, "region oracle equivalence", criterion_2()),
        (3, "Hommel oracle", criterion_3()),
        (4, "JER calibration exactness", criterion_4()),
    ];
    let start = Instant::now();
    let report = experiment_driver(&criterion_5_config(0.9, 200)).unwrap();
    let elapsed = start.elapsed();
    results.push((5, "FDP control", criterion_5(&report, elapsed)));
    results.push((6, "TPR ordering and gains", criterion_6(&report)));
    results.push((7, "truncation monotonicity", criterion_7()));
    results.push((8, "null-world sanity", criterion_8()));
    results.push((9, "determinism", criterion_9()));
    results.push((10, "k_max default", criterion_10()));

    println!();
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {tag}  {name}: {}", o.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: criteria {failed:?} FAIL");
        std::process::exit(1);
    }
}
