//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use sysid_core::estimators::{lad_rowwise, LadConfig, RegressionData};
use sysid_core::filtering::{filter_ranking, filter_threshold, RankingParams, ThresholdParams};
use sysid_core::harness::{
    failure_demo, failure_summary, run_experiment, EstimatorName, ExperimentConfig, ExperimentReport, Preset,
};
use sysid_core::pipeline::two_stage;
use sysid_core::rng::{Purpose, Stream};
use sysid_core::simulate::simulate;
use sysid_core::sysgen::generate_system;
use sysid_core::{Matrix, Vector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

fn med_err(report: &ExperimentReport, t: usize, est: &str) -> f64 {
    let errs: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.t == t && r.estimator == est && r.ok())
        .filter_map(|r| r.opnorm_err)
        .collect();
    assert_eq!(errs.len(), report.config.seeds, "failed trials for {est} at T = {t}");
    median(&errs)
}

fn criterion_1() -> Outcome {
    let report = run_experiment(&ExperimentConfig::preset(Preset::OneStageComparison), None).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for est in ["ls", "l2"] {
        for t in [1000, 2000, 4000] {
            let e = med_err(&report, t, est);
            pass &= (0.1..=1.0).contains(&e);
            parts.push(format!("{est}@{t}={e:.3}"));
        }
        pass &= med_err(&report, 4000, est) >= 0.5 * med_err(&report, 1000, est);
    }
    let l1 = med_err(&report, 4000, "l1");
    let ratio = l1 / med_err(&report, 4000, "ls");
    pass &= ratio <= 0.1;
    parts.push(format!("l1@4000={l1:.4} l1/ls={ratio:.3}"));
    outcome(pass, parts.join(" "))
}

fn criteria_2_and_3() -> (Outcome, Outcome) {
    let report = run_experiment(&ExperimentConfig::preset(Preset::TwoStageVsOneStage), None).unwrap();
    let grid = report.config.t_grid.clone();
    let t_max = *grid.last().unwrap();
    let two = med_err(&report, t_max, "two_stage");
    let l1 = med_err(&report, t_max, "l1");
    let c2 = outcome(two <= 0.5 * l1, format!("two_stage={two:.5} l1={l1:.5} ratio={:.3}", two / l1));

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &t in &grid {
        let retained: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.t == t && r.estimator == "two_stage")
            .filter_map(|r| r.retained_median)
            .collect();
        xs.push(median(&retained).ln());
        ys.push(med_err(&report, t, "two_stage").ln());
    }
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let span = (xs[xs.len() - 1] - xs[0]).exp();
    let c3 = outcome(
        (-0.75..=-0.25).contains(&slope) && span >= 10.0,
        format!("slope={slope:.3} retained span={span:.1}x"),
    );
    (c2, c3)
}

fn criterion_4() -> Outcome {
    let cfg = ExperimentConfig::preset(Preset::TwoStageVsOneStage);
    let sys = generate_system(&cfg.system).unwrap();
    let mut worst_node_rates = Vec::new();
    for trial in 0..cfg.seeds as u64 {
        let rec = simulate(&sys, 2000, &cfg.noise, &cfg.attack, None, 7_000 + trial).unwrap();
        let report = two_stage(&rec.states, &cfg.filter, None).unwrap();
        let middle = report.filter.middle_set.as_ref().unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..sys.n() {
            let kept = &report.filter.retained[i];
            let wrong = middle
                .iter()
                .filter(|&&t| kept.binary_search(&t).is_ok() == rec.schedule.xi[t][i])
                .count();
            worst = worst.max(wrong as f64 / middle.len() as f64);
        }
        worst_node_rates.push(worst);
    }
    let m = median(&worst_node_rates);
    outcome(m <= 0.02, format!("median over seeds of worst-node misclassification = {:.4}%", 100.0 * m))
}

fn criterion_5() -> Outcome {
    let report = failure_demo(2, 90.0, 100_000, 10, None).unwrap();
    let s = failure_summary(&report).unwrap();
    outcome(
        s.ratio_at_max >= 10.0 && s.clean_decreasing,
        format!(
            "ratio at T=1e5: {:.1}, clean arm {:?}, monotone={}",
            s.ratio_at_max,
            s.clean_median_frob.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>(),
            s.clean_decreasing
        ),
    )
}

fn l1_obj(data: &RegressionData, coef: &[f64]) -> f64 {
    data.residuals(coef).unwrap().iter().map(|r| r.abs()).sum()
}

/// Minimum of the convex piecewise-linear objective over its breakpoints.
fn scalar_lad_oracle(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .filter(|(xi, _)| **xi != 0.0)
        .map(|(xi, yi)| {
            let b = yi / xi;
            x.iter().zip(y).map(|(u, v)| (v - b * u).abs()).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Brute-force vertex enumeration for two regressors.
fn planar_lad_oracle(x: &Matrix, y: &[f64]) -> f64 {
    let m = x.rows();
    let mut best = f64::INFINITY;
    for j in 0..m {
        for k in j + 1..m {
            let (a, b, c, d) = (x.row(j)[0], x.row(j)[1], x.row(k)[0], x.row(k)[1]);
            let det = a * d - b * c;
            if det.abs() < 1e-9 {
                continue;
            }
            let coef = [(y[j] * d - b * y[k]) / det, (a * y[k] - c * y[j]) / det];
            let f: f64 = (0..m).map(|r| (y[r] - x.row(r)[0] * coef[0] - x.row(r)[1] * coef[1]).abs()).sum();
            best = best.min(f);
        }
    }
    best
}

fn criterion_6() -> Outcome {
    let cfg = LadConfig::default();
    let mut rng = Stream::new(606, Purpose::Test);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..1000 {
        let m = 1 + (rng.next_u64() % 20) as usize;
        let x: Vec<f64> = (0..m).map(|_| rng.next_range(-3.0, 3.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.next_range(-10.0, 10.0)).collect();
        let data = RegressionData::new(Matrix::new(m, 1, x.clone()).unwrap(), Vector(y.clone())).unwrap();
        let fit = lad_rowwise(&data, &cfg).unwrap();
        let oracle = scalar_lad_oracle(&x, &y);
        worst_rel = worst_rel.max((l1_obj(&data, &fit.coef) - oracle).abs() / oracle.max(1e-300));
    }
    let mut certified = 0;
    let mut planar_worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 5) as usize;
        let m = 3 * n + (rng.next_u64() % (51 - 3 * n as u64)) as usize;
        let x = Matrix::from_fn(m, n, |_, _| rng.next_normal());
        let y: Vec<f64> = (0..m)
            .map(|_| {
                let heavy = rng.next_bernoulli(0.2);
                rng.next_normal() * if heavy { 20.0 } else { 1.0 }
            })
            .collect();
        let data = RegressionData::new(x.clone(), Vector(y.clone())).unwrap();
        let fit = lad_rowwise(&data, &cfg).unwrap();
        if fit.report.certified && fit.report.certificate_gap <= 1e-6 {
            certified += 1;
        }
        if n == 2 {
            let oracle = planar_lad_oracle(&x, &y);
            planar_worst = planar_worst.max((l1_obj(&data, &fit.coef) - oracle).abs() / oracle);
        }
    }
    outcome(
        worst_rel <= 1e-8 && certified >= 990 && planar_worst <= 1e-8,
        format!("1-D worst rel gap {worst_rel:.1e}; certified {certified}/1000; planar vertex-oracle worst rel gap {planar_worst:.1e}"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = Stream::new(707, Purpose::Test);
    let mut mismatches = 0;
    let mut card_errors = 0;
    for _ in 0..200 {
        let n = 1 + (rng.next_u64() % 4) as usize;
        let t_len = 2 + (rng.next_u64() % 60) as usize;
        let states: Vec<Vector> = (0..=t_len)
            .map(|_| Vector((0..n).map(|_| rng.next_range(-5.0, 5.0)).collect()))
            .collect();
        let a = Matrix::from_fn(n, n, |_, _| rng.next_range(-1.0, 1.0));
        let (b1, b2) = (rng.next_range(0.0, 1.0), rng.next_range(0.0, 3.0));

        let result = filter_threshold(&states, &a, &ThresholdParams::new(b1, b2).unwrap()).unwrap();
        for i in 0..n {
            let direct: Vec<usize> = (0..t_len)
                .filter(|&t| {
                    let pred: f64 = (0..n).map(|j| a.row(i)[j] * states[t][j]).sum();
                    let norm = states[t].iter().map(|v| v * v).sum::<f64>().sqrt();
                    (states[t + 1][i] - pred).abs() <= b1 * norm + b2
                })
                .collect();
            mismatches += usize::from(direct != result.retained[i]);
        }

        let q1 = rng.next_range(0.3, 1.0);
        let q2 = rng.next_range(0.0, 1.0);
        let ranked = filter_ranking(&states, &a, &RankingParams::quantile(q1, q2)).unwrap();
        let c = ranked.middle_set.as_ref().unwrap();
        let expect_c = (q1 * t_len as f64).floor() as usize;
        let expect_keep = (q2 * expect_c as f64).floor() as usize;
        let norms: Vec<f64> = (0..t_len).map(|t| states[t].iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let below = (0..t_len)
            .filter(|t| !c.contains(t) && norms[*t] < c.iter().map(|&s| norms[s]).fold(f64::INFINITY, f64::min))
            .count();
        let expect_below = (((1.0 - q1) * t_len as f64) / 2.0).ceil() as usize;
        card_errors += usize::from(c.len() != expect_c || below != expect_below.min(t_len - expect_c));
        for i in 0..n {
            let kept = &ranked.retained[i];
            let ratio = |t: usize| {
                let pred: f64 = (0..n).map(|j| a.row(i)[j] * states[t][j]).sum();
                (states[t + 1][i] - pred).abs() / norms[t]
            };
            let max_kept = kept.iter().map(|&t| ratio(t)).fold(f64::NEG_INFINITY, f64::max);
            let min_dropped = c.iter().filter(|t| !kept.contains(t)).map(|&t| ratio(t)).fold(f64::INFINITY, f64::min);
            card_errors += usize::from(kept.len() != expect_keep || max_kept > min_dropped || !kept.iter().all(|t| c.contains(t)));
        }
    }
    outcome(
        mismatches == 0 && card_errors == 0,
        format!("threshold membership mismatches {mismatches}; ranking cardinality/order violations {card_errors}"),
    )
}

fn criterion_8() -> Outcome {
    let dir = std::env::temp_dir().join(format!("sysid-acceptance-{}", std::process::id()));
    let mut configs = vec![
        ExperimentConfig::preset(Preset::OneStageComparison),
        ExperimentConfig::preset(Preset::TwoStageVsOneStage),
        ExperimentConfig::preset(Preset::OneStageFailureDemo),
    ];
    for cfg in &mut configs {
        cfg.seeds = 4;
        cfg.t_grid.truncate(3);
        if cfg.preset != Preset::OneStageFailureDemo {
            cfg.estimators.push(EstimatorName::TwoStage);
            cfg.estimators.dedup();
        }
    }
    let mut identical = 0;
    for (k, cfg) in configs.iter().enumerate() {
        let mut bytes = Vec::new();
        for threads in [1, 4, 4] {
            let mut c = cfg.clone();
            let out = dir.join(format!("{k}-{threads}-{}", bytes.len()));
            c.output_dir = Some(out.clone());
            run_experiment(&c, Some(threads)).unwrap();
            bytes.push(std::fs::read(out.join("rows.csv")).unwrap());
        }
        identical += usize::from(bytes.windows(2).all(|w| w[0] == w[1]));
    }
    let _ = std::fs::remove_dir_all(&dir);
    outcome(
        identical == configs.len(),
        format!("{identical}/{} configs byte-identical across 1/4/4 threads", configs.len()),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let c1 = criterion_1();
    let (c2, c3) = criteria_2_and_3();
    let results = [
        ("one-stage comparison", c1),
        ("two-stage superiority", c2),
        ("consistency rate", c3),
        ("detection quality", criterion_4()),
        ("least-squares failure demo", criterion_5()),
        ("LAD solver oracles", criterion_6()),
        ("filter equivalence", criterion_7()),
        ("determinism", criterion_8()),
    ];
    let mut failed = 0;
    for (k, (name, o)) in results.iter().enumerate() {
        println!("{} criterion {} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/8 passed in {:.1}s", 8 - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
