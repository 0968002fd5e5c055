//! Acceptance criteria. Each criterion prints one PASS/FAIL line to stderr
//! (written directly, so it shows without `--nocapture`); the test fails if
//! any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use snspd_array::analysis::{
    estimate_crosstalk, fit_count_rate_curve, fit_reset_time, jitter_experiment, run_sweep,
    sde_vs_flux_mc, Exposure, Regime,
};
use snspd_array::config::ExperimentConfig;
use snspd_array::engine::{apply_dead_time, simulate_run, tag_count_rates};
use snspd_array::model::sde_vs_flux;
use snspd_array::source::{apply_attenuation, gen_cw, split_to_elements, survival_probability};
use snspd_array::{Picos, SimConfig, SourceModel, ELEMENTS};

const SECOND: Picos = 1_000_000_000_000;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(out: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    let t = format!(
        "{:.3} s of {:.3} s",
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    match out {
        Ok(d) if elapsed <= budget => Ok(format!("{d}; {t}")),
        Ok(d) => Err(format!("{d}; over time budget: {t}")),
        Err(d) => Err(format!("{d}; {t}")),
    }
}

fn uniform() -> ExperimentConfig {
    ExperimentConfig::paper_uniform()
}

/// 1. Analytic SDE at 1e9 photons/s.
fn ghz_counting() -> Outcome {
    let cfg = uniform();
    let array = cfg.active_array();
    let op = cfg.operating_point();
    let reps = 1000u32;
    let start = Instant::now();
    let mut sde = 0.0;
    for _ in 0..reps {
        sde = std::hint::black_box(sde_vs_flux(&array, &op, std::hint::black_box(1e9)));
    }
    let per_call = start.elapsed() / reps;
    let out = check(
        (sde - 0.556).abs() <= 0.001 && sde >= 0.5,
        format!("sde(1e9/s) = {sde:.5}, target 0.556 ± 0.001"),
    );
    within_budget(out, per_call, Duration::from_millis(1))
}

/// 2. Monte Carlo SDE at 3e6 photons/s.
fn low_flux_sde() -> Outcome {
    let cfg = uniform();
    let exposure = Exposure::Counts {
        target: 1.006e6,
        min: 1,
        max: 10 * SECOND,
    };
    let p = sde_vs_flux_mc(
        &cfg.active_array(),
        &cfg.operating_point(),
        &[3e6],
        exposure,
        cfg.seed,
        cfg.instrument_jitter_ps,
    )
    .map_err(|e| e.to_string())?[0];
    check(
        p.incident_photons >= 1_000_000 && (p.sde_mc - 0.834).abs() <= 0.005,
        format!(
            "net SDE {:.4} over {} photons, target 0.834 ± 0.005",
            p.sde_mc, p.incident_photons
        ),
    )
}

/// 3. Reset-time recovery, Monte Carlo and noiseless.
fn reset_recovery() -> Outcome {
    let mut worst_mc: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    let phi: Vec<f64> = (0..11).map(|k| 1e3 * 10f64.powf(k as f64 / 2.0)).collect();
    for tau in [5.0, 9.6, 15.0] {
        let mut cfg = uniform();
        for e in &mut cfg.elements {
            e.dead_time_ns = tau;
        }
        // per-element incident 1e8/s at 0 dB down to 1e3/s at 50 dB
        let template = SimConfig {
            source: SourceModel::cw(1.6e9),
            ..cfg.sim_config()
        };
        let db: Vec<f64> = (0..11).map(|k| 5.0 * k as f64).collect();
        let sweep = run_sweep(&template, &db, cfg.sweep.exposure()).map_err(|e| e.to_string())?;
        for ch in 0..ELEMENTS {
            let fit = fit_reset_time(&sweep, ch).map_err(|e| format!("tau {tau} ch {ch}: {e}"))?;
            worst_mc = worst_mc.max((fit.tau_ns - tau).abs() / tau);
        }

        let (eps, dark) = (0.834, 5000.0);
        let counted: Vec<f64> = phi
            .iter()
            .map(|p| {
                let x = eps * p;
                x / (1.0 + x * tau * 1e-9) + dark
            })
            .collect();
        let fit = fit_count_rate_curve(&phi, &counted).map_err(|e| e.to_string())?;
        for (got, want) in [(fit.tau_ns, tau), (fit.eps, eps), (fit.dark_hz, dark)] {
            worst_exact = worst_exact.max((got - want).abs() / want);
        }
    }
    check(
        worst_mc < 0.05 && worst_exact < 0.001,
        format!(
            "worst relative error: Monte Carlo {:.2}% (limit 5%), noiseless {:.4}% (limit 0.1%)",
            worst_mc * 100.0,
            worst_exact * 100.0
        ),
    )
}

/// 4. Jitter pipeline.
fn jitter_pipeline() -> Outcome {
    let mut cfg = uniform();
    cfg.jitter.duration_s = 0.5;
    let channels = jitter_experiment(
        &cfg.active_array(),
        &cfg.operating_point(),
        &cfg.jitter_params(),
    )
    .map_err(|e| e.to_string())?;
    let expected_meas = (86.1f64.powi(2) + 22f64.powi(2) + 8f64.powi(2)).sqrt();
    let mut worst_meas: f64 = 0.0;
    let mut worst_snspd: f64 = 0.0;
    let mut min_tags = usize::MAX;
    for c in &channels {
        let b = c
            .budget
            .as_ref()
            .map_err(|e| format!("channel {}: {e}", c.channel))?;
        worst_meas = worst_meas.max((b.j_meas - expected_meas).abs());
        worst_snspd = worst_snspd.max((b.j_snspd - 86.1).abs());
        min_tags = min_tags.min(c.tags);
    }
    check(
        min_tags >= 1_000_000 && worst_meas <= 2.0 && worst_snspd <= 2.0,
        format!(
            "worst |j_meas - {expected_meas:.2}| = {worst_meas:.2} ps, worst |j_snspd - 86.1| = {worst_snspd:.2} ps, min tags {min_tags}"
        ),
    )
}

/// 5. Crosstalk recovery in both regimes.
fn crosstalk_recovery() -> Outcome {
    let mut cfg = uniform();
    cfg.crosstalk_run.duration_s = 0.5;
    let mut details = Vec::new();
    let mut ok = true;
    for (regime, target, tol) in [(Regime::HighBias, 5.0, 0.5), (Regime::LowBias, 0.10, 0.03)] {
        let est = estimate_crosstalk(&cfg.array(Some(regime)), &cfg.crosstalk_params(regime))
            .map_err(|e| e.to_string())?;
        let pct = est.percent[4][5];
        let (i, j, _) = est.max_percent();
        let hist = est.delay_hist.as_ref().ok_or("no delay histogram")?;
        let peak = hist.peak_delay_ps().ok_or("empty delay histogram")?;
        ok &=
            (pct - target).abs() <= tol && (i, j) == (4, 5) && (peak - 1000.0).abs() <= hist.bin_ps;
        details.push(format!(
            "{}: 4->5 {pct:.3}% (target {target} ± {tol}), delay peak {peak} ps",
            regime.as_str()
        ));
    }
    check(ok, details.join("; "))
}

/// 6. Dead-time invariants.
fn dead_time_invariants() -> Outcome {
    let base = uniform();
    let mut violations = Vec::new();
    for (k, tau) in [1.0, 5.0, 9.6, 15.0, 40.0].into_iter().enumerate() {
        let mut cfg = base.clone();
        for e in &mut cfg.elements {
            e.dead_time_ns = tau;
        }
        for rate in [1e7, 1e9, 1e10] {
            let duration = SECOND / 10_000;
            let run = simulate_run(&SimConfig {
                source: SourceModel::cw(rate),
                duration,
                seed: 1000 + k as u64,
                ..cfg.sim_config()
            })
            .map_err(|e| e.to_string())?;
            for (ch, regs) in run.true_registrations.iter().enumerate() {
                if regs.windows(2).any(|w| ((w[1] - w[0]) as f64) < tau * 1e3) {
                    violations.push(format!("gap < tau on ch {ch} (tau {tau}, rate {rate})"));
                }
            }
            if rate == 1e10 {
                let ceiling = 1e9 / tau + 1.0 / (duration as f64 / 1e12);
                for (ch, r) in tag_count_rates(&run.tags, duration).iter().enumerate() {
                    if *r > ceiling {
                        violations.push(format!("ch {ch} rate {r} above 1/tau (tau {tau})"));
                    }
                }
            }
        }
    }
    for dt in [0, 1, 4_800, 9_599, 9_600, 12_000] {
        let n = apply_dead_time(&[1_000, 1_000 + dt], 9.6).len();
        let want = if dt < 9_600 { 1 } else { 2 };
        if n != want {
            violations.push(format!("two photons {dt} ps apart gave {n} registrations"));
        }
    }
    check(
        violations.is_empty(),
        if violations.is_empty() {
            "15 configurations and 6 photon pairs clean".to_string()
        } else {
            violations.join("; ")
        },
    )
}

/// 7. Statistical soundness of the source.
fn statistical_soundness() -> Outcome {
    let rate = 1e7;
    let s = gen_cw(rate, SECOND / 10 + SECOND / 1000, 7);
    let a = &s.arrivals()[..1_000_000.min(s.len())];
    if a.len() < 1_000_000 {
        return Err(format!("only {} arrivals", a.len()));
    }
    let mean_gap = (a[a.len() - 1] - a[0]) as f64 / (a.len() - 1) as f64;
    let gap_err = (mean_gap - 1e12 / rate).abs() / (1e12 / rate);

    let stream = gen_cw(rate, SECOND / 10, 8);
    let n = stream.len() as f64;
    let db = 3.0;
    let p = survival_probability(db);
    let kept = apply_attenuation(&stream, db, 9).len() as f64;
    let att_z = (kept - n * p) / (n * p * (1.0 - p)).sqrt();

    let w = [1.0 / 16.0; ELEMENTS];
    let split = split_to_elements(&stream, &w, 10).map_err(|e| e.to_string())?;
    let split_z = split
        .iter()
        .map(|s| {
            let e = n / 16.0;
            ((s.len() as f64 - e) / (e * (1.0 - 1.0 / 16.0)).sqrt()).abs()
        })
        .fold(0.0, f64::max);
    check(
        gap_err < 0.01 && att_z.abs() < 3.0 && split_z < 3.0,
        format!(
            "mean gap error {:.3}%, attenuation z {att_z:.2}, worst split z {split_z:.2}",
            gap_err * 100.0
        ),
    )
}

/// Stdout plus the bytes of every file the command reports writing.
fn written(stdout: &[u8]) -> (Vec<u8>, BTreeMap<String, Vec<u8>>) {
    let files = String::from_utf8_lossy(stdout)
        .lines()
        .filter_map(|l| l.strip_prefix("wrote "))
        .map(|f| {
            (
                f.to_string(),
                std::fs::read(Path::new(f)).unwrap_or_default(),
            )
        })
        .collect();
    (stdout.to_vec(), files)
}

/// 8. Every CLI command twice with the same seed.
fn cli_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands: [(&str, &[&str]); 7] = [
        ("simulate", &["--duration", "0.01"]),
        ("sweep", &["--set", "sweep.target_counts=2e4"]),
        ("fit-reset", &["--set", "sweep.target_counts=2e4"]),
        ("jitter", &["--duration", "0.02"]),
        ("crosstalk", &["--duration", "0.05"]),
        ("sde-curve", &["--set", "sde_curve.min_photons=1e5"]),
        ("report", &[]),
    ];
    let out = root.path().join("run");
    let out_s = out.display().to_string();
    let mut first = BTreeMap::new();
    let mut differing = Vec::new();
    for pass in 0..2 {
        for (cmd, extra) in &commands {
            let status = Command::new(env!("CARGO_BIN_EXE_snspd-array"))
                .arg(cmd)
                .args(["--seed", "42", "--out", &out_s])
                .args(*extra)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!(
                    "{cmd} failed: {}",
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            let files = written(&status.stdout);
            if pass == 0 {
                if files.1.is_empty() {
                    return Err(format!("{cmd} reported no output files"));
                }
                first.insert(*cmd, files);
            } else if first.get(cmd) != Some(&files) {
                differing.push(*cmd);
            }
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} commands byte-identical across two runs", commands.len())
        } else {
            format!("outputs differ for: {}", differing.join(", "))
        },
    )
}

#[test]
fn acceptance_criteria() {
    type Criterion = (u8, &'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 8] = [
        (
            1,
            "GHz-counting SDE (analytic)",
            ghz_counting,
            Duration::MAX,
        ),
        (
            2,
            "low-flux SDE (Monte Carlo)",
            low_flux_sde,
            Duration::from_secs(30),
        ),
        (
            3,
            "reset-time recovery",
            reset_recovery,
            Duration::from_secs(60),
        ),
        (
            4,
            "jitter pipeline",
            jitter_pipeline,
            Duration::from_secs(60),
        ),
        (
            5,
            "crosstalk recovery",
            crosstalk_recovery,
            Duration::from_secs(120),
        ),
        (
            6,
            "dead-time invariants",
            dead_time_invariants,
            Duration::from_secs(10),
        ),
        (
            7,
            "statistical soundness",
            statistical_soundness,
            Duration::from_secs(10),
        ),
        (
            8,
            "CLI determinism",
            cli_determinism,
            Duration::from_secs(60),
        ),
    ];
    let mut failed = Vec::new();
    for (n, name, run, budget) in criteria {
        let start = Instant::now();
        let out = run();
        // criterion 1 carries its own per-call budget
        let out = if budget == Duration::MAX {
            out
        } else {
            within_budget(out, start.elapsed(), budget)
        };
        let line = match &out {
            Ok(d) => format!("acceptance {n} [{name}]: PASS ({d})"),
            Err(d) => format!("acceptance {n} [{name}]: FAIL ({d})"),
        };
        let _ = writeln!(std::io::stderr(), "{line}");
        if out.is_err() {
            failed.push(n);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
