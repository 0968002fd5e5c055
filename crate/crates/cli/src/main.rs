//! `snspd-array`: run simulated characterization experiments from a config file.
//!
//! Settings are resolved in this order, later wins: the config file (or the
//! built-in `paper_uniform` when `--config` is absent), `--set key=value`
//! overrides in command-line order, then the dedicated flags `--seed`,
//! `--duration`, `--out` and `--regime`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snspd_array::analysis::{
    estimate_crosstalk, fit_reset_time, jitter_experiment, jitter_outliers, max_rate_summary,
    run_sweep, sde_vs_flux_mc, SweepResult,
};
use snspd_array::config::{ExperimentConfig, PAPER_SPREAD, PAPER_UNIFORM};
use snspd_array::engine::{measured_view, simulate_run, tag_count_rates};
use snspd_array::formats::{
    read_sweep_csv, write_crosstalk_csv, write_delay_csv, write_fits_csv, write_jitter_csv,
    write_measured_tags, write_sde_csv, write_sweep_csv, write_timetags, TagFileHeader,
};
use snspd_array::report::{self, build_report};

#[derive(Parser)]
#[command(
    name = "snspd-array",
    version,
    about = "SNSPD array Monte Carlo characterization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file path, or `builtin:paper_uniform` / `builtin:paper_spread`.
    #[arg(long)]
    config: Option<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Duration in seconds for simulate, jitter and crosstalk runs.
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set element.3.dead_time_ns=12`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    set: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured source and write time tags.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Omit the origin column (what a real time tagger would record).
        #[arg(long)]
        measured: bool,
    },
    /// Count rate versus attenuation.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Fit reset time per channel, from a fresh sweep or an existing sweep CSV.
    FitReset {
        #[command(flatten)]
        common: Common,
        /// Existing sweep CSV to fit instead of running a sweep.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Pulsed-laser timing jitter per channel.
    Jitter {
        #[command(flatten)]
        common: Common,
    },
    /// Pairwise crosstalk matrix from dark-count aggressors.
    Crosstalk {
        #[command(flatten)]
        common: Common,
        /// high, low or both.
        #[arg(long)]
        regime: Option<String>,
    },
    /// System detection efficiency versus flux, Monte Carlo and analytic.
    SdeCurve {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize the CSV outputs found in the output directory.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn runtime<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn load_config(common: &Common, extra: &[(String, String)]) -> Result<ExperimentConfig, Failure> {
    let text = match common.config.as_deref() {
        None | Some("builtin:paper_uniform") => PAPER_UNIFORM.to_string(),
        Some("builtin:paper_spread") => PAPER_SPREAD.to_string(),
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config '{path}': {e}")))?,
    };
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(d) = common.duration {
        for key in [
            "duration_s",
            "jitter.duration_s",
            "crosstalk_run.duration_s",
        ] {
            overrides.push((key.into(), d.to_string()));
        }
    }
    if let Some(out) = &common.out {
        overrides.push(("output_dir".into(), out.display().to_string()));
    }
    overrides.extend_from_slice(extra);
    ExperimentConfig::parse_with_overrides(&text, &overrides).map_err(|e| {
        Failure::Config(match e.key() {
            Some(key) => format!("config error at '{key}': {e}"),
            None => format!("config error: {e}"),
        })
    })
}

/// Write via a temporary sibling and rename into place.
fn write_atomic<F>(path: &Path, fill: F) -> CmdResult
where
    F: FnOnce(&mut BufWriter<std::fs::File>) -> std::io::Result<()>,
{
    let ctx = path.display().to_string();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(runtime(&ctx))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(runtime(&ctx))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn echo_config(cfg: &ExperimentConfig) -> CmdResult {
    let text = cfg.to_text();
    write_atomic(&cfg.output_dir.join("effective_config.conf"), |w| {
        w.write_all(text.as_bytes())
    })
}

fn cmd_simulate(common: &Common, measured: bool) -> CmdResult {
    let cfg = load_config(common, &[])?;
    echo_config(&cfg)?;
    let sim = cfg.sim_config();
    let run = simulate_run(&sim).map_err(runtime("simulation"))?;
    let header = TagFileHeader {
        duration: sim.duration,
        seed: sim.seed,
    };
    write_atomic(&cfg.output_dir.join("timetags.txt"), |w| {
        if measured {
            write_measured_tags(w, &header, &measured_view(&run.tags))
        } else {
            write_timetags(w, &header, &run.tags)
        }
    })?;
    let rates = tag_count_rates(&run.tags, sim.duration);
    println!("channel,rate_hz");
    for (ch, r) in rates.iter().enumerate() {
        println!("{ch},{r}");
    }
    println!("total tags: {}", run.tags.len());
    Ok(())
}

fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult, Failure> {
    let result = run_sweep(
        &cfg.sweep_template(),
        &cfg.sweep.db_list(),
        cfg.sweep.exposure(),
    )
    .map_err(runtime("sweep"))?;
    write_atomic(&cfg.output_dir.join("sweep.csv"), |w| {
        write_sweep_csv(w, &result)
    })?;
    Ok(result)
}

fn cmd_sweep(common: &Common) -> CmdResult {
    let cfg = load_config(common, &[])?;
    echo_config(&cfg)?;
    sweep(&cfg).map(|_| ())
}

fn cmd_fit_reset(common: &Common, input: Option<&Path>) -> CmdResult {
    let cfg = load_config(common, &[])?;
    echo_config(&cfg)?;
    let result = match input {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(runtime(&path.display().to_string()))?;
            read_sweep_csv(&text, cfg.active_array().couplings())
                .map_err(runtime(&path.display().to_string()))?
        }
        None => sweep(&cfg)?,
    };
    let mut fits = Vec::new();
    for ch in 0..snspd_array::ELEMENTS {
        match fit_reset_time(&result, ch) {
            Ok(f) => {
                if f.tau_unconstrained {
                    eprintln!("channel {ch}: warning: sweep does not constrain the reset time");
                }
                fits.push((ch, f));
            }
            Err(e) => eprintln!("channel {ch}: {e}"),
        }
    }
    if fits.is_empty() {
        return Err(Failure::Runtime(
            "reset-time fit failed on every channel".into(),
        ));
    }
    write_atomic(&cfg.output_dir.join(report::FITS_FILE), |w| {
        write_fits_csv(w, &fits)
    })?;
    let only: Vec<_> = fits.iter().map(|(_, f)| *f).collect();
    match max_rate_summary(&only) {
        Ok(s) => println!(
            "max count rate: mean of 1/tau {:.1} MHz, 1/mean(tau) {:.1} MHz",
            s.mean_of_rates_hz / 1e6,
            s.rate_of_mean_tau_hz / 1e6
        ),
        Err(e) => eprintln!("max count rate: {e}"),
    }
    Ok(())
}

fn cmd_jitter(common: &Common) -> CmdResult {
    let cfg = load_config(common, &[])?;
    echo_config(&cfg)?;
    let channels = jitter_experiment(
        &cfg.active_array(),
        &cfg.operating_point(),
        &cfg.jitter_params(),
    )
    .map_err(runtime("jitter"))?;
    for c in &channels {
        if let Err(e) = &c.budget {
            eprintln!("channel {}: {e} ({} tags)", c.channel, c.tags);
        }
    }
    if channels.iter().all(|c| c.budget.is_err()) {
        return Err(Failure::Runtime(
            "jitter estimate failed on every channel".into(),
        ));
    }
    let values: Vec<Option<f64>> = channels
        .iter()
        .map(|c| c.budget.as_ref().ok().map(|b| b.j_snspd))
        .collect();
    for (c, flagged) in channels.iter().zip(jitter_outliers(&values)) {
        if flagged {
            eprintln!("channel {}: jitter is an outlier", c.channel);
        }
    }
    write_atomic(&cfg.output_dir.join(report::JITTER_FILE), |w| {
        write_jitter_csv(w, &channels)
    })
}

fn cmd_crosstalk(common: &Common, regime: Option<&str>) -> CmdResult {
    let extra: Vec<(String, String)> = regime
        .map(|r| vec![("crosstalk_run.regime".to_string(), r.to_string())])
        .unwrap_or_default();
    let cfg = load_config(common, &extra)?;
    echo_config(&cfg)?;
    let mut estimates = Vec::new();
    for regime in cfg.crosstalk_run.regime.regimes() {
        let est = estimate_crosstalk(&cfg.array(Some(regime)), &cfg.crosstalk_params(regime))
            .map_err(runtime(regime.as_str()))?;
        let (i, j, pct) = est.max_percent();
        println!(
            "{} bias: max crosstalk {pct:.4} % ({i} -> {j})",
            regime.as_str()
        );
        if let Some(peak) = est.delay_hist.as_ref().and_then(|h| h.peak_delay_ps()) {
            println!("{} bias: delay peak {peak} ps", regime.as_str());
        }
        if !est.clamped.is_empty() {
            eprintln!(
                "{} bias: {} pairs had fewer counts than baseline and were set to 0",
                regime.as_str(),
                est.clamped.len()
            );
        }
        estimates.push(est);
    }
    write_atomic(&cfg.output_dir.join(report::CROSSTALK_FILE), |w| {
        write_crosstalk_csv(w, &estimates)
    })?;
    let hists: Vec<_> = estimates
        .iter()
        .filter_map(|e| e.delay_hist.as_ref().map(|h| (e.regime, h)))
        .collect();
    write_atomic(&cfg.output_dir.join("crosstalk_delay.csv"), |w| {
        write_delay_csv(w, &hists)
    })
}

fn cmd_sde_curve(common: &Common) -> CmdResult {
    let cfg = load_config(common, &[])?;
    echo_config(&cfg)?;
    let points = sde_vs_flux_mc(
        &cfg.active_array(),
        &cfg.operating_point(),
        &cfg.sde_curve.fluxes_hz,
        cfg.sde_curve.exposure(),
        cfg.seed,
        cfg.instrument_jitter_ps,
    )
    .map_err(runtime("sde curve"))?;
    write_atomic(&cfg.output_dir.join(report::SDE_FILE), |w| {
        write_sde_csv(w, &points)
    })
}

fn cmd_report(common: &Common) -> CmdResult {
    let cfg = load_config(common, &[])?;
    let text = build_report(&cfg.output_dir, cfg.sde_curve.reference_flux_hz)
        .map_err(runtime("report"))?;
    write_atomic(&cfg.output_dir.join("report.txt"), |w| {
        w.write_all(text.as_bytes())
    })?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Simulate { common, measured } => cmd_simulate(common, *measured),
        Command::Sweep { common } => cmd_sweep(common),
        Command::FitReset { common, input } => cmd_fit_reset(common, input.as_deref()),
        Command::Jitter { common } => cmd_jitter(common),
        Command::Crosstalk { common, regime } => cmd_crosstalk(common, regime.as_deref()),
        Command::SdeCurve { common } => cmd_sde_curve(common),
        Command::Report { common } => cmd_report(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) | Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
