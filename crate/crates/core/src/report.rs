//! One-page summary assembled from the CSV outputs of the other commands.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::analysis::Regime;
use crate::formats::{
    read_crosstalk_csv, read_fits_csv, read_jitter_csv, read_sde_csv, FormatError,
};

pub const SDE_FILE: &str = "sde_curve.csv";
pub const FITS_FILE: &str = "fits.csv";
pub const JITTER_FILE: &str = "jitter.csv";
pub const CROSSTALK_FILE: &str = "crosstalk.csv";

/// Inputs in the order they appear in the report.
pub const REPORT_INPUTS: [&str; 4] = [SDE_FILE, FITS_FILE, JITTER_FILE, CROSSTALK_FILE];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no report inputs found; missing: {}", .0.join(", "))]
    AllMissing(Vec<String>),
    #[error("{file}: {source}")]
    Format {
        file: String,
        #[source]
        source: FormatError,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

/// Report contents, with `None` where an input file was absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    /// `(flux, sde_mc, sde_analytic)` of the row nearest the reference flux.
    pub sde: Option<(f64, f64, f64)>,
    /// `(mean, std, count)` of fitted τ in ns.
    pub tau_ns: Option<(f64, f64, usize)>,
    /// Mean of per-channel `1/τ` and `1/mean(τ)`, Hz.
    pub max_rate_hz: Option<(f64, f64)>,
    /// `(mean, std, count)` of deconvolved element jitter in ps.
    pub jitter_ps: Option<(f64, f64, usize)>,
    /// Largest percent per regime with its `(i, j)` pair, when present.
    pub crosstalk: Option<Vec<(Regime, usize, usize, f64)>>,
    pub missing: Vec<String>,
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn read_optional(dir: &Path, file: &str) -> Result<Option<String>, ReportError> {
    match std::fs::read_to_string(dir.join(file)) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(ReportError::Io {
            file: file.into(),
            source,
        }),
    }
}

fn format_err(file: &str) -> impl FnOnce(FormatError) -> ReportError + '_ {
    move |source| ReportError::Format {
        file: file.into(),
        source,
    }
}

/// Build the summary from the CSV texts; `None` means the file is missing.
pub fn summarize(
    sde: Option<&str>,
    fits: Option<&str>,
    jitter: Option<&str>,
    crosstalk: Option<&str>,
    reference_flux: f64,
) -> Result<Summary, ReportError> {
    let mut s = Summary::default();
    for (name, text) in REPORT_INPUTS.iter().zip([sde, fits, jitter, crosstalk]) {
        if text.is_none() {
            s.missing.push(name.to_string());
        }
    }

    if let Some(text) = sde {
        let rows = read_sde_csv(text).map_err(format_err(SDE_FILE))?;
        s.sde = rows.into_iter().min_by(|a, b| {
            let d = |r: &(f64, f64, f64)| (r.0.ln() - reference_flux.ln()).abs();
            d(a).total_cmp(&d(b))
        });
    }
    if let Some(text) = fits {
        let rows = read_fits_csv(text).map_err(format_err(FITS_FILE))?;
        let taus: Vec<f64> = rows.iter().map(|r| r.1[0]).collect();
        if !taus.is_empty() {
            let (m, sd) = mean_std(&taus);
            s.tau_ns = Some((m, sd, taus.len()));
            let rates: Vec<f64> = taus.iter().map(|t| 1e9 / t).collect();
            s.max_rate_hz = Some((mean_std(&rates).0, 1e9 / m));
        }
    }
    if let Some(text) = jitter {
        let rows = read_jitter_csv(text).map_err(format_err(JITTER_FILE))?;
        let j: Vec<f64> = rows.iter().map(|r| r.2).collect();
        if !j.is_empty() {
            let (m, sd) = mean_std(&j);
            s.jitter_ps = Some((m, sd, j.len()));
        }
    }
    if let Some(text) = crosstalk {
        let rows = read_crosstalk_csv(text).map_err(format_err(CROSSTALK_FILE))?;
        let mut per: Vec<(Regime, usize, usize, f64)> = Vec::new();
        for (i, j, regime, pct) in rows {
            match per.iter_mut().find(|e| e.0 == regime) {
                Some(e) if pct > e.3 => *e = (regime, i, j, pct),
                Some(_) => {}
                None => per.push((regime, i, j, pct)),
            }
        }
        s.crosstalk = Some(per);
    }
    Ok(s)
}

impl Summary {
    pub fn render(&self, reference_flux: f64) -> String {
        const MISSING: &str = "missing";
        let mut out = String::new();
        let _ = writeln!(out, "SNSPD array characterization summary");
        let _ = writeln!(out);
        match self.sde {
            Some((flux, mc, an)) => {
                let _ = writeln!(
                    out,
                    "net SDE at {flux:.4e} photons/s: {:.2} % (analytic {:.2} %)",
                    mc * 100.0,
                    an * 100.0
                );
            }
            None => {
                let _ = writeln!(out, "net SDE at {reference_flux:.4e} photons/s: {MISSING}");
            }
        }
        match self.tau_ns {
            Some((m, sd, n)) => {
                let _ = writeln!(
                    out,
                    "reset time: mean {m:.3} ns, std {sd:.3} ns ({n} channels)"
                );
            }
            None => {
                let _ = writeln!(out, "reset time: {MISSING}");
            }
        }
        match self.max_rate_hz {
            Some((mean_rates, of_mean)) => {
                let _ = writeln!(
                    out,
                    "max count rate: mean of 1/tau {:.1} MHz, 1/mean(tau) {:.1} MHz",
                    mean_rates / 1e6,
                    of_mean / 1e6
                );
            }
            None => {
                let _ = writeln!(out, "max count rate: {MISSING}");
            }
        }
        match self.jitter_ps {
            Some((m, sd, n)) => {
                let _ = writeln!(
                    out,
                    "element jitter: mean {m:.2} ps, std {sd:.2} ps ({n} channels)"
                );
            }
            None => {
                let _ = writeln!(out, "element jitter: {MISSING}");
            }
        }
        for regime in [Regime::HighBias, Regime::LowBias] {
            let found = self
                .crosstalk
                .as_ref()
                .and_then(|v| v.iter().find(|e| e.0 == regime));
            match found {
                Some(&(_, i, j, pct)) => {
                    let _ = writeln!(
                        out,
                        "max crosstalk ({} bias): {pct:.3} % ({i} -> {j})",
                        regime.as_str()
                    );
                }
                None => {
                    let _ = writeln!(out, "max crosstalk ({} bias): {MISSING}", regime.as_str());
                }
            }
        }
        if !self.missing.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "missing inputs: {}", self.missing.join(", "));
        }
        out
    }
}

/// Read the report inputs from `dir`. Fails only if every input is missing
/// or one is malformed.
pub fn build_report(dir: &Path, reference_flux: f64) -> Result<String, ReportError> {
    let texts = REPORT_INPUTS
        .iter()
        .map(|f| read_optional(dir, f))
        .collect::<Result<Vec<_>, _>>()?;
    if texts.iter().all(Option::is_none) {
        return Err(ReportError::AllMissing(
            REPORT_INPUTS.iter().map(|s| s.to_string()).collect(),
        ));
    }
    let summary = summarize(
        texts[0].as_deref(),
        texts[1].as_deref(),
        texts[2].as_deref(),
        texts[3].as_deref(),
        reference_flux,
    )?;
    Ok(summary.render(reference_flux))
}
