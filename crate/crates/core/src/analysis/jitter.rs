use super::AnalysisError;
use crate::engine::{simulate_run, SimConfig};
use crate::model::{ArrayModel, OperatingPoint, ELEMENTS};
use crate::source::{Picos, SourceModel, PS_PER_S};

/// Minimum sample count for a histogram FWHM.
pub const MIN_FWHM_SAMPLES: usize = 1000;

const MAX_BINS: f64 = 5e7;

/// Quadrature jitter budget; every entry is a FWHM in ps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterBudget {
    pub j_meas: f64,
    pub j_tt: f64,
    pub j_pulse: f64,
    pub j_snspd: f64,
}

/// Remove instrument and pulse contributions from a measured FWHM in quadrature.
pub fn deconvolve_jitter(j_meas: f64, j_tt: f64, j_pulse: f64) -> Result<f64, AnalysisError> {
    if [j_meas, j_tt, j_pulse]
        .iter()
        .any(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(AnalysisError::InvalidInput(
            "jitter components must be finite and non-negative".into(),
        ));
    }
    let rest = j_meas * j_meas - j_tt * j_tt - j_pulse * j_pulse;
    if rest < 0.0 {
        return Err(AnalysisError::UnphysicalBudget {
            j_meas,
            j_tt,
            j_pulse,
        });
    }
    Ok(rest.sqrt())
}

fn outermost_crossings(counts: &[u64], bin_width: f64) -> Result<f64, AnalysisError> {
    let peak = counts.iter().copied().max().unwrap_or(0);
    if peak == 0 {
        return Err(AnalysisError::NoFwhm);
    }
    let half = peak as f64 / 2.0;
    let c = |i: usize| counts[i] as f64;
    let left = counts.iter().position(|&v| v as f64 >= half).unwrap();
    let right = counts.iter().rposition(|&v| v as f64 >= half).unwrap();
    if left == 0 || right == counts.len() - 1 {
        return Err(AnalysisError::NoFwhm);
    }
    // positions in bin-index units
    let l = (left - 1) as f64 + (half - c(left - 1)) / (c(left) - c(left - 1));
    let r = right as f64 + (c(right) - half) / (c(right) - c(right + 1));
    Ok((r - l) * bin_width)
}

fn check_samples(samples: &[f64], bin_width: f64) -> Result<(), AnalysisError> {
    if samples.len() < MIN_FWHM_SAMPLES {
        return Err(AnalysisError::InsufficientSamples {
            got: samples.len(),
            need: MIN_FWHM_SAMPLES,
        });
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(AnalysisError::InvalidInput(
            "bin width must be positive".into(),
        ));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite sample".into()));
    }
    Ok(())
}

fn histogram(samples: &[f64], lo: f64, bin_width: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for &s in samples {
        let k = ((s - lo) / bin_width).floor();
        if k >= 0.0 && (k as usize) < bins {
            counts[k as usize] += 1;
        }
    }
    counts
}

/// FWHM of the samples' histogram, from linear interpolation at the outermost
/// half-maximum crossings. The histogram spans the data plus one empty bin on
/// each side.
pub fn fwhm_of_histogram(samples: &[f64], bin_width: f64) -> Result<f64, AnalysisError> {
    check_samples(samples, bin_width)?;
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = (min / bin_width).floor() * bin_width - bin_width;
    let bins = ((max - lo) / bin_width).floor() + 2.0;
    if bins > MAX_BINS {
        return Err(AnalysisError::InvalidInput(format!(
            "histogram would need {bins} bins"
        )));
    }
    outermost_crossings(&histogram(samples, lo, bin_width, bins as usize), bin_width)
}

/// FWHM over the fixed window `[lo, hi)`; samples outside are ignored. Fails
/// with [`AnalysisError::NoFwhm`] if the half-maximum region reaches the
/// window edge.
pub fn fwhm_in_range(
    samples: &[f64],
    bin_width: f64,
    lo: f64,
    hi: f64,
) -> Result<f64, AnalysisError> {
    check_samples(samples, bin_width)?;
    if !(hi > lo) {
        return Err(AnalysisError::InvalidInput("empty histogram window".into()));
    }
    let bins = ((hi - lo) / bin_width).ceil();
    if bins > MAX_BINS {
        return Err(AnalysisError::InvalidInput(format!(
            "histogram would need {bins} bins"
        )));
    }
    outermost_crossings(&histogram(samples, lo, bin_width, bins as usize), bin_width)
}

/// Offset of `t` from the nearest pulse on a grid of period `period_ps`.
pub fn fold_to_period(t: Picos, period_ps: f64) -> f64 {
    let t = t as f64;
    t - period_ps * (t / period_ps).round()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub rep_rate: f64,
    pub mean_photons: f64,
    pub pulse_fwhm_ps: f64,
    pub instrument_jitter_ps: f64,
    pub duration: Picos,
    pub seed: u64,
    pub bin_ps: f64,
    /// Half-width of the folded histogram window; capped at half the period.
    pub window_ps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelJitter {
    pub channel: usize,
    pub tags: usize,
    pub budget: Result<JitterBudget, AnalysisError>,
}

/// Pulsed-laser timing measurement: fold each channel's tags onto the laser
/// reference, take the histogram FWHM and deconvolve the known contributions.
pub fn jitter_experiment(
    array: &ArrayModel,
    op: &OperatingPoint,
    params: &JitterParams,
) -> Result<Vec<ChannelJitter>, AnalysisError> {
    let cfg = SimConfig {
        array: array.clone(),
        op: *op,
        source: SourceModel::pulsed(params.rep_rate, params.pulse_fwhm_ps, params.mean_photons),
        duration: params.duration,
        seed: params.seed,
        instrument_jitter_fwhm_ps: params.instrument_jitter_ps,
    };
    let run = simulate_run(&cfg)?;
    let period = PS_PER_S / params.rep_rate;
    let half_window = params.window_ps.min(period / 2.0);

    let mut folded: Vec<Vec<f64>> = vec![Vec::new(); ELEMENTS];
    for tag in &run.tags {
        folded[tag.channel as usize].push(fold_to_period(tag.time, period));
    }
    Ok(folded
        .into_iter()
        .enumerate()
        .map(|(channel, samples)| {
            let budget = fwhm_in_range(&samples, params.bin_ps, -half_window, half_window)
                .and_then(|j_meas| {
                    let j_snspd = deconvolve_jitter(
                        j_meas,
                        params.instrument_jitter_ps,
                        params.pulse_fwhm_ps,
                    )?;
                    Ok(JitterBudget {
                        j_meas,
                        j_tt: params.instrument_jitter_ps,
                        j_pulse: params.pulse_fwhm_ps,
                        j_snspd,
                    })
                });
            ChannelJitter {
                channel,
                tags: samples.len(),
                budget,
            }
        })
        .collect())
}

/// Robust outlier flags: `|x - median| / (1.4826 MAD) > 3.5`. Missing values
/// are never flagged.
pub fn jitter_outliers(values: &[Option<f64>]) -> Vec<bool> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.len() < 3 {
        return vec![false; values.len()];
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        }
    };
    let m = median(&mut present.clone());
    let mut dev: Vec<f64> = present.iter().map(|x| (x - m).abs()).collect();
    let scale = 1.4826 * median(&mut dev);
    values
        .iter()
        .map(|v| match v {
            Some(x) if scale > 0.0 => (x - m).abs() / scale > 3.5,
            _ => false,
        })
        .collect()
}
