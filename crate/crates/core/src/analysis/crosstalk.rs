//! Pairwise crosstalk from dark-count aggressors.
//!
//! Every element sits at the base dark-count bias; one aggressor at a time is
//! raised to a high dark rate with no light, and the extra counts on each
//! other element are expressed as a percent of the aggressor's count rate.
//! The baseline run shares the seed derivation, so victims replay the same
//! intrinsic dark stream and the subtraction isolates the crosstalk counts.

use rayon::prelude::*;

use super::AnalysisError;
use crate::engine::{simulate_run, MeasuredTag, SimConfig};
use crate::model::{bias_for_dark_rate, ArrayModel, OperatingPoint, PairMatrix, ELEMENTS};
use crate::source::{Picos, SourceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    HighBias,
    LowBias,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::HighBias => "high",
            Regime::LowBias => "low",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(Regime::HighBias),
            "low" => Ok(Regime::LowBias),
            other => Err(format!("unknown regime '{other}' (expected high or low)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosstalkParams {
    pub regime: Regime,
    pub base_dark_hz: f64,
    pub aggressor_dark_hz: f64,
    pub duration: Picos,
    pub seed: u64,
    pub instrument_jitter_ps: f64,
    pub hist_bin_ps: f64,
    pub hist_window_ps: f64,
}

/// Start(aggressor)-stop(victim) delay histogram; bin `k` covers
/// `[k*bin_ps, (k+1)*bin_ps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayHistogram {
    pub aggressor: usize,
    pub victim: usize,
    pub bin_ps: f64,
    pub counts: Vec<u64>,
}

impl DelayHistogram {
    /// Center of the fullest bin, ps.
    pub fn peak_delay_ps(&self) -> Option<f64> {
        let (k, &n) = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|&(k, &n)| (n, std::cmp::Reverse(k)))?;
        (n > 0).then_some((k as f64 + 0.5) * self.bin_ps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosstalkEstimate {
    /// `percent[aggressor][victim]`; the diagonal is zero.
    pub percent: PairMatrix,
    pub regime: Regime,
    /// Histogram for the pair with the largest percent.
    pub delay_hist: Option<DelayHistogram>,
    /// Pairs whose raw difference was negative and clamped to zero.
    pub clamped: Vec<(usize, usize)>,
}

impl CrosstalkEstimate {
    pub fn max_percent(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..ELEMENTS {
            for j in 0..ELEMENTS {
                if i != j && self.percent[i][j] > best.2 {
                    best = (i, j, self.percent[i][j]);
                }
            }
        }
        best
    }
}

/// Histogram of `stop - latest start` over measured tags sorted by time.
pub fn start_stop_histogram(
    tags: &[MeasuredTag],
    start: usize,
    stop: usize,
    bin_ps: f64,
    window_ps: f64,
) -> DelayHistogram {
    let bins = (window_ps / bin_ps).ceil().max(1.0) as usize;
    let mut counts = vec![0u64; bins];
    let mut last_start: Option<Picos> = None;
    for t in tags {
        let ch = t.channel as usize;
        if ch == start {
            last_start = Some(t.time);
        } else if ch == stop {
            if let Some(s) = last_start {
                let d = (t.time - s) as f64;
                if d >= 0.0 && d < window_ps {
                    let k = (d / bin_ps) as usize;
                    if k < bins {
                        counts[k] += 1;
                    }
                }
            }
        }
    }
    DelayHistogram {
        aggressor: start,
        victim: stop,
        bin_ps,
        counts,
    }
}

struct AggressorRun {
    counts: [u64; ELEMENTS],
    hist: DelayHistogram,
}

fn channel_counts(tags: &[MeasuredTag]) -> [u64; ELEMENTS] {
    let mut c = [0u64; ELEMENTS];
    for t in tags {
        c[t.channel as usize] += 1;
    }
    c
}

pub fn estimate_crosstalk(
    array: &ArrayModel,
    params: &CrosstalkParams,
) -> Result<CrosstalkEstimate, AnalysisError> {
    if !(params.aggressor_dark_hz > params.base_dark_hz) {
        return Err(AnalysisError::InvalidInput(
            "aggressor dark rate must exceed the base dark rate".into(),
        ));
    }
    if !(params.hist_bin_ps > 0.0 && params.hist_window_ps > 0.0) {
        return Err(AnalysisError::InvalidInput(
            "histogram bin and window must be positive".into(),
        ));
    }
    let base_op = OperatingPoint::for_dark_rate(array, params.base_dark_hz)?;
    let cfg_for = |op: OperatingPoint| SimConfig {
        array: array.clone(),
        op,
        source: SourceModel::cw(0.0),
        duration: params.duration,
        seed: params.seed,
        instrument_jitter_fwhm_ps: params.instrument_jitter_ps,
    };

    let baseline = simulate_run(&cfg_for(base_op))?;
    let baseline = channel_counts(&crate::engine::measured_view(&baseline.tags));

    let runs = (0..ELEMENTS)
        .into_par_iter()
        .map(|i| {
            let mut bias = *base_op.bias();
            bias[i] = bias_for_dark_rate(&array.element(i).response, params.aggressor_dark_hz)?;
            let op = OperatingPoint::new(array, bias)?;
            let run = simulate_run(&cfg_for(op))?;
            let tags = crate::engine::measured_view(&run.tags);
            let counts = channel_counts(&tags);
            let victim = (0..ELEMENTS)
                .filter(|&j| j != i)
                .max_by_key(|&j| (counts[j] as i64 - baseline[j] as i64, std::cmp::Reverse(j)))
                .expect("at least two elements");
            let hist =
                start_stop_histogram(&tags, i, victim, params.hist_bin_ps, params.hist_window_ps);
            Ok(AggressorRun { counts, hist })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;

    let mut percent = [[0.0; ELEMENTS]; ELEMENTS];
    let mut clamped = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let aggressor = run.counts[i];
        for j in 0..ELEMENTS {
            if i == j || aggressor == 0 {
                continue;
            }
            let extra = run.counts[j] as f64 - baseline[j] as f64;
            if extra < 0.0 {
                clamped.push((i, j));
            } else {
                percent[i][j] = extra / aggressor as f64 * 100.0;
            }
        }
    }

    let mut estimate = CrosstalkEstimate {
        percent,
        regime: params.regime,
        delay_hist: None,
        clamped,
    };
    let (i, j, top) = estimate.max_percent();
    if top > 0.0 {
        let hist = &runs[i].hist;
        estimate.delay_hist = if hist.victim == j {
            Some(hist.clone())
        } else {
            None
        };
    }
    Ok(estimate)
}
