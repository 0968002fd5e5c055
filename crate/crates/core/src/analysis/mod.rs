//! Characterization estimators run over simulated time-tag data.
//!
//! Each estimator consumes only what a bench measurement would see (counted
//! rates or measured tags); truth labels are used solely to score the
//! Monte Carlo efficiency.

use thiserror::Error;

use crate::engine::SimError;
use crate::model::ModelError;
use crate::source::{Picos, PS_PER_S};

mod crosstalk;
mod jitter;
mod reset;
mod sde;
mod sweep;

pub use crosstalk::{
    estimate_crosstalk, start_stop_histogram, CrosstalkEstimate, CrosstalkParams, DelayHistogram,
    Regime,
};
pub use jitter::{
    deconvolve_jitter, fold_to_period, fwhm_in_range, fwhm_of_histogram, jitter_experiment,
    jitter_outliers, ChannelJitter, JitterBudget, JitterParams,
};
pub use reset::{
    count_rate_model, fit_count_rate_curve, fit_reset_time, max_full_rate, max_rate_summary,
    MaxRateSummary, ResetFit,
};
pub use sde::{sde_vs_flux_mc, SdePoint};
pub use sweep::{run_sweep, SweepPoint, SweepResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("fit did not converge after {iterations} iterations (best tau {:.4} ns)", best.tau_ns)]
    NoConvergence { iterations: usize, best: ResetFit },
    #[error("unbounded: reset time is zero")]
    Unbounded,
    #[error("unphysical budget: measured {j_meas} ps is narrower than instrument {j_tt} ps and pulse {j_pulse} ps combined")]
    UnphysicalBudget {
        j_meas: f64,
        j_tt: f64,
        j_pulse: f64,
    },
    #[error("no FWHM: half-maximum crossing not found inside the histogram")]
    NoFwhm,
    #[error("insufficient samples: {got} < {need}")]
    InsufficientSamples { got: usize, need: usize },
}

/// How long to run each simulation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exposure {
    Fixed(Picos),
    /// Long enough to expect `target` events at the point's slowest rate,
    /// clamped to `[min, max]`.
    Counts {
        target: f64,
        min: Picos,
        max: Picos,
    },
}

impl Exposure {
    pub(crate) fn duration_for(&self, slowest_rate: f64) -> Picos {
        match *self {
            Exposure::Fixed(d) => d,
            Exposure::Counts { target, min, max } => {
                if !(slowest_rate > 0.0) {
                    return max;
                }
                let ps = (target / slowest_rate * PS_PER_S).ceil();
                (ps.min(max as f64) as Picos).max(min)
            }
        }
    }
}
