use rayon::prelude::*;

use super::{AnalysisError, Exposure};
use crate::engine::{simulate_run, SimConfig};
use crate::model::{sde_vs_flux, ArrayModel, OperatingPoint};
use crate::source::SourceModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdePoint {
    pub flux: f64,
    /// Photon-origin registrations per incident photon.
    pub sde_mc: f64,
    pub sde_analytic: f64,
    pub incident_photons: u64,
}

/// Monte Carlo system detection efficiency under CW illumination at each flux.
/// With [`Exposure::Counts`] the target is the number of incident photons.
pub fn sde_vs_flux_mc(
    array: &ArrayModel,
    op: &OperatingPoint,
    flux_list: &[f64],
    exposure: Exposure,
    seed: u64,
    instrument_jitter_ps: f64,
) -> Result<Vec<SdePoint>, AnalysisError> {
    if flux_list.is_empty() {
        return Err(AnalysisError::InvalidInput("empty flux list".into()));
    }
    flux_list
        .par_iter()
        .map(|&flux| {
            let cfg = SimConfig {
                array: array.clone(),
                op: *op,
                source: SourceModel::cw(flux),
                duration: exposure.duration_for(flux),
                seed,
                instrument_jitter_fwhm_ps: instrument_jitter_ps,
            };
            let run = simulate_run(&cfg)?;
            let sde_mc = if run.incident_photons > 0 {
                run.photon_registrations() as f64 / run.incident_photons as f64
            } else {
                0.0
            };
            Ok(SdePoint {
                flux,
                sde_mc,
                sde_analytic: sde_vs_flux(array, op, flux),
                incident_photons: run.incident_photons,
            })
        })
        .collect()
}
