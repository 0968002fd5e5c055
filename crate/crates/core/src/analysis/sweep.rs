use rayon::prelude::*;

use super::{AnalysisError, Exposure};
use crate::engine::{simulate_run, tag_count_rates, SimConfig};
use crate::model::ELEMENTS;
use crate::source::Picos;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub attenuation_db: f64,
    /// Total incident photon rate after attenuation.
    pub incident_rate: f64,
    pub counted_rates: [f64; ELEMENTS],
    pub duration: Picos,
}

/// Count rate versus attenuation, with the illumination split that maps the
/// total incident rate onto each element.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub coupling: [f64; ELEMENTS],
}

impl SweepResult {
    /// Checks the shape a reset-time fit needs: at least six points with
    /// strictly monotone incident rate.
    pub fn validate_for_fit(&self) -> Result<(), AnalysisError> {
        if self.points.len() < 6 {
            return Err(AnalysisError::InvalidInput(format!(
                "sweep has {} points, need at least 6",
                self.points.len()
            )));
        }
        let rates: Vec<f64> = self.points.iter().map(|p| p.incident_rate).collect();
        let up = rates.windows(2).all(|w| w[1] > w[0]);
        let down = rates.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(AnalysisError::InvalidInput(
                "incident rates must be strictly monotone".into(),
            ));
        }
        Ok(())
    }

    /// Per-element incident rate at every point for `channel`.
    pub fn element_incident(&self, channel: usize) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.incident_rate * self.coupling[channel])
            .collect()
    }

    pub fn counted(&self, channel: usize) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.counted_rates[channel])
            .collect()
    }
}

/// Expected registered rate on the slowest channel, from the closed-form model.
fn slowest_expected_rate(cfg: &SimConfig, incident: f64) -> f64 {
    let eps = cfg.op.efficiencies(&cfg.array);
    let dark = cfg.op.dark_rates(&cfg.array);
    cfg.array
        .elements()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let x = eps[i] * e.coupling * incident;
            x / (1.0 + x * e.dead_time_s()) + dark[i]
        })
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// One simulation per attenuation setting; every point reuses the template
/// seed so points are paired.
pub fn run_sweep(
    template: &SimConfig,
    db_list: &[f64],
    exposure: Exposure,
) -> Result<SweepResult, AnalysisError> {
    if db_list.is_empty() {
        return Err(AnalysisError::InvalidInput("empty attenuation list".into()));
    }
    template.validate()?;
    let points = db_list
        .par_iter()
        .map(|&db| {
            let mut cfg = template.clone();
            cfg.source.attenuation_db = db;
            let incident_rate = cfg.source.incident_rate();
            cfg.duration = exposure.duration_for(slowest_expected_rate(&cfg, incident_rate));
            let run = simulate_run(&cfg)?;
            Ok(SweepPoint {
                attenuation_db: db,
                incident_rate,
                counted_rates: tag_count_rates(&run.tags, cfg.duration),
                duration: cfg.duration,
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(SweepResult {
        points,
        coupling: template.array.couplings(),
    })
}
