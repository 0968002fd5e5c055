//! Photon arrival streams: CW Poisson and pulsed sources, attenuation and
//! routing onto the array elements.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp, Normal, Poisson};
use thiserror::Error;

use crate::model::ELEMENTS;
use crate::rng::SimRng;

/// Timestamps are integer picoseconds.
pub type Picos = i64;

pub const PS_PER_S: f64 = 1e12;

/// FWHM / sigma for a Gaussian.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SourceError {
    #[error("invalid source parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("weights exceed unity (sum {0})")]
    WeightsExceedUnity(f64),
    #[error("photon stream timestamp {time} at position {position} violates ordering or [0, {duration})")]
    BadTimestamp {
        position: usize,
        time: Picos,
        duration: Picos,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SourceError {
    SourceError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    Cw {
        rate: f64,
    },
    Pulsed {
        rep_rate: f64,
        pulse_fwhm_ps: f64,
        mean_photons: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceModel {
    pub kind: SourceKind,
    pub attenuation_db: f64,
}

impl SourceModel {
    pub fn cw(rate: f64) -> Self {
        Self {
            kind: SourceKind::Cw { rate },
            attenuation_db: 0.0,
        }
    }

    pub fn pulsed(rep_rate: f64, pulse_fwhm_ps: f64, mean_photons: f64) -> Self {
        Self {
            kind: SourceKind::Pulsed {
                rep_rate,
                pulse_fwhm_ps,
                mean_photons,
            },
            attenuation_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match self.kind {
            SourceKind::Cw { rate } => {
                if !ok(rate) {
                    return Err(invalid("rate", "must be finite and non-negative"));
                }
            }
            SourceKind::Pulsed {
                rep_rate,
                pulse_fwhm_ps,
                mean_photons,
            } => {
                if !(rep_rate > 0.0) || !rep_rate.is_finite() {
                    return Err(invalid("rep_rate", "must be positive"));
                }
                if !ok(pulse_fwhm_ps) {
                    return Err(invalid("pulse_fwhm_ps", "must be finite and non-negative"));
                }
                if !ok(mean_photons) {
                    return Err(invalid("mean_photons", "must be finite and non-negative"));
                }
            }
        }
        if !ok(self.attenuation_db) {
            return Err(invalid("attenuation_db", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// Mean photon rate after attenuation, photons/s.
    pub fn incident_rate(&self) -> f64 {
        let unattenuated = match self.kind {
            SourceKind::Cw { rate } => rate,
            SourceKind::Pulsed {
                rep_rate,
                mean_photons,
                ..
            } => rep_rate * mean_photons,
        };
        unattenuated * survival_probability(self.attenuation_db)
    }

    /// The same source with its attenuation folded into the intensity.
    ///
    /// Independent thinning of a Poisson stream is again Poisson, so the
    /// returned model has the same law as generating and then thinning.
    pub fn attenuated(&self) -> Self {
        let p = survival_probability(self.attenuation_db);
        let kind = match self.kind {
            SourceKind::Cw { rate } => SourceKind::Cw { rate: rate * p },
            SourceKind::Pulsed {
                rep_rate,
                pulse_fwhm_ps,
                mean_photons,
            } => SourceKind::Pulsed {
                rep_rate,
                pulse_fwhm_ps,
                mean_photons: mean_photons * p,
            },
        };
        Self {
            kind,
            attenuation_db: 0.0,
        }
    }

    /// Generate this source without attenuation applied.
    pub fn generate(&self, duration: Picos, seed: u64) -> PhotonStream {
        match self.kind {
            SourceKind::Cw { rate } => gen_cw(rate, duration, seed),
            SourceKind::Pulsed {
                rep_rate,
                pulse_fwhm_ps,
                mean_photons,
            } => gen_pulsed(rep_rate, mean_photons, pulse_fwhm_ps, duration, seed),
        }
    }
}

pub fn survival_probability(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Time-ordered photon arrivals on `[0, duration)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonStream {
    arrivals: Vec<Picos>,
    duration: Picos,
}

impl PhotonStream {
    pub fn new(arrivals: Vec<Picos>, duration: Picos) -> Result<Self, SourceError> {
        if duration <= 0 {
            return Err(invalid("duration", "must be positive"));
        }
        let mut prev = 0;
        for (position, &time) in arrivals.iter().enumerate() {
            if time < prev || time >= duration {
                return Err(SourceError::BadTimestamp {
                    position,
                    time,
                    duration,
                });
            }
            prev = time;
        }
        Ok(Self { arrivals, duration })
    }

    pub fn empty(duration: Picos) -> Self {
        Self {
            arrivals: Vec::new(),
            duration,
        }
    }

    pub fn arrivals(&self) -> &[Picos] {
        &self.arrivals
    }

    pub fn duration(&self) -> Picos {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    pub fn into_arrivals(self) -> Vec<Picos> {
        self.arrivals
    }
}

/// Homogeneous Poisson arrivals at `rate` photons/s.
pub fn gen_cw(rate: f64, duration: Picos, seed: u64) -> PhotonStream {
    assert!(duration > 0, "duration must be positive");
    if !(rate > 0.0) {
        return PhotonStream::empty(duration);
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let gaps = Exp::new(rate / PS_PER_S).expect("positive finite rate");
    let end = duration as f64;
    let expected = (rate * end / PS_PER_S).min(1e9) as usize;
    let mut arrivals = Vec::with_capacity(expected + expected / 64 + 16);
    // accumulate in f64; floor to the containing picosecond
    let mut t = gaps.sample(&mut rng);
    while t < end {
        arrivals.push(t as Picos);
        t += gaps.sample(&mut rng);
    }
    PhotonStream { arrivals, duration }
}

/// Pulse train at `rep_rate` with Poisson(`mean_photons`) photons per pulse,
/// each displaced by a Gaussian of `pulse_fwhm_ps`.
pub fn gen_pulsed(
    rep_rate: f64,
    mean_photons: f64,
    pulse_fwhm_ps: f64,
    duration: Picos,
    seed: u64,
) -> PhotonStream {
    assert!(duration > 0, "duration must be positive");
    assert!(rep_rate > 0.0, "rep_rate must be positive");
    if !(mean_photons > 0.0) {
        return PhotonStream::empty(duration);
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let counts = Poisson::new(mean_photons).expect("positive finite mean");
    let sigma = pulse_fwhm_ps / FWHM_PER_SIGMA;
    let spread = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let period = PS_PER_S / rep_rate;
    let end = duration as f64;
    let mut arrivals = Vec::new();
    let mut k = 0u64;
    loop {
        let center = k as f64 * period;
        if center >= end {
            break;
        }
        let n = counts.sample(&mut rng) as u64;
        for _ in 0..n {
            let t = match &spread {
                Some(g) => center + g.sample(&mut rng),
                None => center,
            };
            let t = t.round();
            if t >= 0.0 && t < end {
                arrivals.push(t as Picos);
            }
        }
        k += 1;
    }
    if spread.is_some() {
        arrivals.sort_unstable();
    }
    PhotonStream { arrivals, duration }
}

/// Independent Bernoulli thinning with survival probability `10^(-db/10)`.
pub fn apply_attenuation(stream: &PhotonStream, db: f64, seed: u64) -> PhotonStream {
    assert!(db >= 0.0, "attenuation must be non-negative");
    if db == 0.0 {
        return stream.clone();
    }
    let p = survival_probability(db);
    let mut rng = SimRng::seed_from_u64(seed);
    let arrivals = stream
        .arrivals
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < p)
        .collect();
    PhotonStream {
        arrivals,
        duration: stream.duration,
    }
}

/// Route each photon to element `i` with probability `weights[i]`; the
/// remainder `1 - sum(weights)` is lost.
pub fn split_to_elements(
    stream: &PhotonStream,
    weights: &[f64; ELEMENTS],
    seed: u64,
) -> Result<Vec<PhotonStream>, SourceError> {
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(invalid("weights", "must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(SourceError::WeightsExceedUnity(total));
    }
    let mut cumulative = [0.0; ELEMENTS];
    let mut acc = 0.0;
    for (c, w) in cumulative.iter_mut().zip(weights) {
        acc += w;
        *c = acc;
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut out: Vec<Vec<Picos>> = (0..ELEMENTS)
        .map(|i| Vec::with_capacity((stream.len() as f64 * weights[i] * 1.05) as usize + 8))
        .collect();
    for &t in &stream.arrivals {
        let u: f64 = rng.random();
        if let Some(i) = cumulative.iter().position(|&c| u < c) {
            out[i].push(t);
        }
    }
    Ok(out
        .into_iter()
        .map(|arrivals| PhotonStream {
            arrivals,
            duration: stream.duration,
        })
        .collect())
}
