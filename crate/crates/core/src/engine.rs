//! Discrete-event simulation of the array.
//!
//! Each element sees three kinds of candidate events: photons (accepted with
//! the element's efficiency), intrinsic dark counts, and crosstalk scheduled
//! by registrations on other elements. A candidate registers only if the
//! element has been idle for at least its dead time, measured on true
//! (pre-jitter) times. Registered events are reported at their true time plus
//! Gaussian device and instrument jitter.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ArrayModel, ModelError, OperatingPoint, ELEMENTS};
use crate::rng::{child_rng, child_seed, Purpose, SimRng};
use crate::source::{
    gen_cw, split_to_elements, Picos, SourceError, SourceModel, FWHM_PER_SIGMA, PS_PER_S,
};

/// Largest expected source photon count accepted for one run.
pub const MAX_EXPECTED_PHOTONS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("invalid simulation parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// What produced a registration. Truth metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Origin {
    Photon,
    Dark,
    Crosstalk,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Photon => "photon",
            Origin::Dark => "dark",
            Origin::Crosstalk => "crosstalk",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "photon" => Ok(Origin::Photon),
            "dark" => Ok(Origin::Dark),
            "crosstalk" => Ok(Origin::Crosstalk),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    /// Observed (post-jitter) timestamp.
    pub time: Picos,
    pub channel: u8,
    pub origin: Origin,
}

/// A time tag with its truth label removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeasuredTag {
    pub time: Picos,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub array: ArrayModel,
    pub op: OperatingPoint,
    pub source: SourceModel,
    pub duration: Picos,
    pub seed: u64,
    /// Time-tagger jitter, ps FWHM.
    pub instrument_jitter_fwhm_ps: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration <= 0 {
            return Err(SimError::Invalid {
                field: "duration",
                reason: "must be positive".into(),
            });
        }
        if !(self.instrument_jitter_fwhm_ps >= 0.0) || !self.instrument_jitter_fwhm_ps.is_finite() {
            return Err(SimError::Invalid {
                field: "instrument_jitter_fwhm_ps",
                reason: "must be finite and non-negative".into(),
            });
        }
        self.source.validate()?;
        let expected = self.source.incident_rate() * self.duration_s();
        if expected > MAX_EXPECTED_PHOTONS {
            return Err(SimError::Invalid {
                field: "duration",
                reason: format!(
                    "run would generate about {expected:.3e} photons (limit {MAX_EXPECTED_PHOTONS:e})"
                ),
            });
        }
        // re-check the bias against this array; `op` may have been built for another one
        OperatingPoint::new(&self.array, *self.op.bias())?;
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.duration as f64 / PS_PER_S
    }
}

/// Full output of one run, including truth-side bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    /// Registrations sorted by observed time.
    pub tags: Vec<TimeTag>,
    /// Per-channel true registration times, ascending.
    pub true_registrations: Vec<Vec<Picos>>,
    /// Photons emitted by the source after attenuation, before routing.
    pub incident_photons: u64,
    pub duration: Picos,
}

impl SimRun {
    pub fn photon_registrations(&self) -> u64 {
        self.tags
            .iter()
            .filter(|t| t.origin == Origin::Photon)
            .count() as u64
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<Vec<TimeTag>, SimError> {
    simulate_run(cfg).map(|run| run.tags)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Candidate {
    time: Picos,
    origin: Origin,
}

struct ElementState {
    dead_time_ps: f64,
    jitter: Option<Normal<f64>>,
    jitter_rng: SimRng,
    last: Option<Picos>,
    registrations: Vec<Picos>,
    tags: Vec<TimeTag>,
}

fn is_live(last: Option<Picos>, t: Picos, dead_time_ps: f64) -> bool {
    last.is_none_or(|last| (t - last) as f64 >= dead_time_ps)
}

/// Non-paralyzable dead-time gate over ascending candidate times: the times
/// that register on a single element.
pub fn apply_dead_time(times: &[Picos], dead_time_ns: f64) -> Vec<Picos> {
    let dead_time_ps = dead_time_ns * 1e3;
    let mut last = None;
    let mut out = Vec::new();
    for &t in times {
        if is_live(last, t, dead_time_ps) {
            last = Some(t);
            out.push(t);
        }
    }
    out
}

impl ElementState {
    /// Returns true if the candidate registered.
    fn offer(&mut self, channel: u8, c: Candidate) -> bool {
        if !is_live(self.last, c.time, self.dead_time_ps) {
            return false;
        }
        self.last = Some(c.time);
        self.registrations.push(c.time);
        let offset = match &self.jitter {
            Some(g) => g.sample(&mut self.jitter_rng).round() as Picos,
            None => 0,
        };
        self.tags.push(TimeTag {
            time: c.time + offset,
            channel,
            origin: c.origin,
        });
        true
    }
}

fn element_candidates(
    photons: &[Picos],
    efficiency: f64,
    dark_rate: f64,
    duration: Picos,
    seed: u64,
    channel: usize,
) -> Vec<Candidate> {
    let mut accept = child_rng(seed, Purpose::Accept, channel as u64);
    let accepted = photons.iter().copied().filter(|_| {
        // skip the draw on a perfect detector so ε=1 consumes no randomness
        efficiency >= 1.0 || accept.random::<f64>() < efficiency
    });
    let dark = gen_cw(
        dark_rate,
        duration,
        child_seed(seed, Purpose::Dark, channel as u64),
    );
    let mut out = Vec::with_capacity(photons.len() + dark.len());
    let mut dark = dark.arrivals().iter().copied().peekable();
    for t in accepted {
        while let Some(&d) = dark.peek() {
            if d < t {
                out.push(Candidate {
                    time: d,
                    origin: Origin::Dark,
                });
                dark.next();
            } else {
                break;
            }
        }
        out.push(Candidate {
            time: t,
            origin: Origin::Photon,
        });
    }
    out.extend(dark.map(|time| Candidate {
        time,
        origin: Origin::Dark,
    }));
    out
}

/// Run one simulation and keep the truth-side bookkeeping.
pub fn simulate_run(cfg: &SimConfig) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let array = &cfg.array;
    let seed = cfg.seed;
    let duration = cfg.duration;

    let stream = cfg
        .source
        .attenuated()
        .generate(duration, child_seed(seed, Purpose::Source, 0));
    let incident_photons = stream.len() as u64;
    let routed = split_to_elements(
        &stream,
        &array.couplings(),
        child_seed(seed, Purpose::Split, 0),
    )?;
    drop(stream);

    let eps = cfg.op.efficiencies(array);
    let dark = cfg.op.dark_rates(array);
    let tt = cfg.instrument_jitter_fwhm_ps;

    let candidates: Vec<Vec<Candidate>> = routed
        .par_iter()
        .enumerate()
        .map(|(i, s)| element_candidates(s.arrivals(), eps[i], dark[i], duration, seed, i))
        .collect();
    drop(routed);

    let mut states: Vec<ElementState> = array
        .elements()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let sigma = (e.jitter_fwhm_ps.powi(2) + tt * tt).sqrt() / FWHM_PER_SIGMA;
            ElementState {
                dead_time_ps: e.dead_time_ns * 1e3,
                jitter: (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma")),
                jitter_rng: child_rng(seed, Purpose::Jitter, i as u64),
                last: None,
                registrations: Vec::new(),
                tags: Vec::with_capacity(candidates[i].len()),
            }
        })
        .collect();

    let has_crosstalk = array
        .crosstalk_prob()
        .iter()
        .any(|row| row.iter().any(|&c| c > 0.0));

    if has_crosstalk {
        run_coupled(cfg, &candidates, &mut states);
    } else {
        states
            .par_iter_mut()
            .zip(candidates.par_iter())
            .enumerate()
            .for_each(|(i, (state, cands))| {
                for &c in cands {
                    state.offer(i as u8, c);
                }
            });
    }
    drop(candidates);

    let mut tags = Vec::with_capacity(states.iter().map(|s| s.tags.len()).sum());
    let mut true_registrations = Vec::with_capacity(ELEMENTS);
    for s in states {
        tags.extend(s.tags);
        true_registrations.push(s.registrations);
    }
    tags.par_sort_unstable();

    Ok(SimRun {
        tags,
        true_registrations,
        incident_photons,
        duration,
    })
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    time: Picos,
    origin: Origin,
    channel: u8,
    seq: u64,
}

/// Global true-time event loop; needed once registrations on one element can
/// schedule candidates on another.
fn run_coupled(cfg: &SimConfig, candidates: &[Vec<Candidate>], states: &mut [ElementState]) {
    let prob = cfg.array.crosstalk_prob();
    let delay_ps: [[Picos; ELEMENTS]; ELEMENTS] = std::array::from_fn(|i| {
        std::array::from_fn(|j| (cfg.array.crosstalk_delay_ns()[i][j] * 1e3).round() as Picos)
    });
    let aggressors: Vec<Vec<usize>> = prob
        .iter()
        .map(|row| (0..ELEMENTS).filter(|&j| row[j] > 0.0).collect())
        .collect();
    let mut xt_rng: Vec<SimRng> = (0..ELEMENTS)
        .map(|i| child_rng(cfg.seed, Purpose::Crosstalk, i as u64))
        .collect();

    let mut cursor = [0usize; ELEMENTS];
    let mut heap = BinaryHeap::new();
    for (i, c) in candidates.iter().enumerate() {
        if let Some(first) = c.first() {
            heap.push(Reverse(Pending {
                time: first.time,
                origin: first.origin,
                channel: i as u8,
                seq: 0,
            }));
        }
    }
    let mut xt_seq = 0u64;

    while let Some(Reverse(p)) = heap.pop() {
        let ch = p.channel as usize;
        if p.origin != Origin::Crosstalk {
            cursor[ch] += 1;
            if let Some(next) = candidates[ch].get(cursor[ch]) {
                heap.push(Reverse(Pending {
                    time: next.time,
                    origin: next.origin,
                    channel: p.channel,
                    seq: cursor[ch] as u64,
                }));
            }
        }
        let c = Candidate {
            time: p.time,
            origin: p.origin,
        };
        // crosstalk is single-hop
        if states[ch].offer(p.channel, c) && p.origin != Origin::Crosstalk {
            for &j in &aggressors[ch] {
                if xt_rng[ch].random::<f64>() < prob[ch][j] {
                    let t = p.time + delay_ps[ch][j];
                    if t < cfg.duration {
                        xt_seq += 1;
                        heap.push(Reverse(Pending {
                            time: t,
                            origin: Origin::Crosstalk,
                            channel: j as u8,
                            seq: xt_seq,
                        }));
                    }
                }
            }
        }
    }
}

/// Strip truth labels, keeping order and times.
pub fn measured_view(tags: &[TimeTag]) -> Vec<MeasuredTag> {
    tags.iter()
        .map(|t| MeasuredTag {
            time: t.time,
            channel: t.channel,
        })
        .collect()
}

/// Per-channel registered rate in counts/s.
pub fn count_rates<I>(channels: I, duration: Picos) -> [f64; ELEMENTS]
where
    I: IntoIterator<Item = u8>,
{
    assert!(duration > 0, "duration must be positive");
    let mut counts = [0u64; ELEMENTS];
    for ch in channels {
        counts[ch as usize] += 1;
    }
    let seconds = duration as f64 / PS_PER_S;
    counts.map(|c| c as f64 / seconds)
}

pub fn tag_count_rates(tags: &[TimeTag], duration: Picos) -> [f64; ELEMENTS] {
    count_rates(tags.iter().map(|t| t.channel), duration)
}
