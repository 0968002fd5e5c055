//! Experiment configuration files.
//!
//! The format is flat, sectioned key-value text:
//!
//! ```text
//! # comment
//! seed = 42
//! [element.all]
//! dead_time_ns = 9.6
//! [crosstalk.high]
//! 4.5 = 0.05
//! ```
//!
//! A `[section]` header prefixes every following key with `section.` until
//! the next header; `[]` clears the prefix. Keys may also be written fully
//! qualified at top level. Duplicate keys and unknown keys are errors, and
//! every diagnostic names the offending key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::analysis::{CrosstalkParams, Exposure, JitterParams, Regime};
use crate::engine::SimConfig;
use crate::model::{
    uniform_delay, ArrayModel, BiasResponse, ElementModel, ModelError, OperatingPoint, PairMatrix,
    ELEMENTS,
};
use crate::source::{Picos, SourceKind, SourceModel, PS_PER_S};

pub const PAPER_UNIFORM: &str = include_str!("../configs/paper_uniform.conf");
pub const PAPER_SPREAD: &str = include_str!("../configs/paper_spread.conf");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate key '{key}' (line {line})")]
    Duplicate { key: String, line: usize },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("missing key '{0}'")]
    Missing(String),
    #[error("bad value for '{key}': {reason}")]
    BadValue { key: String, reason: String },
    #[error("invalid configuration at '{key}': {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    /// The key the diagnostic is about, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax { .. } => None,
            ConfigError::Duplicate { key, .. }
            | ConfigError::UnknownKey(key)
            | ConfigError::Missing(key)
            | ConfigError::BadValue { key, .. }
            | ConfigError::Invalid { key, .. } => Some(key),
        }
    }
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Invalid { field, reason } => ConfigError::Invalid { key: field, reason },
            ModelError::BiasUnderflow { element, .. } => ConfigError::Invalid {
                key: format!("operating.{element}.bias_ua"),
                reason: e.to_string(),
            },
            ModelError::WouldLatch { element, .. } => ConfigError::Invalid {
                key: format!("operating.{element}.bias_ua"),
                reason: e.to_string(),
            },
        }
    }
}

/// One `key = value` line after section prefixes are applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|part| {
            !part.is_empty()
                && part
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

/// Tokenize a configuration file into fully qualified entries.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut prefix = String::new();
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                message: "unterminated section header".into(),
            })?;
            let name = name.trim();
            if !name.is_empty() && !valid_key(name) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("invalid section name '{name}'"),
                });
            }
            prefix = name.to_string();
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: "expected 'key = value'".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !valid_key(k) {
            return Err(ConfigError::Syntax {
                line,
                message: format!("invalid key '{k}'"),
            });
        }
        if v.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                message: format!("empty value for '{k}'"),
            });
        }
        let key = if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        };
        if !seen.insert(key.clone()) {
            return Err(ConfigError::Duplicate { key, line });
        }
        out.push(Entry {
            key,
            value: v.to_string(),
            line,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub source_rate_hz: f64,
    pub db_start: f64,
    pub db_stop: f64,
    pub points: usize,
    pub target_counts: f64,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl SweepSettings {
    pub fn db_list(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.db_start];
        }
        let step = (self.db_stop - self.db_start) / (self.points - 1) as f64;
        (0..self.points)
            .map(|k| self.db_start + step * k as f64)
            .collect()
    }

    pub fn exposure(&self) -> Exposure {
        Exposure::Counts {
            target: self.target_counts,
            min: seconds_to_ps(self.min_duration_s),
            max: seconds_to_ps(self.max_duration_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterSettings {
    pub rep_rate_hz: f64,
    pub mean_photons: f64,
    pub pulse_fwhm_ps: f64,
    pub duration_s: f64,
    pub bin_ps: f64,
    pub window_ps: f64,
}

/// Which bias regimes a crosstalk run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeSelection {
    High,
    Low,
    Both,
}

impl RegimeSelection {
    pub fn regimes(self) -> Vec<Regime> {
        match self {
            RegimeSelection::High => vec![Regime::HighBias],
            RegimeSelection::Low => vec![Regime::LowBias],
            RegimeSelection::Both => vec![Regime::HighBias, Regime::LowBias],
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            RegimeSelection::High => "high",
            RegimeSelection::Low => "low",
            RegimeSelection::Both => "both",
        }
    }
}

impl std::str::FromStr for RegimeSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high" => Ok(RegimeSelection::High),
            "low" => Ok(RegimeSelection::Low),
            "both" => Ok(RegimeSelection::Both),
            other => Err(format!("expected high, low or both, got '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrosstalkSettings {
    pub regime: RegimeSelection,
    pub high_base_dark_hz: f64,
    pub low_base_dark_hz: f64,
    pub aggressor_dark_hz: f64,
    pub duration_s: f64,
    pub hist_bin_ps: f64,
    pub hist_window_ps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeSettings {
    pub fluxes_hz: Vec<f64>,
    pub min_photons: f64,
    pub reference_flux_hz: f64,
}

impl SdeSettings {
    /// Each flux point runs long enough to expect `min_photons` incident photons.
    pub fn exposure(&self) -> Exposure {
        Exposure::Counts {
            target: self.min_photons,
            min: 1,
            max: Picos::MAX / 4,
        }
    }
}

/// Everything one experiment run needs, after defaults and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub output_dir: PathBuf,
    pub instrument_jitter_ps: f64,
    pub elements: Vec<ElementModel>,
    pub bias: [f64; ELEMENTS],
    pub crosstalk_active: Option<Regime>,
    pub crosstalk_high: PairMatrix,
    pub crosstalk_low: PairMatrix,
    pub crosstalk_delay_ns: PairMatrix,
    pub source: SourceModel,
    pub sweep: SweepSettings,
    pub jitter: JitterSettings,
    pub crosstalk_run: CrosstalkSettings,
    pub sde_curve: SdeSettings,
}

pub fn seconds_to_ps(s: f64) -> Picos {
    (s * PS_PER_S).round() as Picos
}

const ELEMENT_FIELDS: [&str; 9] = [
    "i_switch_ua",
    "eps_max",
    "i_mid_ua",
    "i_width_ua",
    "d_switch_hz",
    "d_decade_ua",
    "dead_time_ns",
    "jitter_ps",
    "coupling",
];

struct Keys {
    map: BTreeMap<String, String>,
    used: std::collections::BTreeSet<String>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<String> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    fn num(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.parse(key)?;
        match v {
            Some(x) if !x.is_finite() => Err(ConfigError::BadValue {
                key: key.into(),
                reason: "must be finite".into(),
            }),
            other => Ok(other),
        }
    }

    fn num_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn nonneg(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.num_or(key, default)?;
        if v < 0.0 {
            return Err(ConfigError::BadValue {
                key: key.into(),
                reason: "must be non-negative".into(),
            });
        }
        Ok(v)
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.num_or(key, default)?;
        if !(v > 0.0) {
            return Err(ConfigError::BadValue {
                key: key.into(),
                reason: "must be positive".into(),
            });
        }
        Ok(v)
    }

    fn pair_matrix(&mut self, prefix: &str) -> Result<PairMatrix, ConfigError> {
        let mut m = [[0.0; ELEMENTS]; ELEMENTS];
        for i in 0..ELEMENTS {
            for j in 0..ELEMENTS {
                if let Some(v) = self.num(&format!("{prefix}.{i}.{j}"))? {
                    m[i][j] = v;
                }
            }
        }
        Ok(m)
    }
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn paper_uniform() -> Self {
        Self::parse(PAPER_UNIFORM).expect("shipped config is valid")
    }

    pub fn paper_spread() -> Self {
        Self::parse(PAPER_SPREAD).expect("shipped config is valid")
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parse `text`, then apply `key=value` overrides, which replace file
    /// values rather than counting as duplicates.
    pub fn parse_with_overrides(
        text: &str,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, String> = parse_entries(text)?
            .into_iter()
            .map(|e| (e.key, e.value))
            .collect();
        for (k, v) in overrides {
            if !valid_key(k) {
                return Err(ConfigError::Syntax {
                    line: 0,
                    message: format!("invalid override key '{k}'"),
                });
            }
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(map)
    }

    fn from_map(map: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut keys = Keys {
            map,
            used: Default::default(),
        };

        let seed: u64 = keys.parse("seed")?.unwrap_or(0);
        let duration_s = keys.positive("duration_s", 0.01)?;
        let output_dir = PathBuf::from(keys.take("output_dir").unwrap_or_else(|| "out".into()));
        let instrument_jitter_ps = keys.nonneg("instrument_jitter_ps", 22.0)?;

        let mut elements = Vec::with_capacity(ELEMENTS);
        for i in 0..ELEMENTS {
            let mut vals = [0.0; 9];
            for (slot, field) in vals.iter_mut().zip(ELEMENT_FIELDS) {
                let own = format!("element.{i}.{field}");
                let all = format!("element.all.{field}");
                // read both so neither is reported as unknown
                let a = keys.num(&own)?;
                let b = keys.num(&all)?;
                *slot = a.or(b).ok_or(ConfigError::Missing(own))?;
            }
            elements.push(ElementModel {
                index: i,
                response: BiasResponse {
                    i_switch: vals[0],
                    eps_max: vals[1],
                    i_mid: vals[2],
                    i_width: vals[3],
                    d_switch: vals[4],
                    d_decade: vals[5],
                },
                dead_time_ns: vals[6],
                jitter_fwhm_ps: vals[7],
                coupling: vals[8],
            });
        }
        for e in &elements {
            e.validate().map_err(|err| match err {
                ModelError::Invalid { field, reason } => ConfigError::Invalid {
                    key: element_key(&field),
                    reason,
                },
                other => other.into(),
            })?;
        }
        let total: f64 = elements.iter().map(|e| e.coupling).sum();
        if total > 1.0 + 1e-12 {
            return Err(ConfigError::Invalid {
                key: "element.*.coupling".into(),
                reason: format!("couplings sum to {total} > 1"),
            });
        }

        let crosstalk_active = match keys.take("crosstalk.active").as_deref() {
            None | Some("none") => None,
            Some(s) => Some(
                s.parse::<Regime>()
                    .map_err(|r| bad("crosstalk.active", r))?,
            ),
        };
        let default_delay = keys.positive("crosstalk.delay_ns", 1.0)?;
        let mut crosstalk_delay_ns = uniform_delay(default_delay);
        for i in 0..ELEMENTS {
            for j in 0..ELEMENTS {
                let key = format!("crosstalk.delay.{i}.{j}");
                if let Some(d) = keys.num(&key)? {
                    if i == j {
                        return Err(bad(&key, "no delay on the diagonal"));
                    }
                    crosstalk_delay_ns[i][j] = d;
                }
            }
        }
        let crosstalk_high = keys.pair_matrix("crosstalk.high")?;
        let crosstalk_low = keys.pair_matrix("crosstalk.low")?;

        let probe = ArrayModel::new(elements.clone(), crosstalk_high, crosstalk_delay_ns)
            .map_err(|e| rename_matrix(e, "crosstalk.high"))?;
        probe
            .with_crosstalk(crosstalk_low)
            .map_err(|e| rename_matrix(e, "crosstalk.low"))?;

        let per_element = keys.num("operating.dark_target_hz")?;
        // an array total overrides the per-element target and is shared evenly
        let (dark_key, dark_target) = match keys.num("operating.net_dark_hz")? {
            Some(net) => ("operating.net_dark_hz", Some(net / ELEMENTS as f64)),
            None => ("operating.dark_target_hz", per_element),
        };
        let mut bias = [0.0; ELEMENTS];
        for (i, e) in elements.iter().enumerate() {
            let key = format!("operating.{i}.bias_ua");
            bias[i] = match (keys.num(&key)?, dark_target) {
                (Some(b), _) => b,
                (None, Some(t)) => crate::model::bias_for_dark_rate(&e.response, t)
                    .map_err(|err| bad(dark_key, err.to_string()))?,
                (None, None) => return Err(ConfigError::Missing(key)),
            };
        }
        OperatingPoint::new(&probe, bias).map_err(|err| match err {
            ModelError::Invalid { field, reason } => ConfigError::Invalid {
                key: format!("operating.{}.bias_ua", field.trim_start_matches("bias.")),
                reason,
            },
            other => other.into(),
        })?;

        let kind = match keys.take("source.kind").as_deref().unwrap_or("cw") {
            "cw" => SourceKind::Cw {
                rate: keys.nonneg("source.rate_hz", 0.0)?,
            },
            "pulsed" => SourceKind::Pulsed {
                rep_rate: keys.positive("source.rep_rate_hz", 5e7)?,
                pulse_fwhm_ps: keys.nonneg("source.pulse_fwhm_ps", 8.0)?,
                mean_photons: keys.nonneg("source.mean_photons", 1.0)?,
            },
            other => {
                return Err(bad(
                    "source.kind",
                    format!("expected cw or pulsed, got '{other}'"),
                ))
            }
        };
        let source = SourceModel {
            kind,
            attenuation_db: keys.nonneg("source.attenuation_db", 0.0)?,
        };

        let points: usize = keys.parse("sweep.points")?.unwrap_or(11);
        if points == 0 {
            return Err(bad("sweep.points", "must be at least 1"));
        }
        let sweep = SweepSettings {
            source_rate_hz: keys.positive("sweep.source_rate_hz", 1.6e9)?,
            db_start: keys.nonneg("sweep.db_start", 0.0)?,
            db_stop: keys.nonneg("sweep.db_stop", 50.0)?,
            points,
            target_counts: keys.positive("sweep.target_counts", 2e5)?,
            min_duration_s: keys.positive("sweep.min_duration_s", 1e-3)?,
            max_duration_s: keys.positive("sweep.max_duration_s", 60.0)?,
        };
        if sweep.max_duration_s < sweep.min_duration_s {
            return Err(bad("sweep.max_duration_s", "below sweep.min_duration_s"));
        }

        let jitter = JitterSettings {
            rep_rate_hz: keys.positive("jitter.rep_rate_hz", 5e7)?,
            mean_photons: keys.positive("jitter.mean_photons", 1.0)?,
            pulse_fwhm_ps: keys.nonneg("jitter.pulse_fwhm_ps", 8.0)?,
            duration_s: keys.positive("jitter.duration_s", 0.4)?,
            bin_ps: keys.positive("jitter.bin_ps", 2.0)?,
            window_ps: keys.positive("jitter.window_ps", 2000.0)?,
        };

        let regime = match keys.take("crosstalk_run.regime") {
            None => RegimeSelection::Both,
            Some(s) => s
                .parse()
                .map_err(|r: String| bad("crosstalk_run.regime", r))?,
        };
        let crosstalk_run = CrosstalkSettings {
            regime,
            high_base_dark_hz: keys.positive("crosstalk_run.high_base_dark_hz", 5000.0)?,
            low_base_dark_hz: keys.positive("crosstalk_run.low_base_dark_hz", 500.0)?,
            aggressor_dark_hz: keys.positive("crosstalk_run.aggressor_dark_hz", 1e6)?,
            duration_s: keys.positive("crosstalk_run.duration_s", 1.0)?,
            hist_bin_ps: keys.positive("crosstalk_run.hist_bin_ps", 50.0)?,
            hist_window_ps: keys.positive("crosstalk_run.hist_window_ps", 5000.0)?,
        };
        for (key, base) in [
            (
                "crosstalk_run.high_base_dark_hz",
                crosstalk_run.high_base_dark_hz,
            ),
            (
                "crosstalk_run.low_base_dark_hz",
                crosstalk_run.low_base_dark_hz,
            ),
        ] {
            if base >= crosstalk_run.aggressor_dark_hz {
                return Err(bad(key, "must be below crosstalk_run.aggressor_dark_hz"));
            }
        }

        let fluxes_hz = match keys.take("sde_curve.fluxes_hz") {
            None => vec![1e6, 3e6, 1e7, 3e7, 1e8, 3e8, 1e9],
            Some(list) => list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite() && *v > 0.0)
                        .ok_or_else(|| {
                            bad("sde_curve.fluxes_hz", format!("bad flux '{}'", s.trim()))
                        })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let sde_curve = SdeSettings {
            fluxes_hz,
            min_photons: keys.positive("sde_curve.min_photons", 2e6)?,
            reference_flux_hz: keys.positive("sde_curve.reference_flux_hz", 3e6)?,
        };

        if let Some(unknown) = keys.map.keys().find(|k| !keys.used.contains(*k)) {
            return Err(ConfigError::UnknownKey(unknown.clone()));
        }

        Ok(Self {
            seed,
            duration_s,
            output_dir,
            instrument_jitter_ps,
            elements,
            bias,
            crosstalk_active,
            crosstalk_high,
            crosstalk_low,
            crosstalk_delay_ns,
            source,
            sweep,
            jitter,
            crosstalk_run,
            sde_curve,
        })
    }

    pub fn crosstalk_matrix(&self, regime: Regime) -> PairMatrix {
        match regime {
            Regime::HighBias => self.crosstalk_high,
            Regime::LowBias => self.crosstalk_low,
        }
    }

    /// The array with the given regime's crosstalk matrix (or none).
    pub fn array(&self, regime: Option<Regime>) -> ArrayModel {
        let prob = regime
            .map(|r| self.crosstalk_matrix(r))
            .unwrap_or([[0.0; ELEMENTS]; ELEMENTS]);
        ArrayModel::new(self.elements.clone(), prob, self.crosstalk_delay_ns)
            .expect("validated at parse time")
    }

    pub fn active_array(&self) -> ArrayModel {
        self.array(self.crosstalk_active)
    }

    pub fn operating_point(&self) -> OperatingPoint {
        OperatingPoint::new(&self.active_array(), self.bias).expect("validated at parse time")
    }

    pub fn duration(&self) -> Picos {
        seconds_to_ps(self.duration_s)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            array: self.active_array(),
            op: self.operating_point(),
            source: self.source,
            duration: self.duration(),
            seed: self.seed,
            instrument_jitter_fwhm_ps: self.instrument_jitter_ps,
        }
    }

    /// Template for a count-rate sweep: CW at the sweep's 0 dB rate.
    pub fn sweep_template(&self) -> SimConfig {
        SimConfig {
            source: SourceModel::cw(self.sweep.source_rate_hz),
            ..self.sim_config()
        }
    }

    pub fn jitter_params(&self) -> JitterParams {
        JitterParams {
            rep_rate: self.jitter.rep_rate_hz,
            mean_photons: self.jitter.mean_photons,
            pulse_fwhm_ps: self.jitter.pulse_fwhm_ps,
            instrument_jitter_ps: self.instrument_jitter_ps,
            duration: seconds_to_ps(self.jitter.duration_s),
            seed: self.seed,
            bin_ps: self.jitter.bin_ps,
            window_ps: self.jitter.window_ps,
        }
    }

    pub fn crosstalk_params(&self, regime: Regime) -> CrosstalkParams {
        let r = &self.crosstalk_run;
        CrosstalkParams {
            regime,
            base_dark_hz: match regime {
                Regime::HighBias => r.high_base_dark_hz,
                Regime::LowBias => r.low_base_dark_hz,
            },
            aggressor_dark_hz: r.aggressor_dark_hz,
            duration: seconds_to_ps(r.duration_s),
            seed: self.seed,
            instrument_jitter_ps: self.instrument_jitter_ps,
            hist_bin_ps: r.hist_bin_ps,
            hist_window_ps: r.hist_window_ps,
        }
    }

    /// Fully expanded configuration text. Parsing it yields an identical
    /// configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# effective configuration");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "duration_s = {}", self.duration_s);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "instrument_jitter_ps = {}", self.instrument_jitter_ps);
        for e in &self.elements {
            let r = &e.response;
            let _ = writeln!(s, "\n[element.{}]", e.index);
            let vals = [
                r.i_switch,
                r.eps_max,
                r.i_mid,
                r.i_width,
                r.d_switch,
                r.d_decade,
                e.dead_time_ns,
                e.jitter_fwhm_ps,
                e.coupling,
            ];
            for (field, v) in ELEMENT_FIELDS.iter().zip(vals) {
                let _ = writeln!(s, "{field} = {v}");
            }
        }
        let _ = writeln!(s, "\n[operating]");
        for (i, b) in self.bias.iter().enumerate() {
            let _ = writeln!(s, "{i}.bias_ua = {b}");
        }
        let _ = writeln!(s, "\n[crosstalk]");
        let _ = writeln!(
            s,
            "active = {}",
            self.crosstalk_active.map_or("none", Regime::as_str)
        );
        for i in 0..ELEMENTS {
            for j in 0..ELEMENTS {
                if i != j {
                    let _ = writeln!(s, "delay.{i}.{j} = {}", self.crosstalk_delay_ns[i][j]);
                }
            }
        }
        for (name, m) in [("high", &self.crosstalk_high), ("low", &self.crosstalk_low)] {
            for i in 0..ELEMENTS {
                for j in 0..ELEMENTS {
                    if m[i][j] != 0.0 {
                        let _ = writeln!(s, "{name}.{i}.{j} = {}", m[i][j]);
                    }
                }
            }
        }
        let _ = writeln!(s, "\n[source]");
        match self.source.kind {
            SourceKind::Cw { rate } => {
                let _ = writeln!(s, "kind = cw\nrate_hz = {rate}");
            }
            SourceKind::Pulsed {
                rep_rate,
                pulse_fwhm_ps,
                mean_photons,
            } => {
                let _ = writeln!(
                    s,
                    "kind = pulsed\nrep_rate_hz = {rep_rate}\npulse_fwhm_ps = {pulse_fwhm_ps}\nmean_photons = {mean_photons}"
                );
            }
        }
        let _ = writeln!(s, "attenuation_db = {}", self.source.attenuation_db);
        let w = &self.sweep;
        let _ = writeln!(
            s,
            "\n[sweep]\nsource_rate_hz = {}\ndb_start = {}\ndb_stop = {}\npoints = {}\ntarget_counts = {}\nmin_duration_s = {}\nmax_duration_s = {}",
            w.source_rate_hz, w.db_start, w.db_stop, w.points, w.target_counts, w.min_duration_s, w.max_duration_s
        );
        let j = &self.jitter;
        let _ = writeln!(
            s,
            "\n[jitter]\nrep_rate_hz = {}\nmean_photons = {}\npulse_fwhm_ps = {}\nduration_s = {}\nbin_ps = {}\nwindow_ps = {}",
            j.rep_rate_hz, j.mean_photons, j.pulse_fwhm_ps, j.duration_s, j.bin_ps, j.window_ps
        );
        let c = &self.crosstalk_run;
        let _ = writeln!(
            s,
            "\n[crosstalk_run]\nregime = {}\nhigh_base_dark_hz = {}\nlow_base_dark_hz = {}\naggressor_dark_hz = {}\nduration_s = {}\nhist_bin_ps = {}\nhist_window_ps = {}",
            c.regime.as_str(), c.high_base_dark_hz, c.low_base_dark_hz, c.aggressor_dark_hz, c.duration_s, c.hist_bin_ps, c.hist_window_ps
        );
        let d = &self.sde_curve;
        let fluxes: Vec<String> = d.fluxes_hz.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(
            s,
            "\n[sde_curve]\nfluxes_hz = {}\nmin_photons = {}\nreference_flux_hz = {}",
            fluxes.join(", "),
            d.min_photons,
            d.reference_flux_hz
        );
        s
    }
}

/// Map a model field name onto the config key that sets it.
fn element_key(field: &str) -> String {
    const SUFFIXED: [(&str, &str); 5] = [
        (".i_switch", ".i_switch_ua"),
        (".i_mid", ".i_mid_ua"),
        (".i_width", ".i_width_ua"),
        (".d_switch", ".d_switch_hz"),
        (".d_decade", ".d_decade_ua"),
    ];
    for (from, to) in SUFFIXED {
        if let Some(stem) = field.strip_suffix(from) {
            return format!("{stem}{to}");
        }
    }
    field.to_string()
}

fn rename_matrix(e: ModelError, prefix: &str) -> ConfigError {
    match e {
        ModelError::Invalid { field, reason } if field.starts_with("crosstalk.") => {
            ConfigError::Invalid {
                key: field.replacen("crosstalk", prefix, 1),
                reason,
            }
        }
        ModelError::Invalid { field, reason } if field.starts_with("crosstalk_delay.") => {
            ConfigError::Invalid {
                key: field.replacen("crosstalk_delay", "crosstalk.delay", 1),
                reason,
            }
        }
        other => other.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse() {
        let u = ExperimentConfig::paper_uniform();
        assert_eq!(u.elements.len(), ELEMENTS);
        assert!(u.elements.iter().all(|e| e.dead_time_ns == 9.6));
        assert_eq!(u.crosstalk_high[4][5], 0.05);
        assert_eq!(u.crosstalk_low[4][5], 0.001);
        assert_eq!(u.crosstalk_active, Some(Regime::HighBias));

        let s = ExperimentConfig::paper_spread();
        let mean_tau: f64 = s.elements.iter().map(|e| e.dead_time_ns).sum::<f64>() / 16.0;
        assert!((mean_tau - 9.6).abs() < 0.05, "{mean_tau}");
        assert_eq!(s.elements[13].jitter_fwhm_ps, 121.0);
        assert!(s.elements[13].response.i_switch < s.elements[0].response.i_switch);
    }

    #[test]
    fn sections_prefix_keys() {
        let e = parse_entries("a = 1\n[x.y]\nb = 2 # trailing\n[]\nc = 3\n").unwrap();
        let keys: Vec<_> = e.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, ["a", "x.y.b", "c"]);
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(
            parse_entries("[x"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_entries("\nnovalue"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_entries("a ="),
            Err(ConfigError::Syntax { .. })
        ));
        assert!(matches!(
            parse_entries("a b = 1"),
            Err(ConfigError::Syntax { .. })
        ));
        assert!(matches!(
            parse_entries("a = 1\n[]\na = 2"),
            Err(ConfigError::Duplicate { line: 3, .. })
        ));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{PAPER_UNIFORM}\n[element.all]\ncolour = blue\n");
        // element.all.* is already used above, so the section reopens; only
        // the new key is new
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(err.key(), Some("element.all.colour"));
    }

    #[test]
    fn net_dark_anchor_is_shared_evenly() {
        let cfg = ExperimentConfig::parse_with_overrides(
            PAPER_UNIFORM,
            &[("operating.net_dark_hz".into(), "71000".into())],
        )
        .unwrap();
        let rates = cfg.operating_point().dark_rates(&cfg.array(None));
        for r in rates {
            assert!((r - 71000.0 / 16.0).abs() < 1e-6 * r, "{r}");
        }
    }

    #[test]
    fn bad_values_are_named() {
        let over = |k: &str, v: &str| {
            ExperimentConfig::parse_with_overrides(PAPER_UNIFORM, &[(k.into(), v.into())])
                .unwrap_err()
        };
        assert_eq!(
            over("element.3.coupling", "0.5").key(),
            Some("element.*.coupling")
        );
        assert_eq!(
            over("element.3.i_mid_ua", "30").key(),
            Some("element.3.i_mid_ua")
        );
        assert_eq!(
            over("operating.4.bias_ua", "-2").key(),
            Some("operating.4.bias_ua")
        );
        assert_eq!(
            over("element.3.dead_time_ns", "-1").key(),
            Some("element.3.dead_time_ns")
        );
        assert_eq!(over("seed", "abc").key(), Some("seed"));
        assert_eq!(
            over("operating.2.bias_ua", "25").key(),
            Some("operating.2.bias_ua")
        );
        assert_eq!(
            over("crosstalk.high.3.3", "0.1").key(),
            Some("crosstalk.high.3.3")
        );
        assert_eq!(over("source.kind", "laser").key(), Some("source.kind"));
        assert_eq!(
            over("crosstalk_run.regime", "mid").key(),
            Some("crosstalk_run.regime")
        );
    }

    #[test]
    fn missing_element_field_is_named() {
        let text = PAPER_UNIFORM.replace("dead_time_ns = 9.6\n", "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert_eq!(err, ConfigError::Missing("element.0.dead_time_ns".into()));
    }

    #[test]
    fn effective_text_round_trips() {
        for cfg in [
            ExperimentConfig::paper_uniform(),
            ExperimentConfig::paper_spread(),
        ] {
            let again = ExperimentConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(again, cfg);
            assert_eq!(again.to_text(), cfg.to_text());
        }
    }

    #[test]
    fn overrides_replace_file_values() {
        let cfg = ExperimentConfig::parse_with_overrides(
            PAPER_UNIFORM,
            &[
                ("source.rate_hz".into(), "0".into()),
                ("seed".into(), "7".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.source.incident_rate(), 0.0);
    }
}
