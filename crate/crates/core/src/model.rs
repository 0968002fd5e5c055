//! Parametric descriptions of the nanowire elements and the array.
//!
//! Currents are in arbitrary µA units; only differences and ratios between
//! them carry meaning. Rates are in counts (or photons) per second, dead times
//! in nanoseconds and jitter widths in picoseconds FWHM.

use thiserror::Error;

/// Number of elements in the array.
pub const ELEMENTS: usize = 16;

/// Default crosstalk delay between any ordered pair of elements.
pub const DEFAULT_CROSSTALK_DELAY_NS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("bias underflow: dark rate {target} /s requires a negative bias on element {element}")]
    BiasUnderflow { element: usize, target: f64 },
    #[error(
        "element {element} would latch: bias {bias} µA exceeds switching current {i_switch} µA"
    )]
    WouldLatch {
        element: usize,
        bias: f64,
        i_switch: f64,
    },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Efficiency and dark-count response of one element versus bias current.
///
/// Efficiency is a logistic sigmoid saturating at `eps_max`; the dark rate is
/// log-linear in bias, anchored at `d_switch` at the switching current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasResponse {
    pub i_switch: f64,
    pub eps_max: f64,
    pub i_mid: f64,
    pub i_width: f64,
    pub d_switch: f64,
    pub d_decade: f64,
}

impl BiasResponse {
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            ("i_switch", self.i_switch),
            ("eps_max", self.eps_max),
            ("i_mid", self.i_mid),
            ("i_width", self.i_width),
            ("d_switch", self.d_switch),
            ("d_decade", self.d_decade),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(self.eps_max > 0.0 && self.eps_max <= 1.0) {
            return Err(invalid("eps_max", "must lie in (0, 1]"));
        }
        if self.i_width <= 0.0 {
            return Err(invalid("i_width", "must be positive"));
        }
        if !(self.i_mid > 0.0 && self.i_mid < self.i_switch) {
            return Err(invalid("i_mid", "must satisfy 0 < i_mid < i_switch"));
        }
        if self.d_switch <= 0.0 {
            return Err(invalid("d_switch", "must be positive"));
        }
        if self.d_decade <= 0.0 {
            return Err(invalid("d_decade", "must be positive"));
        }
        Ok(())
    }

    pub fn efficiency_at(&self, bias: f64) -> f64 {
        efficiency_at(self, bias)
    }

    pub fn dark_rate_at(&self, bias: f64) -> f64 {
        dark_rate_at(self, bias)
    }
}

/// Detection efficiency at `bias`: `eps_max / (1 + exp(-(bias - i_mid) / i_width))`.
pub fn efficiency_at(response: &BiasResponse, bias: f64) -> f64 {
    let z = (bias - response.i_mid) / response.i_width;
    response.eps_max / (1.0 + (-z).exp())
}

/// Intrinsic dark rate at `bias`: `d_switch * 10^((bias - i_switch) / d_decade)`.
pub fn dark_rate_at(response: &BiasResponse, bias: f64) -> f64 {
    response.d_switch * 10f64.powf((bias - response.i_switch) / response.d_decade)
}

/// Exact inverse of [`dark_rate_at`].
pub fn bias_for_dark_rate(response: &BiasResponse, target: f64) -> Result<f64, ModelError> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(invalid(
            "target",
            "dark rate target must be positive and finite",
        ));
    }
    let bias = response.i_switch + response.d_decade * (target / response.d_switch).log10();
    if bias < 0.0 {
        return Err(ModelError::BiasUnderflow { element: 0, target });
    }
    Ok(bias)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementModel {
    pub index: usize,
    pub response: BiasResponse,
    /// Reset time to full efficiency, ns.
    pub dead_time_ns: f64,
    /// Intrinsic timing jitter, ps FWHM.
    pub jitter_fwhm_ps: f64,
    /// Fraction of the incident light routed onto this element.
    pub coupling: f64,
}

impl ElementModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let at = |f: &str| format!("element.{}.{}", self.index, f);
        if self.index >= ELEMENTS {
            return Err(invalid(at("index"), format!("must be below {ELEMENTS}")));
        }
        self.response.validate().map_err(|e| match e {
            ModelError::Invalid { field, reason } => invalid(at(&field), reason),
            other => other,
        })?;
        if !(self.dead_time_ns >= 0.0) || !self.dead_time_ns.is_finite() {
            return Err(invalid(
                at("dead_time_ns"),
                "must be finite and non-negative",
            ));
        }
        if !(self.jitter_fwhm_ps >= 0.0) || !self.jitter_fwhm_ps.is_finite() {
            return Err(invalid(at("jitter_ps"), "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(invalid(at("coupling"), "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn dead_time_s(&self) -> f64 {
        self.dead_time_ns * 1e-9
    }
}

/// Square per-pair matrix indexed `[aggressor][victim]`.
pub type PairMatrix = [[f64; ELEMENTS]; ELEMENTS];

/// Sixteen elements plus the crosstalk probability and delay matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayModel {
    elements: Vec<ElementModel>,
    crosstalk_prob: PairMatrix,
    crosstalk_delay_ns: PairMatrix,
}

impl ArrayModel {
    pub fn new(
        elements: Vec<ElementModel>,
        crosstalk_prob: PairMatrix,
        crosstalk_delay_ns: PairMatrix,
    ) -> Result<Self, ModelError> {
        if elements.len() != ELEMENTS {
            return Err(invalid(
                "elements",
                format!("expected {ELEMENTS} elements, got {}", elements.len()),
            ));
        }
        for (i, e) in elements.iter().enumerate() {
            if e.index != i {
                return Err(invalid(format!("element.{i}.index"), "out of order"));
            }
            e.validate()?;
        }
        let total: f64 = elements.iter().map(|e| e.coupling).sum();
        if total > 1.0 + 1e-12 {
            return Err(invalid("coupling", format!("couplings sum to {total} > 1")));
        }
        for i in 0..ELEMENTS {
            for j in 0..ELEMENTS {
                let c = crosstalk_prob[i][j];
                if i == j && c != 0.0 {
                    return Err(invalid(
                        format!("crosstalk.{i}.{j}"),
                        "diagonal must be zero",
                    ));
                }
                if !(0.0..=1.0).contains(&c) {
                    return Err(invalid(format!("crosstalk.{i}.{j}"), "must lie in [0, 1]"));
                }
                let d = crosstalk_delay_ns[i][j];
                if i != j && (!(d > 0.0) || !d.is_finite()) {
                    return Err(invalid(
                        format!("crosstalk_delay.{i}.{j}"),
                        "must be positive",
                    ));
                }
            }
        }
        Ok(Self {
            elements,
            crosstalk_prob,
            crosstalk_delay_ns,
        })
    }

    /// Sixteen copies of `element` (re-indexed) with no crosstalk.
    pub fn uniform(element: ElementModel) -> Result<Self, ModelError> {
        let elements = (0..ELEMENTS)
            .map(|index| ElementModel { index, ..element })
            .collect();
        Self::new(
            elements,
            no_crosstalk(),
            uniform_delay(DEFAULT_CROSSTALK_DELAY_NS),
        )
    }

    pub fn elements(&self) -> &[ElementModel] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &ElementModel {
        &self.elements[i]
    }

    pub fn crosstalk_prob(&self) -> &PairMatrix {
        &self.crosstalk_prob
    }

    pub fn crosstalk_delay_ns(&self) -> &PairMatrix {
        &self.crosstalk_delay_ns
    }

    pub fn couplings(&self) -> [f64; ELEMENTS] {
        std::array::from_fn(|i| self.elements[i].coupling)
    }

    pub fn with_crosstalk(&self, prob: PairMatrix) -> Result<Self, ModelError> {
        Self::new(self.elements.clone(), prob, self.crosstalk_delay_ns)
    }

    pub fn with_elements(&self, elements: Vec<ElementModel>) -> Result<Self, ModelError> {
        Self::new(elements, self.crosstalk_prob, self.crosstalk_delay_ns)
    }
}

pub fn no_crosstalk() -> PairMatrix {
    [[0.0; ELEMENTS]; ELEMENTS]
}

pub fn uniform_delay(delay_ns: f64) -> PairMatrix {
    let mut m = [[delay_ns; ELEMENTS]; ELEMENTS];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    m
}

/// Bias currents, one per element. Construction checks them against the array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    bias: [f64; ELEMENTS],
}

impl OperatingPoint {
    pub fn new(array: &ArrayModel, bias: [f64; ELEMENTS]) -> Result<Self, ModelError> {
        for (i, (&b, e)) in bias.iter().zip(array.elements()).enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(invalid(
                    format!("bias.{i}"),
                    "must be finite and non-negative",
                ));
            }
            if b > e.response.i_switch {
                return Err(ModelError::WouldLatch {
                    element: i,
                    bias: b,
                    i_switch: e.response.i_switch,
                });
            }
        }
        Ok(Self { bias })
    }

    /// Every element biased to give `target` dark counts per second.
    pub fn for_dark_rate(array: &ArrayModel, target: f64) -> Result<Self, ModelError> {
        let mut bias = [0.0; ELEMENTS];
        for (i, e) in array.elements().iter().enumerate() {
            bias[i] = bias_for_dark_rate(&e.response, target).map_err(|err| match err {
                ModelError::BiasUnderflow { target, .. } => {
                    ModelError::BiasUnderflow { element: i, target }
                }
                other => other,
            })?;
        }
        Self::new(array, bias)
    }

    pub fn bias(&self) -> &[f64; ELEMENTS] {
        &self.bias
    }

    /// Per-element efficiency at this operating point.
    pub fn efficiencies(&self, array: &ArrayModel) -> [f64; ELEMENTS] {
        std::array::from_fn(|i| efficiency_at(&array.element(i).response, self.bias[i]))
    }

    /// Per-element intrinsic dark rate at this operating point.
    pub fn dark_rates(&self, array: &ArrayModel) -> [f64; ELEMENTS] {
        std::array::from_fn(|i| dark_rate_at(&array.element(i).response, self.bias[i]))
    }
}

/// Net system detection efficiency of the array under a CW photon flux.
///
/// Each element sees `eps_i * w_i * flux` detectable photons per second and
/// saturates under non-paralyzable dead time; the zero-flux limit is
/// `sum(eps_i * w_i)`.
pub fn sde_vs_flux(array: &ArrayModel, op: &OperatingPoint, flux: f64) -> f64 {
    let eps = op.efficiencies(array);
    let mut zero_flux = 0.0;
    let mut detected = 0.0;
    for (e, eps_i) in array.elements().iter().zip(eps) {
        let x = eps_i * e.coupling;
        zero_flux += x;
        detected += x / (1.0 + x * flux * e.dead_time_s());
    }
    if flux > 0.0 {
        detected
    } else {
        zero_flux
    }
}
