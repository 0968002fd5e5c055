//! Monte Carlo simulator and characterization toolkit for a 16-element
//! superconducting nanowire single-photon detector array.
//!
//! - [`model`]: element and array parameters, bias-response curves and the
//!   closed-form efficiency-versus-flux model.
//! - [`source`]: CW and pulsed photon streams, attenuation and routing.
//! - [`engine`]: the discrete-event detector simulation producing time tags.
//! - [`analysis`]: estimators for reset time, jitter, crosstalk and SDE.
//! - [`config`]: the experiment configuration file format.
//! - [`formats`]: text and CSV readers/writers for streams, tags and results.
//! - [`report`]: the one-page summary built from result tables.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod formats;
pub mod model;
pub mod report;
pub mod rng;
pub mod source;

pub use engine::{simulate, simulate_run, Origin, SimConfig, SimRun, TimeTag};
pub use model::{ArrayModel, BiasResponse, ElementModel, OperatingPoint, ELEMENTS};
pub use source::{PhotonStream, Picos, SourceModel};
