//! Design, simulation and waveform analysis for single-stage LLC resonant
//! grid-tied inverters built from input-parallel, output-series modules.
//!
//! * [`fha`]: closed-form gain and impedance of the resonant tank;
//! * [`design`]: component sizing and the iterative design loop;
//! * [`sim`]: switched and envelope time-domain simulation;
//! * [`analysis`]: THD, ZVS coverage, stress and settling metrics.

pub mod analysis;
pub mod design;
pub mod fha;
pub mod parallel;
pub mod sim;

pub use design::{DesignSpec, FilterDesign, GridSpec, Region};
pub use fha::ResonantTank;
pub use sim::{simulate, Schedule, SimConfig, SimMode, SimOutput};
