//! Time-domain simulation of the single-stage power chain.
//!
//! The chain is full bridge, LLC tank, high-frequency transformer, diode
//! rectifier, series-stacked output capacitors, line-frequency unfolder, filter
//! inductor and a stiff grid. The two input-parallel/output-series modules are
//! identical, so one equivalent module is integrated: the stack voltage sits
//! on the filter capacitor `Cf` and each module sees `v_Cout / n_series` at
//! its secondary.
//!
//! Two integrators share the controller:
//! * [`SimMode::Switched`] resolves every bridge edge with a fixed-step RK4
//!   scheme on the piecewise-linear network (ideal switches and diodes, diode
//!   states re-evaluated each step);
//! * [`SimMode::Envelope`] replaces the tank by its quasi-static FHA gain and
//!   integrates only the filter and grid.

mod control;
mod envelope;
mod schedule;
mod switched;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{FilterDesign, GridSpec};
use crate::fha::{FhaError, ResonantTank};

pub use control::{controller_step, ControlGains, ControllerCommand, CurrentRegulator, LoadEstimate};
pub use envelope::{envelope_simulate, envelope_source_voltage};
pub use schedule::{Schedule, Segment, PRESET_BOUNDARIES, PRESET_NAMES};
pub use switched::switched_simulate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("numeric blow-up after t = {last_good_t} s")]
    Numeric { last_good_t: f64 },
    #[error(transparent)]
    Fha(#[from] FhaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    #[default]
    Switched,
    Envelope,
}

impl std::str::FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "switched" => Ok(SimMode::Switched),
            "envelope" => Ok(SimMode::Envelope),
            other => Err(format!("unknown mode `{other}` (expected switched|envelope)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: SimMode,
    /// Integration step. Switched mode requires at least 100 steps per
    /// switching period at `fs_max`.
    pub dt: f64,
    /// Stop time; `None` runs the whole schedule.
    pub duration: Option<f64>,
    /// Minimum |i_Lr| at a turn-on instant for it to count as ZVS.
    pub zvs_current_threshold: f64,
    pub fs_min: f64,
    pub fs_max: f64,
    pub n_series: u32,
    /// Output samples per grid period. Integer so THD windows land on
    /// whole periods.
    pub samples_per_cycle: u32,
    pub control: ControlGains,
}

/// Default output samples per grid period in switched mode.
pub const SWITCHED_SAMPLES_PER_CYCLE: u32 = 4000;
/// Default output samples per grid period in envelope mode, where one
/// step is taken per sample.
pub const ENVELOPE_SAMPLES_PER_CYCLE: u32 = 2000;

impl SimConfig {
    pub fn switched(fs_min: f64, fs_max: f64) -> Self {
        Self {
            mode: SimMode::Switched,
            dt: 1.0 / (200.0 * fs_max),
            duration: None,
            zvs_current_threshold: 0.0,
            fs_min,
            fs_max,
            n_series: 2,
            samples_per_cycle: SWITCHED_SAMPLES_PER_CYCLE,
            control: ControlGains::default(),
        }
    }

    /// Envelope mode steps once per output sample.
    pub fn envelope(fs_min: f64, fs_max: f64, fg: f64) -> Self {
        Self::switched(fs_min, fs_max).with_mode(SimMode::Envelope, fg)
    }

    /// Switches mode, resetting `dt` and `samples_per_cycle` to that
    /// mode's defaults.
    pub fn with_mode(self, mode: SimMode, fg: f64) -> Self {
        let (dt, samples_per_cycle) = match mode {
            SimMode::Switched => (1.0 / (200.0 * self.fs_max), SWITCHED_SAMPLES_PER_CYCLE),
            SimMode::Envelope => (1.0 / (f64::from(ENVELOPE_SAMPLES_PER_CYCLE) * fg), ENVELOPE_SAMPLES_PER_CYCLE),
        };
        Self { mode, dt, samples_per_cycle, ..self }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.fs_min > 0.0 && self.fs_max > self.fs_min) {
            return Err(SimError::Config(format!("need 0 < fs_min < fs_max, got [{}, {}]", self.fs_min, self.fs_max)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.mode == SimMode::Switched && self.dt > 1.0 / (100.0 * self.fs_max) * (1.0 + 1e-9) {
            return Err(SimError::Config(format!(
                "dt = {} s gives fewer than 100 steps per switching period at {} Hz",
                self.dt, self.fs_max
            )));
        }
        if self.n_series == 0 {
            return Err(SimError::Config("n_series must be at least 1".into()));
        }
        if self.samples_per_cycle < 16 {
            return Err(SimError::Config("samples_per_cycle must be at least 16".into()));
        }
        if let Some(d) = self.duration {
            if !(d >= 0.0) {
                return Err(SimError::Config(format!("duration must be >= 0, got {d}")));
            }
        }
        if !(self.zvs_current_threshold >= 0.0) {
            return Err(SimError::Config("zvs_current_threshold must be >= 0".into()));
        }
        self.control.validate()
    }

    pub fn fs_range(&self) -> (f64, f64) {
        (self.fs_min, self.fs_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leg {
    A,
    B,
}

/// A primary-bridge turn-on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    /// Tank current at the instant, positive out of leg A.
    pub i_lr: f64,
    pub leg: Leg,
    /// Whether the switching node moves up (upper switch turns on).
    pub rising: bool,
    /// Sign of `i_lr` that discharges the incoming switch's node.
    pub required_sign: i8,
    pub fs: f64,
    pub phi: f64,
    pub zvs: bool,
}

impl SwitchEvent {
    pub(crate) fn new(t: f64, i_lr: f64, leg: Leg, rising: bool, fs: f64, phi: f64, threshold: f64) -> Self {
        // leg A's tank current leaves the node, leg B's enters it
        let required_sign = match (leg, rising) {
            (Leg::A, true) | (Leg::B, false) => -1,
            (Leg::A, false) | (Leg::B, true) => 1,
        };
        let mut ev = Self { t, i_lr, leg, rising, required_sign, fs, phi, zvs: false };
        ev.zvs = zvs_classify(&ev, threshold);
        ev
    }
}

/// Polarity-based soft-switching test. A current of exactly zero never
/// qualifies.
pub fn zvs_classify(event: &SwitchEvent, threshold: f64) -> bool {
    let i = event.i_lr * f64::from(event.required_sign);
    i > 0.0 && i >= threshold
}

/// Column order of [`Channels`] as exported.
pub const CHANNEL_NAMES: [&str; 13] = [
    "t",
    "i_lr",
    "v_cr",
    "i_lm",
    "v_cout",
    "i_grid",
    "i_ref",
    "v_grid",
    "fs_cmd",
    "phi_cmd",
    "unfolder_polarity",
    "e_in",
    "e_out",
];

/// Uniformly sampled waveforms. In envelope mode `i_lr`, `v_cr` and `i_lm`
/// hold FHA peak amplitudes rather than instantaneous values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Channels {
    pub t: Vec<f64>,
    pub i_lr: Vec<f64>,
    pub v_cr: Vec<f64>,
    pub i_lm: Vec<f64>,
    pub v_cout: Vec<f64>,
    pub i_grid: Vec<f64>,
    pub i_ref: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub fs_cmd: Vec<f64>,
    pub phi_cmd: Vec<f64>,
    pub unfolder_polarity: Vec<f64>,
    /// Cumulative energy drawn from the DC input.
    pub e_in: Vec<f64>,
    /// Cumulative energy delivered to the grid.
    pub e_out: Vec<f64>,
}

impl Channels {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn columns(&self) -> [&[f64]; 13] {
        [
            &self.t,
            &self.i_lr,
            &self.v_cr,
            &self.i_lm,
            &self.v_cout,
            &self.i_grid,
            &self.i_ref,
            &self.v_grid,
            &self.fs_cmd,
            &self.phi_cmd,
            &self.unfolder_polarity,
            &self.e_in,
            &self.e_out,
        ]
    }

    pub(crate) fn reserve(&mut self, n: usize) {
        for c in [
            &mut self.t,
            &mut self.i_lr,
            &mut self.v_cr,
            &mut self.i_lm,
            &mut self.v_cout,
            &mut self.i_grid,
            &mut self.i_ref,
            &mut self.v_grid,
            &mut self.fs_cmd,
            &mut self.phi_cmd,
            &mut self.unfolder_polarity,
            &mut self.e_in,
            &mut self.e_out,
        ] {
            c.reserve(n);
        }
    }

    pub(crate) fn push(&mut self, row: [f64; 13]) {
        let cols = [
            &mut self.t,
            &mut self.i_lr,
            &mut self.v_cr,
            &mut self.i_lm,
            &mut self.v_cout,
            &mut self.i_grid,
            &mut self.i_ref,
            &mut self.v_grid,
            &mut self.fs_cmd,
            &mut self.phi_cmd,
            &mut self.unfolder_polarity,
            &mut self.e_in,
            &mut self.e_out,
        ];
        for (c, v) in cols.into_iter().zip(row) {
            c.push(v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub mode: SimMode,
    pub sample_interval: f64,
    pub fg: f64,
    pub channels: Channels,
    pub events: Vec<SwitchEvent>,
    /// Controller updates whose gain demand exceeded the curve at `fs_min`.
    pub saturated_updates: u64,
    pub controller_updates: u64,
    /// Integration steps taken.
    pub steps: u64,
}

impl SimOutput {
    pub(crate) fn empty(mode: SimMode, sample_interval: f64, fg: f64) -> Self {
        Self {
            mode,
            sample_interval,
            fg,
            channels: Channels::default(),
            events: Vec::new(),
            saturated_updates: 0,
            controller_updates: 0,
            steps: 0,
        }
    }

    /// Sample index at or before `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let i = (t / self.sample_interval + 1e-9).floor();
        (i.max(0.0) as usize).min(self.channels.len().saturating_sub(1))
    }

    pub fn duration(&self) -> f64 {
        self.channels.t.last().copied().unwrap_or(0.0)
    }
}

/// Runs the integrator selected by `config.mode`.
pub fn simulate(
    tank: &ResonantTank,
    filter: &FilterDesign,
    grid: &GridSpec,
    schedule: &Schedule,
    config: &SimConfig,
) -> Result<SimOutput, SimError> {
    match config.mode {
        SimMode::Switched => switched_simulate(tank, filter, grid, schedule, config),
        SimMode::Envelope => envelope_simulate(tank, filter, grid, schedule, config),
    }
}

/// Shared validation and end-time computation.
pub(crate) fn prepare(
    tank: &ResonantTank,
    filter: &FilterDesign,
    grid: &GridSpec,
    config: &SimConfig,
    schedule: &Schedule,
) -> Result<f64, SimError> {
    tank.validate()?;
    config.validate()?;
    grid.validate().map_err(|e| SimError::Config(e.to_string()))?;
    filter.validate().map_err(|e| SimError::Config(e.to_string()))?;
    let end = config.duration.map_or(schedule.duration(), |d| d.min(schedule.duration()));
    Ok(end)
}

/// Next multiple of `period` strictly after `t` (with a small tolerance).
pub(crate) fn next_multiple(t: f64, period: f64) -> f64 {
    let k = (t / period + 1e-9).floor() + 1.0;
    k * period
}
