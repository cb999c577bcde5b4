//! Hybrid frequency / phase-shift modulation and the grid-current regulator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::design::GridSpec;
use crate::fha::{self, ResonantTank};

/// Frequency and phase shift for one modulator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerCommand {
    pub fs: f64,
    pub phi: f64,
    /// The demanded gain was above the curve at `fs_min`.
    pub saturated: bool,
}

/// Maps a per-module output-voltage demand to `(fs, phi)`.
///
/// Gains reachable by frequency alone are realised with `phi = 0` somewhere
/// in `fs_range`; anything lower parks the bridge at `fs_max` and removes
/// the rest with phase shift, down to `phi = pi` for zero demand.
pub fn controller_step(
    v_ref_envelope: f64,
    vin: f64,
    tank: &ResonantTank,
    q_est: f64,
    fs_range: (f64, f64),
) -> Result<ControllerCommand, SimError> {
    Modulator::new(tank, q_est, fs_range)?.command(v_ref_envelope, vin)
}

/// [`controller_step`] with the gain-curve end points cached for one load
/// estimate and the frequency inversion warm-started from the last update.
#[derive(Debug, Clone)]
pub(crate) struct Modulator {
    tank: ResonantTank,
    q: f64,
    fs_range: (f64, f64),
    g_at_fs_max: f64,
    g_at_fs_min: f64,
    last_fs: Option<f64>,
}

impl Modulator {
    pub(crate) fn new(tank: &ResonantTank, q: f64, fs_range: (f64, f64)) -> Result<Self, SimError> {
        let (fs_min, fs_max) = fs_range;
        if !(fs_min > 0.0 && fs_max > fs_min) {
            return Err(fha::FhaError::BadRange(fs_min, fs_max).into());
        }
        let fr1 = tank.fr1();
        Ok(Self {
            tank: *tank,
            q,
            fs_range,
            g_at_fs_max: fha::gain_fha(tank, q, fs_max / fr1)?,
            g_at_fs_min: fha::gain_fha(tank, q, fs_min / fr1)?,
            last_fs: None,
        })
    }

    pub(crate) fn command(&mut self, v_ref_envelope: f64, vin: f64) -> Result<ControllerCommand, SimError> {
        if !(v_ref_envelope >= 0.0) {
            return Err(SimError::Config(format!("negative voltage demand {v_ref_envelope}")));
        }
        fha::positive("Vin", vin)?;
        let (fs_min, fs_max) = self.fs_range;
        let g = v_ref_envelope / vin;
        if g >= self.g_at_fs_max {
            if g > self.g_at_fs_min {
                return Ok(ControllerCommand { fs: fs_min, phi: 0.0, saturated: true });
            }
            let fs = if g == self.g_at_fs_max {
                fs_max
            } else if g == self.g_at_fs_min {
                fs_min
            } else {
                fha::invert_gain_bracketed(&self.tank, self.q, g, self.fs_range, self.last_fs)
            };
            self.last_fs = Some(fs);
            Ok(ControllerCommand { fs, phi: 0.0, saturated: false })
        } else {
            let ratio = (g / self.g_at_fs_max).clamp(0.0, 1.0);
            Ok(ControllerCommand { fs: fs_max, phi: 2.0 * ratio.acos(), saturated: false })
        }
    }
}

/// The load one module sees when the grid current tracks `ipeak` in phase
/// with the grid voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadEstimate {
    pub rac: f64,
    pub q: f64,
}

impl LoadEstimate {
    pub fn new(tank: &ResonantTank, grid: &GridSpec, n_series: u32, ipeak: f64) -> Self {
        if !(ipeak > 0.0) {
            return Self { rac: f64::INFINITY, q: 0.0 };
        }
        // instantaneous v/i is constant over the line cycle
        let ro = grid.vm() / (f64::from(n_series) * ipeak);
        let rac = 8.0 * ro / (PI * PI * tank.n * tank.n);
        Self { rac, q: tank.characteristic_impedance() / rac }
    }
}

/// One [`Modulator`] per load level, rebuilt when the demand changes.
#[derive(Debug, Clone)]
pub(crate) struct ModulatorCache {
    tank: ResonantTank,
    grid: GridSpec,
    n_series: u32,
    fs_range: (f64, f64),
    current: Option<(f64, Modulator)>,
}

impl ModulatorCache {
    pub(crate) fn new(tank: &ResonantTank, grid: &GridSpec, n_series: u32, fs_range: (f64, f64)) -> Self {
        Self { tank: *tank, grid: *grid, n_series, fs_range, current: None }
    }

    pub(crate) fn for_ipeak(&mut self, ipeak: f64) -> Result<&mut Modulator, SimError> {
        let stale = !matches!(self.current, Some((ip, _)) if ip == ipeak);
        if stale {
            let load = LoadEstimate::new(&self.tank, &self.grid, self.n_series, ipeak);
            self.current = Some((ipeak, Modulator::new(&self.tank, load.q, self.fs_range)?));
        }
        Ok(&mut self.current.as_mut().expect("just filled").1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// Crossover of the proportional current loop in hertz; the gain is
    /// `2 pi bandwidth Lf` volts per amp.
    pub bandwidth: f64,
    /// Time constant of the in-phase / quadrature amplitude trim.
    pub trim_tau: f64,
    /// Trim authority as a fraction of the grid peak voltage.
    pub trim_limit: f64,
    /// Highest odd grid harmonic given its own trim pair; 1 trims the
    /// fundamental only.
    pub trim_harmonics: u32,
}

/// Odd harmonics 1, 3, ..., 2 * MAX_TRIMS - 1 can carry trims.
const MAX_TRIMS: usize = 8;

impl Default for ControlGains {
    fn default() -> Self {
        Self { bandwidth: 2e3, trim_tau: 5e-3, trim_limit: 0.25, trim_harmonics: 1 }
    }
}

impl ControlGains {
    /// Fundamental plus third-harmonic trims with full-scale authority,
    /// for light-load operation where the envelope gain model is poorest.
    pub fn harmonic() -> Self {
        Self { trim_limit: 1.0, trim_harmonics: 3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let odd = self.trim_harmonics % 2 == 1 && (self.trim_harmonics as usize) < 2 * MAX_TRIMS;
        if !(self.bandwidth >= 0.0 && self.trim_tau > 0.0 && self.trim_limit >= 0.0 && odd) {
            return Err(SimError::Config(format!("invalid control gains {self:?}")));
        }
        Ok(())
    }
}

/// Feedforward plus proportional regulator for the injected grid current,
/// with slow integral trims on the in-phase and quadrature error
/// components of the fundamental and, optionally, low odd harmonics.
#[derive(Debug, Clone)]
pub struct CurrentRegulator {
    gains: ControlGains,
    /// `(in-phase, quadrature)` per odd harmonic.
    trims: [(f64, f64); MAX_TRIMS],
    last_t: Option<f64>,
}

impl CurrentRegulator {
    pub fn new(gains: ControlGains) -> Self {
        Self { gains, trims: [(0.0, 0.0); MAX_TRIMS], last_t: None }
    }

    /// Stack voltage to place on the filter capacitor at `t`, never negative.
    pub fn bus_command(&mut self, t: f64, i_meas: f64, ipeak: f64, lf: f64, grid: &GridSpec) -> f64 {
        let w = 2.0 * PI * grid.fg;
        let (s, c) = (w * t).sin_cos();
        let vm = grid.vm();
        let err = ipeak * s - i_meas;
        let dt = self.last_t.map_or(0.0, |t0| t - t0);
        self.last_t = Some(t);
        let kp = 2.0 * PI * self.gains.bandwidth * lf;
        // the converter looks like a current source into the stack load
        // `vm / ipeak`, so the trim gain includes it to keep trim_tau
        let r_load = if ipeak > 0.0 { vm / ipeak } else { 0.0 };
        let ki = (r_load + kp) / self.gains.trim_tau;
        let lim = self.gains.trim_limit * vm;
        let n = (self.gains.trim_harmonics as usize).div_ceil(2).min(MAX_TRIMS);
        let mut v_ac = vm * s + lf * ipeak * w * c + kp * err;
        // sin and cos of k w t for odd k by the angle-addition recurrence
        let (s2, c2) = (2.0 * s * c, c * c - s * s);
        let (mut sk, mut ck) = (s, c);
        for (a, b) in self.trims.iter_mut().take(n) {
            *a = (*a + ki * 2.0 * err * sk * dt).clamp(-lim, lim);
            *b = (*b + ki * 2.0 * err * ck * dt).clamp(-lim, lim);
            v_ac += *a * sk + *b * ck;
            (sk, ck) = (sk * c2 + ck * s2, ck * c2 - sk * s2);
        }
        (grid.polarity(t) * v_ac).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fha::gain_fha;

    fn table1() -> ResonantTank {
        ResonantTank::new(4e-6, 3.3e-6, 100e-6, 10.0).unwrap()
    }

    #[test]
    fn zero_demand_is_full_phase_shift_at_fs_max() {
        let cmd = controller_step(0.0, 600.0, &table1(), 1.4, (45e3, 70e3)).unwrap();
        assert_eq!(cmd.fs, 70e3);
        assert!((cmd.phi - PI).abs() < 1e-12);
    }

    #[test]
    fn peak_demand_at_600v_sits_near_resonance() {
        let t = table1();
        let grid = GridSpec::table1();
        let load = LoadEstimate::new(&t, &grid, 2, 60.0);
        let v_peak = grid.vm() / 2.0;
        let c1 = controller_step(v_peak, 600.0, &t, load.q, (45e3, 70e3)).unwrap();
        assert_eq!(c1.phi, 0.0);
        assert!(!c1.saturated);
        assert!(c1.fs < 1.15 * t.fr1(), "fs = {}", c1.fs);
        let c2 = controller_step(v_peak, 850.0, &t, load.q, (45e3, 70e3)).unwrap();
        assert!(c2.fs > c1.fs || c2.phi > c1.phi);
        assert!(c2.fs > t.fr1());
    }

    #[test]
    fn over_demand_saturates_at_fs_min() {
        let t = table1();
        let cmd = controller_step(20.0 * 600.0, 600.0, &t, 1.0, (45e3, 70e3)).unwrap();
        assert!(cmd.saturated);
        assert_eq!((cmd.fs, cmd.phi), (45e3, 0.0));
    }

    #[test]
    fn realised_gain_matches_demand() {
        let t = table1();
        let q = 0.8;
        for g in [1.0, 4.0, 8.0, 9.5, 9.9] {
            let cmd = controller_step(g * 700.0, 700.0, &t, q, (45e3, 70e3)).unwrap();
            let m = gain_fha(&t, q, cmd.fs / t.fr1()).unwrap() * (cmd.phi / 2.0).cos();
            assert!((m - g).abs() < 1e-7 * g, "g={g} m={m}");
        }
    }

    #[test]
    fn full_load_estimate_matches_hand_chain() {
        let load = LoadEstimate::new(&table1(), &GridSpec::table1(), 2, 59.16);
        assert!((load.rac - 0.7717).abs() < 2e-3, "{}", load.rac);
        assert!(LoadEstimate::new(&table1(), &GridSpec::table1(), 2, 0.0).q == 0.0);
    }

    #[test]
    fn regulator_never_commands_negative_bus() {
        let grid = GridSpec::table1();
        let mut reg = CurrentRegulator::new(ControlGains::default());
        for k in 0..2000 {
            let t = k as f64 * 1e-5;
            assert!(reg.bus_command(t, 0.0, 60.0, 16e-3, &grid) >= 0.0);
        }
    }
}
