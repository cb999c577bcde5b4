//! Quasi-static FHA model for the design-loop inner checks.
//!
//! At each step the bridge fundamental, the series branch and the
//! magnetizing inductance are reduced to a Thevenin source `Vth` behind the
//! reactance `Zth`. The rectifier presents its fundamental `Vp1`, in phase
//! with its current, so the rectifier current amplitude is
//! `sqrt(Vth^2 - Vp1^2) / |Zth|` and it blocks once the bus exceeds the
//! no-load voltage. Against a resistive load this reproduces the FHA gain
//! exactly. The stiff bus node is stepped implicitly; the filter Lf-Cf pair
//! uses the trapezoidal rule, so it rings undamped while the rectifier
//! blocks.

use std::f64::consts::PI;

use super::control::{CurrentRegulator, ModulatorCache};
use super::{prepare, Leg, Schedule, SimConfig, SimError, SimMode, SimOutput, SwitchEvent};
use crate::design::{FilterDesign, GridSpec};
use crate::fha::{self, ResonantTank};

const T_EPS: f64 = 1e-13;

/// Quasi-static output voltage of one module: `M(Q, fs) * cos(phi/2) * Vin`.
pub fn envelope_source_voltage(tank: &ResonantTank, q: f64, fs: f64, phi: f64, vin: f64) -> Result<f64, SimError> {
    let m = fha::gain_fha(tank, q, fs / tank.fr1())?;
    Ok(fha::gain_with_phase_shift(m, phi)? * vin)
}

/// FHA operating point of one module at a fixed `(fs, phi, Vin)`. Every
/// impedance is a pure reactance, held as a real number of ohms.
#[derive(Debug, Clone, Copy)]
struct Thevenin {
    /// Series branch reactance `w Lr - 1 / (w Cr)`.
    xs: f64,
    /// Magnetizing reactance `w Lm`.
    xm: f64,
    /// Reactance of the resonant capacitor.
    xc: f64,
    vth: f64,
    zth: f64,
    /// Bus voltage to rectifier fundamental: `4 / (pi n_series N)`.
    a: f64,
    /// Primary amplitude to averaged module output current: `2 / (pi N)`.
    b: f64,
}

impl Thevenin {
    fn new(tank: &ResonantTank, n_series: f64, fs: f64, phi: f64, vin: f64) -> Self {
        let w = 2.0 * PI * fs;
        let xc = 1.0 / (w * tank.cr);
        let xs = w * tank.lr - xc;
        let xm = w * tank.lm;
        let v1 = 4.0 / PI * vin * (phi / 2.0).cos();
        let sum = xs + xm;
        let vth = (v1 * xm / sum).abs();
        let zth = (xs * xm / sum).abs().max(1e-12);
        Self { xs, xm, xc, vth, zth, a: 4.0 / (PI * n_series * tank.n), b: 2.0 / (PI * tank.n) }
    }

    /// Magnetizing-node voltage and rectifier current amplitudes at `v_bus`.
    fn branch(&self, v_bus: f64) -> (f64, f64) {
        let vp1 = self.a * v_bus.max(0.0);
        let vmag = vp1.min(self.vth);
        (vmag, (self.vth * self.vth - vmag * vmag).max(0.0).sqrt() / self.zth)
    }

    /// Averaged output current.
    fn output(&self, v_bus: f64) -> f64 {
        self.b * self.branch(v_bus).1
    }

    /// Peak tank current, capacitor voltage and magnetizing current, plus
    /// `(cos, sin)` of the lag of the tank current behind the bridge
    /// fundamental.
    fn phasors(&self, v_bus: f64) -> ([f64; 3], (f64, f64)) {
        let (vmag, id) = self.branch(v_bus);
        // rectifier voltage on the real axis; i_lr = id - j im
        let im = vmag / self.xm;
        let (v1_re, v1_im) = (vmag + self.xs * im, self.xs * id);
        // v1 * conj(i_lr)
        let (z_re, z_im) = (v1_re * id - v1_im * im, v1_im * id + v1_re * im);
        let zn = (z_re * z_re + z_im * z_im).sqrt();
        let lag = if zn > 0.0 { (z_re / zn, z_im / zn) } else { (0.0, 1.0) };
        let amp = (id * id + im * im).sqrt();
        ([amp, amp * self.xc, im], lag)
    }
}

pub fn envelope_simulate(
    tank: &ResonantTank,
    filter: &FilterDesign,
    grid: &GridSpec,
    schedule: &Schedule,
    config: &SimConfig,
) -> Result<SimOutput, SimError> {
    if config.mode != SimMode::Envelope {
        return Err(SimError::Config("envelope_simulate called with switched config".into()));
    }
    let t_end = prepare(tank, filter, grid, config, schedule)?;
    let ts = 1.0 / (f64::from(config.samples_per_cycle) * grid.fg);
    let mut out = SimOutput::empty(SimMode::Envelope, ts, grid.fg);
    if schedule.is_empty() || t_end <= 0.0 {
        return Ok(out);
    }
    let n_samples = (t_end / ts).ceil() as usize + 1;
    out.channels.reserve(n_samples);
    out.events.reserve(2 * (t_end * config.fs_max).ceil() as usize + 8);
    let n_series = f64::from(config.n_series);
    let (cf, lf) = (filter.cf, filter.lf);
    let vm = grid.vm();
    let wg = 2.0 * PI * grid.fg;
    let half_grid = 0.5 / grid.fg;
    let thr = config.zvs_current_threshold;
    let mut reg = CurrentRegulator::new(config.control);
    let mut modulators = ModulatorCache::new(tank, grid, config.n_series, config.fs_range());

    let (mut v_bus, mut i_lf, mut e_in, mut e_out) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    let mut t = 0.0;
    let mut sin_t = 0.0;
    let mut next_sample_idx: u64 = 0;
    let mut tank_amps = [0.0; 3];
    let (mut fs_cmd, mut phi_cmd) = (config.fs_max, PI);
    let mut th: Option<Thevenin> = None;
    let mut updated = false;
    // the modulator updates once per switching half period
    let mut next_update = 0.0;
    let segments = schedule.segments();
    let mut seg_idx = 0;
    let mut seg_entered = true;
    // grid half cycle index, tracked instead of recomputed per step
    let mut half_idx: u64 = 0;
    let mut next_half = half_grid;

    loop {
        while seg_idx + 1 < segments.len() && segments[seg_idx].t_end <= t + T_EPS {
            seg_idx += 1;
            seg_entered = true;
        }
        while next_half <= t + T_EPS {
            half_idx += 1;
            next_half = (half_idx + 1) as f64 * half_grid;
        }
        let seg = segments[seg_idx];
        let polarity = if half_idx.is_multiple_of(2) { 1.0 } else { -1.0 };
        if next_sample_idx as f64 * ts <= t + T_EPS {
            out.channels.push([
                t,
                tank_amps[0],
                tank_amps[1],
                tank_amps[2],
                v_bus,
                i_lf,
                seg.ipeak * sin_t,
                vm * sin_t,
                fs_cmd,
                phi_cmd,
                polarity,
                e_in,
                e_out,
            ]);
            next_sample_idx += 1;
        }
        if t >= t_end - T_EPS {
            break;
        }

        let t_next = (t + config.dt).min(next_sample_idx as f64 * ts).min(next_half).min(seg.t_end.min(t_end));
        let h = t_next - t;
        if h <= T_EPS {
            t = t_next.max(t);
            sin_t = (wg * t).sin();
            continue;
        }

        if seg_entered || t + T_EPS >= next_update {
            seg_entered = false;
            let v_cmd = reg.bus_command(t, i_lf, seg.ipeak, lf, grid);
            let cmd = modulators.for_ipeak(seg.ipeak)?.command(v_cmd / n_series, seg.vin)?;
            out.controller_updates += 1;
            if cmd.saturated {
                out.saturated_updates += 1;
            }
            fs_cmd = cmd.fs;
            phi_cmd = cmd.phi;
            next_update = t + 0.5 / cmd.fs;
            th = Some(Thevenin::new(tank, n_series, cmd.fs, cmd.phi, seg.vin));
            updated = true;
        }
        let op = th.expect("operating point set");

        let sin_next = (wg * t_next).sin();
        let p = polarity;
        let (vg0, vg1) = (vm * sin_t, vm * sin_next);
        let i_next = |v1: f64| i_lf + h / (2.0 * lf) * (p * (v_bus + v1) - vg0 - vg1);
        // bus charge balance without the rectifier; increasing in the new voltage
        let slope_lin = cf / h + h / (4.0 * lf);
        let resid_lin = |v1: f64| cf * (v1 - v_bus) / h + p * 0.5 * (i_lf + i_next(v1));
        let v_nl = op.vth / op.a;
        let f_nl = resid_lin(v_nl);
        let v1 = if f_nl <= 0.0 {
            // the rectifier blocks above the no-load voltage
            v_nl - f_nl / slope_lin
        } else {
            // conducting: the linear balance `b y = slope_lin v + c0` meets
            // `a^2 v^2 + zth^2 y^2 = vth^2` at the larger root in `y`
            let y = conduction_root(&op, slope_lin, resid_lin(0.0));
            (op.vth * op.vth - op.zth * op.zth * y * y).max(0.0).sqrt() / op.a
        };
        let i1 = i_next(v1);
        let io = op.output(v1);
        if !(v1.is_finite() && i1.is_finite()) {
            return Err(SimError::Numeric { last_good_t: t });
        }
        if updated {
            // tank phasors at the operating point this step settles to
            updated = false;
            let (amps, (cos_th, sin_th)) = op.phasors(v1);
            tank_amps = amps;
            let (sh, ch) = (phi_cmd / 2.0).sin_cos();
            // leading-leg rise at -phi/2 and lagging-leg fall at +phi/2
            // relative to the fundamental
            let i_lead = -amps[0] * (sh * cos_th + ch * sin_th);
            let i_lag = amps[0] * (sh * cos_th - ch * sin_th);
            out.events.push(SwitchEvent::new(t, i_lead, Leg::A, true, fs_cmd, phi_cmd, thr));
            out.events.push(SwitchEvent::new(t, i_lag, Leg::B, false, fs_cmd, phi_cmd, thr));
        }
        e_in += h * v1 * io;
        e_out += 0.5 * h * (vg0 * i_lf + vg1 * i1);
        v_bus = v1;
        i_lf = i1;
        t = t_next;
        sin_t = sin_next;
        out.steps += 1;
    }
    Ok(out)
}

/// Rectifier current amplitude where the bus balance `b y = s v + c0`
/// crosses the rectifier characteristic, clamped to `[0, vth / zth]`.
fn conduction_root(op: &Thevenin, s: f64, c0: f64) -> f64 {
    let k = op.a / s;
    let qa = k * k * op.b * op.b + op.zth * op.zth;
    let qb = -2.0 * k * k * op.b * c0;
    let qc = k * k * c0 * c0 - op.vth * op.vth;
    let sq = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    let y = if qb <= 0.0 { (-qb + sq) / (2.0 * qa) } else { 2.0 * qc / (-qb - sq) };
    y.clamp(0.0, op.vth / op.zth)
}
