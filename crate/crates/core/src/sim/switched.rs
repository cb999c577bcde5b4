//! Fixed-step RK4 integration of the switched network.
//!
//! Steps are shortened so that bridge edges, unfolder flips, schedule
//! boundaries and output samples always fall on step boundaries. Within a
//! step the bridge voltage, unfolder polarity and rectifier state are frozen.

use std::f64::consts::PI;

use super::control::{CurrentRegulator, ModulatorCache};
use super::{next_multiple, prepare, Leg, Schedule, SimConfig, SimError, SimMode, SimOutput, SwitchEvent};
use crate::design::{FilterDesign, GridSpec};
use crate::fha::ResonantTank;

const I_LR: usize = 0;
const V_CR: usize = 1;
const I_LM: usize = 2;
const V_BUS: usize = 3;
const I_LF: usize = 4;
const E_IN: usize = 5;
const E_OUT: usize = 6;
const NSTATE: usize = 7;

type State = [f64; NSTATE];

/// Coincidence tolerance for event times.
const T_EPS: f64 = 1e-13;

#[derive(Clone, Copy)]
struct Network {
    lr: f64,
    cr: f64,
    lm: f64,
    /// `n_series * N`: stack voltage over primary clamp voltage.
    ratio: f64,
    n: f64,
    cf: f64,
    lf: f64,
    vm: f64,
    w_grid: f64,
    n_series: f64,
}

/// Rectifier conduction: +1, -1 or 0 (blocking).
type Diode = i8;

#[derive(Clone, Copy)]
struct Inputs {
    v_ab: f64,
    polarity: f64,
    diode: Diode,
}

impl Network {
    fn deriv(&self, x: &State, t: f64, u: Inputs) -> State {
        let vg = self.vm * (self.w_grid * t).sin();
        let v_bus = x[V_BUS].max(0.0);
        let (di_lr, di_lm, i_rect) = if u.diode == 0 {
            let di = (u.v_ab - x[V_CR]) / (self.lr + self.lm);
            (di, di, 0.0)
        } else {
            let d = f64::from(u.diode);
            let vp = d * v_bus / self.ratio;
            ((u.v_ab - x[V_CR] - vp) / self.lr, vp / self.lm, d * (x[I_LR] - x[I_LM]) / self.n)
        };
        let mut dv_bus = (i_rect - u.polarity * x[I_LF]) / self.cf;
        if x[V_BUS] <= 0.0 && dv_bus < 0.0 {
            // rectifier and unfolder diodes clamp the stack at zero
            dv_bus = 0.0;
        }
        [
            di_lr,
            x[I_LR] / self.cr,
            di_lm,
            dv_bus,
            (u.polarity * v_bus - vg) / self.lf,
            self.n_series * u.v_ab * x[I_LR],
            vg * x[I_LF],
        ]
    }

    /// Picks the rectifier state for the coming step, merging the tank and
    /// magnetizing currents when the rectifier current has died out.
    fn select_diode(&self, x: &mut State, v_ab: f64, current: Diode) -> Diode {
        let id = x[I_LR] - x[I_LM];
        if current != 0 && f64::from(current) * id > 0.0 {
            return current;
        }
        if current != 0 {
            // flux-conserving merge onto the series path
            let i = (self.lr * x[I_LR] + self.lm * x[I_LM]) / (self.lr + self.lm);
            x[I_LR] = i;
            x[I_LM] = i;
        }
        let clamp = x[V_BUS].max(0.0) / self.ratio;
        let v_free = self.lm / (self.lr + self.lm) * (v_ab - x[V_CR]);
        if v_free > clamp {
            1
        } else if v_free < -clamp {
            -1
        } else {
            0
        }
    }

    fn rk4(&self, x: &State, t: f64, h: f64, u: Inputs) -> State {
        let add = |a: &State, k: &State, s: f64| -> State {
            let mut r = *a;
            for i in 0..NSTATE {
                r[i] += s * k[i];
            }
            r
        };
        let k1 = self.deriv(x, t, u);
        let k2 = self.deriv(&add(x, &k1, h / 2.0), t + h / 2.0, u);
        let k3 = self.deriv(&add(x, &k2, h / 2.0), t + h / 2.0, u);
        let k4 = self.deriv(&add(x, &k3, h), t + h, u);
        let mut r = *x;
        for i in 0..NSTATE {
            r[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if u.diode == 0 {
            r[I_LM] = r[I_LR];
        }
        r[V_BUS] = r[V_BUS].max(0.0);
        r
    }
}

/// One half switching period of the modulator.
struct HalfPeriod {
    start: f64,
    len: f64,
    /// +1 drives v_ab positive during this half period.
    sign: f64,
    fs: f64,
    phi: f64,
    lag_edge: Option<f64>,
}

pub fn switched_simulate(
    tank: &ResonantTank,
    filter: &FilterDesign,
    grid: &GridSpec,
    schedule: &Schedule,
    config: &SimConfig,
) -> Result<SimOutput, SimError> {
    if config.mode != SimMode::Switched {
        return Err(SimError::Config("switched_simulate called with envelope config".into()));
    }
    let t_end = prepare(tank, filter, grid, config, schedule)?;
    let ts = 1.0 / (f64::from(config.samples_per_cycle) * grid.fg);
    let mut out = SimOutput::empty(SimMode::Switched, ts, grid.fg);
    if schedule.is_empty() || t_end <= 0.0 {
        return Ok(out);
    }
    out.channels.reserve((t_end / ts).ceil() as usize + 1);
    out.events.reserve(2 * (t_end * config.fs_max).ceil() as usize + 8);

    let net = Network {
        lr: tank.lr,
        cr: tank.cr,
        lm: tank.lm,
        ratio: f64::from(config.n_series) * tank.n,
        n: tank.n,
        cf: filter.cf,
        lf: filter.lf,
        vm: grid.vm(),
        w_grid: 2.0 * PI * grid.fg,
        n_series: f64::from(config.n_series),
    };
    let half_grid = 0.5 / grid.fg;
    let mut reg = CurrentRegulator::new(config.control);
    let mut modulators = ModulatorCache::new(tank, grid, config.n_series, config.fs_range());
    let mut x: State = [0.0; NSTATE];
    let mut t = 0.0;
    // leg states before t = 0: A low, B high
    let (mut leg_a, mut leg_b) = (false, true);
    let mut diode: Diode = 0;
    let mut half: Option<HalfPeriod> = None;
    let mut next_sample_idx: u64 = 0;
    let mut sign = 1.0;

    let record = |out: &mut SimOutput, t: f64, x: &State, hp: &Option<HalfPeriod>| {
        let seg = schedule.segment_at(t).expect("non-empty schedule");
        let (fs, phi) = hp.as_ref().map_or((config.fs_max, PI), |h| (h.fs, h.phi));
        out.channels.push([
            t,
            x[I_LR],
            x[V_CR],
            x[I_LM],
            x[V_BUS],
            x[I_LF],
            seg.ipeak * (net.w_grid * t).sin(),
            grid.v_grid(t),
            fs,
            phi,
            grid.polarity(t),
            x[E_IN],
            x[E_OUT],
        ]);
    };

    loop {
        // output sample due now
        let t_sample = next_sample_idx as f64 * ts;
        if t_sample <= t + T_EPS {
            record(&mut out, t, &x, &half);
            next_sample_idx += 1;
        }
        if t >= t_end - T_EPS {
            break;
        }

        // modulator: new half period
        let due = half.as_ref().is_none_or(|h| h.start + h.len <= t + T_EPS);
        if due {
            if let Some(h) = half.as_ref() {
                if let Some(te) = h.lag_edge {
                    if te <= t + T_EPS {
                        // phi = pi puts the lagging edge on the boundary
                        leg_b = h.sign < 0.0;
                        out.events.push(SwitchEvent::new(
                            t,
                            x[I_LR],
                            Leg::B,
                            leg_b,
                            h.fs,
                            h.phi,
                            config.zvs_current_threshold,
                        ));
                    }
                }
            }
            let seg = schedule.segment_at(t).expect("non-empty schedule");
            let v_bus_cmd = reg.bus_command(t, x[I_LF], seg.ipeak, filter.lf, grid);
            let cmd = modulators.for_ipeak(seg.ipeak)?.command(v_bus_cmd / f64::from(config.n_series), seg.vin)?;
            out.controller_updates += 1;
            if cmd.saturated {
                out.saturated_updates += 1;
            }
            let len = 0.5 / cmd.fs;
            let start = half.as_ref().map_or(0.0, |h| h.start + h.len);
            // leading leg A switches at the start of the half period
            leg_a = sign > 0.0;
            out.events.push(SwitchEvent::new(t, x[I_LR], Leg::A, leg_a, cmd.fs, cmd.phi, config.zvs_current_threshold));
            let lag = start + cmd.phi / PI * len;
            let mut hp = HalfPeriod { start, len, sign, fs: cmd.fs, phi: cmd.phi, lag_edge: Some(lag) };
            if lag <= t + T_EPS {
                leg_b = sign < 0.0;
                out.events.push(SwitchEvent::new(
                    t,
                    x[I_LR],
                    Leg::B,
                    leg_b,
                    cmd.fs,
                    cmd.phi,
                    config.zvs_current_threshold,
                ));
                hp.lag_edge = None;
            }
            half = Some(hp);
            sign = -sign;
        } else if let Some(h) = half.as_mut() {
            if let Some(te) = h.lag_edge {
                if te <= t + T_EPS {
                    leg_b = h.sign < 0.0;
                    out.events.push(SwitchEvent::new(
                        t,
                        x[I_LR],
                        Leg::B,
                        leg_b,
                        h.fs,
                        h.phi,
                        config.zvs_current_threshold,
                    ));
                    h.lag_edge = None;
                }
            }
        }

        let seg = *schedule.segment_at(t).expect("non-empty schedule");
        let h = half.as_ref().expect("modulator initialised");
        let mut t_next = (t + config.dt).min(h.start + h.len).min(t_end);
        if let Some(te) = h.lag_edge {
            t_next = t_next.min(te);
        }
        t_next = t_next.min(next_sample_idx as f64 * ts);
        t_next = t_next.min(next_multiple(t, half_grid));
        if let Some(b) = schedule.next_boundary(t + T_EPS) {
            t_next = t_next.min(b);
        }
        let step = t_next - t;
        if step <= T_EPS {
            // coincident events already handled; nudge onto the boundary
            t = t_next.max(t);
            continue;
        }

        let v_ab = seg.vin * (f64::from(u8::from(leg_a)) - f64::from(u8::from(leg_b)));
        diode = net.select_diode(&mut x, v_ab, diode);
        let polarity = grid.polarity(t + 0.5 * step);
        let next = net.rk4(&x, t, step, Inputs { v_ab, polarity, diode });
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Numeric { last_good_t: t });
        }
        x = next;
        t = t_next;
        out.steps += 1;
    }
    Ok(out)
}
