//! Scalar metrics extracted from a [`SimOutput`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Schedule, SimMode, SimOutput, SwitchEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("fundamental magnitude {0:e} is too small to normalise against")]
    UndefinedFundamental(f64),
    #[error("window of {samples} samples spans {periods} fundamental periods, not a whole number")]
    Window { samples: usize, periods: f64 },
    #[error("no switching events in the requested window")]
    NoEvents,
    #[error("not enough samples: {0}")]
    TooShort(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

pub const DEFAULT_HARMONICS: usize = 100;
pub const DEFAULT_THD_PERIODS: usize = 2;

/// Magnitude of the DFT at an exact bin, scaled to a sinusoid peak.
fn bin_magnitude(samples: &[f64], bin: usize) -> f64 {
    let n = samples.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &x) in samples.iter().enumerate() {
        // reduce the phase on integers to keep it exact for long windows
        let k = (bin * i) % n;
        let (s, c) = (2.0 * PI * k as f64 / n as f64).sin_cos();
        re += x * c;
        im -= x * s;
    }
    2.0 * (re * re + im * im).sqrt() / n as f64
}

/// Whole number of fundamental periods in `len` samples, or a window error.
fn whole_periods(len: usize, sample_interval: f64, fg: f64) -> Result<usize> {
    let periods = len as f64 * sample_interval * fg;
    let k = periods.round();
    if k < 1.0 || (periods - k).abs() > 1e-6 * k.max(1.0) {
        return Err(AnalysisError::Window { samples: len, periods });
    }
    Ok(k as usize)
}

/// Total harmonic distortion `sqrt(sum_{h=2..H} I_h^2) / I_1` from exact
/// harmonic bins of a rectangular window spanning whole periods.
pub fn thd(samples: &[f64], sample_interval: f64, fg: f64, harmonics: usize) -> Result<f64> {
    let periods = whole_periods(samples.len(), sample_interval, fg)?;
    let full_scale = samples.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    let fundamental = bin_magnitude(samples, periods);
    if !(fundamental > 1e-9 * full_scale) || fundamental == 0.0 {
        return Err(AnalysisError::UndefinedFundamental(fundamental));
    }
    let nyquist = samples.len() / 2;
    let sum: f64 = (2..=harmonics)
        .map(|h| h * periods)
        .take_while(|&bin| bin < nyquist)
        .map(|bin| bin_magnitude(samples, bin).powi(2))
        .sum();
    Ok(sum.sqrt() / fundamental)
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|x| x * x).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Largest magnitude in the series.
pub fn peak_stress(v_cr: &[f64]) -> f64 {
    v_cr.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

fn grouped_fraction(
    events: &[SwitchEvent],
    window: (f64, f64),
    fg: f64,
    pick: impl Fn(&SwitchEvent) -> bool,
) -> Result<f64> {
    let (t0, t1) = window;
    let mut groups: Vec<(i64, usize, usize)> = Vec::new();
    for e in events.iter().filter(|e| e.t >= t0 && e.t < t1) {
        let g = (e.t * 2.0 * fg).floor() as i64;
        match groups.last_mut() {
            Some((id, hit, total)) if *id == g => {
                *total += 1;
                *hit += usize::from(pick(e));
            }
            _ => groups.push((g, usize::from(pick(e)), 1)),
        }
    }
    if groups.is_empty() {
        return Err(AnalysisError::NoEvents);
    }
    let sum: f64 = groups.iter().map(|&(_, h, n)| h as f64 / n as f64).sum();
    Ok(sum / groups.len() as f64)
}

/// Fraction of turn-on events flagged ZVS, evaluated per grid half-period
/// and averaged over the half-periods present in `window`.
pub fn zvs_coverage(events: &[SwitchEvent], window: (f64, f64), fg: f64) -> Result<f64> {
    grouped_fraction(events, window, fg, |e| e.zvs)
}

/// Complement of [`zvs_coverage`] under the same averaging.
pub fn hard_switch_fraction(events: &[SwitchEvent], window: (f64, f64), fg: f64) -> Result<f64> {
    grouped_fraction(events, window, fg, |e| !e.zvs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossProxies {
    pub hard_switch_count: usize,
    pub hard_switch_fraction: f64,
    pub i_lr_rms: f64,
    pub i_lm_rms: f64,
}

/// Sample-index range covering `[t0, t1)`.
pub fn index_range(out: &SimOutput, t0: f64, t1: f64) -> std::ops::Range<usize> {
    let len = out.channels.len();
    let a = ((t0 / out.sample_interval) - 1e-6).ceil().max(0.0) as usize;
    let b = ((t1 / out.sample_interval) - 1e-6).ceil().max(0.0) as usize;
    a.min(len)..b.min(len)
}

/// RMS of a tank channel; envelope-mode channels hold peak amplitudes.
fn tank_rms(out: &SimOutput, series: &[f64]) -> f64 {
    match out.mode {
        SimMode::Switched => rms(series),
        SimMode::Envelope => rms(series) / 2.0_f64.sqrt(),
    }
}

/// Non-ZVS turn-on count and tank RMS currents over the final grid cycle.
pub fn loss_proxies(out: &SimOutput) -> Result<LossProxies> {
    let end = out.duration();
    let window = (end - 1.0 / out.fg, end + 0.5 * out.sample_interval);
    if window.0 < -1e-12 {
        return Err(AnalysisError::TooShort("need at least one grid cycle".into()));
    }
    let r = index_range(out, window.0, window.1);
    let hard_switch_count = out.events.iter().filter(|e| e.t >= window.0 && e.t < window.1 && !e.zvs).count();
    Ok(LossProxies {
        hard_switch_count,
        hard_switch_fraction: hard_switch_fraction(&out.events, window, out.fg)?,
        i_lr_rms: tank_rms(out, &out.channels.i_lr[r.clone()]),
        i_lm_rms: tank_rms(out, &out.channels.i_lm[r]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "seconds", rename_all = "lowercase")]
pub enum Settling {
    Settled(f64),
    Unsettled,
}

/// Time after `t_step` from which every half-cycle peak of the series stays
/// within `band` of the last one.
pub fn settling_time(series: &[f64], sample_interval: f64, fg: f64, t_step: f64, band: f64) -> Settling {
    let spc = 0.5 / (fg * sample_interval);
    let first = (t_step / sample_interval).ceil() as usize;
    if first >= series.len() {
        return Settling::Unsettled;
    }
    // (time of peak, peak) per complete half cycle after the step
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut k = (t_step * 2.0 * fg).floor() as usize;
    loop {
        let a = ((k as f64 * spc).round() as usize).max(first);
        let b = ((k + 1) as f64 * spc).round() as usize;
        if b > series.len() {
            break;
        }
        if b > a {
            let (i, p) =
                series[a..b]
                    .iter()
                    .enumerate()
                    .fold((0, 0.0_f64), |(bi, bp), (i, &x)| if x.abs() > bp { (i, x.abs()) } else { (bi, bp) });
            peaks.push(((a + i) as f64 * sample_interval, p));
        }
        k += 1;
    }
    let Some(&(_, last)) = peaks.last() else {
        return Settling::Unsettled;
    };
    if peaks.len() < 2 {
        return Settling::Unsettled;
    }
    let inside = |p: f64| (p - last).abs() <= band * last;
    let mut settled_from = peaks.len() - 1;
    while settled_from > 0 && inside(peaks[settled_from - 1].1) {
        settled_from -= 1;
    }
    if settled_from == 0 {
        return Settling::Settled(0.0);
    }
    if settled_from == peaks.len() - 1 {
        // only the reference peak itself is in band
        return Settling::Unsettled;
    }
    Settling::Settled((peaks[settled_from].0 - t_step).max(0.0))
}

/// Mean over reference zero crossings of the integral of |i - i_ref| in a
/// window of `half_width` on either side of the crossing.
pub fn zero_crossing_error(i_grid: &[f64], i_ref: &[f64], sample_interval: f64, fg: f64, half_width: f64) -> f64 {
    let n = i_grid.len().min(i_ref.len());
    let hw = (half_width / sample_interval).round() as usize;
    let spc = 0.5 / (fg * sample_interval);
    let mut total = 0.0;
    let mut count = 0usize;
    let mut k = 1usize;
    loop {
        let iz = (k as f64 * spc).round() as usize;
        if iz + hw > n {
            break;
        }
        if iz >= hw {
            let err: f64 = (iz - hw..iz + hw).map(|i| (i_grid[i] - i_ref[i]).abs()).sum();
            total += err * sample_interval;
            count += 1;
        }
        k += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// What the design loop and the acceptance checks gate on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub thd: Option<f64>,
    pub zvs_coverage: Option<f64>,
    pub vcr_peak: f64,
    pub i_lr_rms: f64,
    pub i_lm_rms: f64,
    pub i_grid_rms: f64,
    pub p_in_avg: f64,
    pub p_out_avg: f64,
    pub hard_switch_fraction: Option<f64>,
    pub settling_times: Vec<Settling>,
    pub zero_crossing_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub harmonics: usize,
    pub thd_periods: usize,
    pub settling_band: f64,
    pub zero_crossing_half_width: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            harmonics: DEFAULT_HARMONICS,
            thd_periods: DEFAULT_THD_PERIODS,
            settling_band: 0.05,
            zero_crossing_half_width: 1e-3,
        }
    }
}

/// Metrics over the window `[t_end - periods / fg, t_end)`.
///
/// THD and ZVS coverage use the whole window; RMS values and average powers
/// use its final grid cycle.
pub fn window_metrics(out: &SimOutput, t_end: f64, periods: usize, opts: &MetricOptions) -> Result<Metrics> {
    let fg = out.fg;
    let t0 = t_end - periods as f64 / fg;
    if t0 < -1e-9 || out.channels.is_empty() {
        return Err(AnalysisError::TooShort(format!("window of {periods} cycles ending at {t_end} s")));
    }
    let ch = &out.channels;
    let r = index_range(out, t0, t_end);
    if r.len() < 2 {
        return Err(AnalysisError::TooShort("window holds fewer than two samples".into()));
    }
    let last = index_range(out, t_end - 1.0 / fg, t_end);
    let thd = thd(&ch.i_grid[r.clone()], out.sample_interval, fg, opts.harmonics).ok();
    let zvs = zvs_coverage(&out.events, (t0, t_end), fg).ok();
    let hard = hard_switch_fraction(&out.events, (t0, t_end), fg).ok();
    let (i0, i1) = (last.start, last.end.min(ch.len() - 1));
    let span = ch.t[i1] - ch.t[i0];
    let avg = |e: &[f64]| if span > 0.0 { (e[i1] - e[i0]) / span } else { 0.0 };
    Ok(Metrics {
        thd,
        zvs_coverage: zvs,
        vcr_peak: peak_stress(&ch.v_cr[r.clone()]),
        i_lr_rms: tank_rms(out, &ch.i_lr[last.clone()]),
        i_lm_rms: tank_rms(out, &ch.i_lm[last.clone()]),
        i_grid_rms: rms(&ch.i_grid[last]),
        p_in_avg: avg(&ch.e_in),
        p_out_avg: avg(&ch.e_out),
        hard_switch_fraction: hard,
        settling_times: Vec::new(),
        zero_crossing_error: zero_crossing_error(
            &ch.i_grid[r.clone()],
            &ch.i_ref[r],
            out.sample_interval,
            fg,
            opts.zero_crossing_half_width,
        ),
    })
}

/// Metrics over the last `thd_periods` cycles of the run, plus the settling
/// time after every schedule boundary.
pub fn run_metrics(out: &SimOutput, schedule: &Schedule, opts: &MetricOptions) -> Result<Metrics> {
    let periods_available = (out.duration() * out.fg + 1e-6).floor() as usize;
    let periods = opts.thd_periods.min(periods_available);
    if periods == 0 {
        return Err(AnalysisError::TooShort("run shorter than one grid cycle".into()));
    }
    let end = out.duration() + 0.5 * out.sample_interval;
    let end = (end / out.sample_interval).floor() * out.sample_interval;
    let mut m = window_metrics(out, end, periods, opts)?;
    m.settling_times = schedule
        .segments()
        .iter()
        .skip(1)
        .filter(|s| s.t_start < out.duration())
        .map(|s| {
            let r = index_range(out, 0.0, s.t_end.min(end));
            settling_time(&out.channels.i_grid[r], out.sample_interval, out.fg, s.t_start, opts.settling_band)
        })
        .collect();
    Ok(m)
}

/// Metrics of one schedule segment, evaluated over its last whole cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub vin: f64,
    pub ipeak: f64,
    pub metrics: Metrics,
}

pub fn segment_metrics(out: &SimOutput, schedule: &Schedule, opts: &MetricOptions) -> Vec<SegmentMetrics> {
    schedule
        .segments()
        .iter()
        .enumerate()
        .filter_map(|(index, s)| {
            let t_end = s.t_end.min(out.duration());
            let whole = ((t_end - s.t_start) * out.fg + 1e-6).floor() as usize;
            let periods = opts.thd_periods.min(whole);
            if periods == 0 {
                return None;
            }
            let end = (t_end / out.sample_interval + 1e-6).floor() * out.sample_interval;
            let metrics = window_metrics(out, end, periods, opts).ok()?;
            Some(SegmentMetrics { index, t_start: s.t_start, t_end: s.t_end, vin: s.vin, ipeak: s.ipeak, metrics })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Leg;

    const FG: f64 = 60.0;
    const SPC: usize = 4000;

    fn ts() -> f64 {
        1.0 / (FG * SPC as f64)
    }

    fn wave(periods: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..periods * SPC).map(|i| f(i as f64 * ts())).collect()
    }

    #[test]
    fn pure_sine_has_no_distortion() {
        let x = wave(2, |t| 10.0 * (2.0 * PI * FG * t).sin());
        assert!(thd(&x, ts(), FG, 100).unwrap() < 1e-10);
    }

    #[test]
    fn third_harmonic_at_ten_percent() {
        let x = wave(2, |t| {
            let w = 2.0 * PI * FG * t;
            w.sin() + 0.1 * (3.0 * w + 0.4).sin()
        });
        assert!((thd(&x, ts(), FG, 100).unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn square_wave_against_fourier_series() {
        // offset by half a sample so no sample sits on the discontinuity
        let x = wave(2, |t| (2.0 * PI * FG * (t + 0.5 * ts())).sin().signum());
        let got = thd(&x, ts(), FG, 100).unwrap();
        // odd harmonics 1/h up to 99, evaluated directly
        let series: f64 = (3..=99).step_by(2).map(|h| 1.0 / (h * h) as f64).sum::<f64>().sqrt();
        assert!((got - series).abs() < 2e-3, "{got} vs {series}");
        let limit = (PI * PI / 8.0 - 1.0).sqrt();
        assert!((got - limit).abs() < 0.01);
    }

    #[test]
    fn thd_window_errors() {
        let x: Vec<f64> = wave(2, |t| (2.0 * PI * FG * t).sin());
        assert!(matches!(thd(&x[..x.len() - 7], ts(), FG, 100), Err(AnalysisError::Window { .. })));
        let z = vec![0.0; 2 * SPC];
        assert!(matches!(thd(&z, ts(), FG, 100), Err(AnalysisError::UndefinedFundamental(_))));
    }

    fn event(t: f64, zvs: bool) -> SwitchEvent {
        let mut e = SwitchEvent::new(t, 1.0, Leg::A, false, 50e3, 0.0, 0.0);
        e.zvs = zvs;
        e
    }

    #[test]
    fn coverage_extremes_and_complement() {
        let all: Vec<_> = (0..100).map(|i| event(i as f64 * 1e-4, true)).collect();
        assert_eq!(zvs_coverage(&all, (0.0, 1.0), FG).unwrap(), 1.0);
        let none: Vec<_> = (0..100).map(|i| event(i as f64 * 1e-4, false)).collect();
        assert_eq!(zvs_coverage(&none, (0.0, 1.0), FG).unwrap(), 0.0);
        let mixed: Vec<_> = (0..300).map(|i| event(i as f64 * 1e-4, i % 3 != 0 || i > 200)).collect();
        let c = zvs_coverage(&mixed, (0.0, 1.0), FG).unwrap();
        let h = hard_switch_fraction(&mixed, (0.0, 1.0), FG).unwrap();
        assert!((c + h - 1.0).abs() < 1e-12);
        assert!(matches!(zvs_coverage(&all, (2.0, 3.0), FG), Err(AnalysisError::NoEvents)));
    }

    #[test]
    fn peak_stress_examples() {
        assert_eq!(peak_stress(&[5.0; 10]), 5.0);
        let s = wave(1, |t| 850.0 * (2.0 * PI * FG * t).sin());
        assert!((peak_stress(&s) - 850.0).abs() < 1e-6);
    }

    #[test]
    fn settling_of_first_order_envelope() {
        let tau = 0.05;
        let t_step = 0.1;
        let x = wave(60, |t| {
            let a = if t < t_step { 10.0 } else { 50.0 - 40.0 * (-(t - t_step) / tau).exp() };
            a * (2.0 * PI * FG * t).sin()
        });
        match settling_time(&x, ts(), FG, t_step, 0.05) {
            Settling::Settled(s) => {
                // ln(40 / 2.5) tau for a 5 % band on a 40 A step ending at 50 A
                let expected = (40.0_f64 / 2.5).ln() * tau;
                assert!((s - expected).abs() < 0.6 / FG, "{s} vs {expected}");
            }
            Settling::Unsettled => panic!("should settle"),
        }
    }

    #[test]
    fn constant_amplitude_settles_immediately() {
        let x = wave(10, |t| 3.0 * (2.0 * PI * FG * t).sin());
        assert_eq!(settling_time(&x, ts(), FG, 0.05, 0.05), Settling::Settled(0.0));
    }

    #[test]
    fn growing_envelope_never_settles() {
        let x = wave(10, |t| (1.0 + 20.0 * t) * (2.0 * PI * FG * t).sin());
        assert_eq!(settling_time(&x, ts(), FG, 0.01, 0.01), Settling::Unsettled);
    }

    #[test]
    fn zero_crossing_error_examples() {
        let r = wave(4, |t| 10.0 * (2.0 * PI * FG * t).sin());
        assert_eq!(zero_crossing_error(&r, &r, ts(), FG, 1e-3), 0.0);
        let off: Vec<f64> = r.iter().map(|x| x + 0.5).collect();
        let e = zero_crossing_error(&off, &r, ts(), FG, 1e-3);
        assert!((e - 2e-3 * 0.5).abs() < 1e-12, "{e}");
    }
}
