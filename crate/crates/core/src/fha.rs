//! First-harmonic approximation (FHA) of the LLC resonant tank.
//!
//! Everything here is a pure function of its arguments. The tank is described
//! by [`ResonantTank`]; the load it sees is summarised by the reflected AC
//! resistance `Rac` (see [`LoadContext`]) or, equivalently, the quality factor
//! `Q = sqrt(Lr/Cr) / Rac`.
//!
//! The closed-form gain is cross-checked by [`input_impedance`], which
//! evaluates the tank as a complex network. The circuit-derived impedance
//! angle is the one used by every downstream consumer;
//! [`impedance_angle_eq2`] only reproduces the printed rational form for
//! comparison.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parallel::{self, Execution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FhaError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("phase shift {0} rad outside [0, pi]")]
    PhaseOutOfRange(f64),
    #[error("gain {target} above the {available} reachable at the lowest switching frequency")]
    Infeasible { target: f64, available: f64 },
    #[error("invalid frequency range [{0}, {1}]")]
    BadRange(f64, f64),
}

pub type Result<T> = std::result::Result<T, FhaError>;

pub(crate) fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(FhaError::NonPositive { name, value })
    }
}

/// Series inductor, series capacitor, magnetizing inductance and turns ratio
/// (secondary over primary) of one LLC module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonantTank {
    pub lr: f64,
    pub cr: f64,
    pub lm: f64,
    pub n: f64,
}

impl ResonantTank {
    pub fn new(lr: f64, cr: f64, lm: f64, n: f64) -> Result<Self> {
        let tank = Self { lr, cr, lm, n };
        tank.validate()?;
        Ok(tank)
    }

    pub fn validate(&self) -> Result<()> {
        positive("Lr", self.lr)?;
        positive("Cr", self.cr)?;
        positive("Lm", self.lm)?;
        positive("N", self.n)?;
        Ok(())
    }

    /// Series resonance of Lr and Cr.
    pub fn fr1(&self) -> f64 {
        1.0 / (2.0 * PI * (self.cr * self.lr).sqrt())
    }

    /// Resonance of Cr against Lr + Lm (secondary open).
    pub fn fr2(&self) -> f64 {
        1.0 / (2.0 * PI * (self.cr * (self.lr + self.lm)).sqrt())
    }

    /// `(Lm + Lr) / Lr`.
    pub fn m(&self) -> f64 {
        (self.lm + self.lr) / self.lr
    }

    /// `Lm / Lr`, always `m - 1`.
    pub fn lx(&self) -> f64 {
        self.lm / self.lr
    }

    /// `sqrt(Lr / Cr)`.
    pub fn characteristic_impedance(&self) -> f64 {
        (self.lr / self.cr).sqrt()
    }

    pub fn normalized_frequency(&self, fs: f64) -> f64 {
        fs / self.fr1()
    }
}

/// Returns `(fr1, fr2)`.
pub fn resonant_frequencies(tank: &ResonantTank) -> Result<(f64, f64)> {
    tank.validate()?;
    Ok((tank.fr1(), tank.fr2()))
}

/// Load seen by one module, reduced to the quantities the FHA consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadContext {
    /// RMS voltage at the port that defines the load resistance.
    pub vo: f64,
    /// Active power through that port.
    pub po: f64,
    pub ro: f64,
    pub rac: f64,
    pub q: f64,
}

impl LoadContext {
    pub fn new(tank: &ResonantTank, vo: f64, po: f64) -> Result<Self> {
        tank.validate()?;
        positive("Vo", vo)?;
        positive("Po", po)?;
        let ro = vo * vo / po;
        let rac = reflected_resistance(ro, tank.n)?;
        let q = quality_factor(tank, rac)?;
        Ok(Self { vo, po, ro, rac, q })
    }
}

/// `Rac = 8 Ro / (pi^2 N^2)`.
pub fn reflected_resistance(ro: f64, n: f64) -> Result<f64> {
    positive("Ro", ro)?;
    positive("N", n)?;
    Ok(8.0 * ro / (PI * PI * n * n))
}

/// `Q = sqrt(Lr/Cr) / Rac`.
pub fn quality_factor(tank: &ResonantTank, rac: f64) -> Result<f64> {
    if rac.is_infinite() && rac > 0.0 {
        return Ok(0.0);
    }
    positive("Rac", rac)?;
    Ok(tank.characteristic_impedance() / rac)
}

/// Normalised FHA voltage gain for turns ratio `n`, inductance ratio `m`,
/// quality factor `q` and normalised frequency `fx`.
pub fn gain(n: f64, m: f64, q: f64, fx: f64) -> Result<f64> {
    positive("Fx", fx)?;
    if !(m > 1.0) {
        return Err(FhaError::NonPositive { name: "m - 1", value: m - 1.0 });
    }
    if !(q >= 0.0) {
        return Err(FhaError::NonPositive { name: "Q", value: q });
    }
    let fx2 = fx * fx;
    let ln = m - 1.0;
    let a = m * fx2 - 1.0;
    let b = fx * (fx2 - 1.0) * ln * q;
    Ok(n * fx2 * ln / (a * a + b * b).sqrt())
}

pub fn gain_fha(tank: &ResonantTank, q: f64, fx: f64) -> Result<f64> {
    gain(tank.n, tank.m(), q, fx)
}

fn check_phase(phi: f64) -> Result<f64> {
    if (0.0..=PI).contains(&phi) {
        Ok(phi)
    } else {
        Err(FhaError::PhaseOutOfRange(phi))
    }
}

/// Full-bridge phase shift scales the fundamental by `cos(phi / 2)`.
pub fn gain_with_phase_shift(m: f64, phi: f64) -> Result<f64> {
    check_phase(phi)?;
    Ok(m * (phi / 2.0).cos())
}

/// `jwLr + 1/(jwCr) + (jwLm || Rac)` at `fs`. An infinite `rac` is the
/// open-secondary limit.
pub fn input_impedance(tank: &ResonantTank, rac: f64, fs: f64) -> Result<Complex64> {
    positive("fs", fs)?;
    if !(rac > 0.0) {
        return Err(FhaError::NonPositive { name: "Rac", value: rac });
    }
    let w = 2.0 * PI * fs;
    let series = Complex64::new(0.0, w * tank.lr - 1.0 / (w * tank.cr));
    Ok(series + magnetizing_branch(tank, rac, w))
}

/// `jwLm || Rac`.
fn magnetizing_branch(tank: &ResonantTank, rac: f64, w: f64) -> Complex64 {
    let zm = Complex64::new(0.0, w * tank.lm);
    if rac.is_infinite() {
        zm
    } else {
        let r = Complex64::new(rac, 0.0);
        zm * r / (zm + r)
    }
}

/// Transfer magnitude of the FHA network scaled by N. Independent of the
/// closed form in [`gain`].
pub fn gain_circuit(tank: &ResonantTank, rac: f64, fs: f64) -> Result<f64> {
    let zin = input_impedance(tank, rac, fs)?;
    let zp = magnetizing_branch(tank, rac, 2.0 * PI * fs);
    Ok(tank.n * (zp / zin).norm())
}

/// The rational impedance-angle expression exactly as it was published.
/// Diagnostic only.
pub fn impedance_angle_eq2(fx: f64, q: f64, lx: f64) -> Result<f64> {
    positive("Fx", fx)?;
    positive("Q", q)?;
    let fx2 = fx * fx;
    let num = fx2 * fx2 * q + fx2 * lx * lx + fx2 * lx - fx2 * q * q - lx * lx;
    let den = fx2 * fx * q;
    Ok((num / den).atan())
}

/// Argument of [`input_impedance`]; positive in the inductive region.
pub fn impedance_angle_circuit(tank: &ResonantTank, rac: f64, fs: f64) -> Result<f64> {
    Ok(input_impedance(tank, rac, fs)?.arg())
}

/// `theta - phi / 2`. ZVS is predicted only when the result is strictly
/// positive, see [`zvs_predicted`].
pub fn zvs_margin(theta: f64, phi: f64) -> Result<f64> {
    check_phase(phi)?;
    Ok(theta - phi / 2.0)
}

pub fn zvs_predicted(delta: f64) -> bool {
    delta > 0.0
}

/// Switching frequency that realises a target gain, or the saturated
/// upper bound when the target sits below the curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSolution {
    pub fs: f64,
    pub saturated: bool,
}

/// Inverts the gain curve on `fs_range`. The curve is assumed monotone
/// decreasing there (above-resonance operation).
pub fn solve_fs_for_gain(tank: &ResonantTank, q: f64, target: f64, fs_range: (f64, f64)) -> Result<GainSolution> {
    let (lo, hi) = fs_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(FhaError::BadRange(lo, hi));
    }
    let fr1 = tank.fr1();
    let g = |fs: f64| gain_fha(tank, q, fs / fr1);
    let g_lo = g(lo)?;
    let g_hi = g(hi)?;
    if target > g_lo * (1.0 + 1e-12) {
        return Err(FhaError::Infeasible { target, available: g_lo });
    }
    if target <= g_hi {
        return Ok(GainSolution { fs: hi, saturated: target < g_hi });
    }
    if target >= g_lo {
        return Ok(GainSolution { fs: lo, saturated: false });
    }
    let fs = invert_gain_bracketed(tank, q, target, fs_range, None);
    Ok(GainSolution { fs, saturated: false })
}

/// Frequency in `fs_range` where the gain equals `target`, assuming the
/// gain at `fs_range.0` is above it and the gain at `fs_range.1` below.
///
/// `M(x) = g` with `x = Fx^2` clears to a cubic `P(x) = 0` that is negative
/// where the gain exceeds the target; it is solved by Newton steps kept
/// inside the bracket, optionally warm-started from a previous solution.
pub(crate) fn invert_gain_bracketed(
    tank: &ResonantTank,
    q: f64,
    target: f64,
    fs_range: (f64, f64),
    guess: Option<f64>,
) -> f64 {
    let fr1 = tank.fr1();
    let (m, nn) = (tank.m(), tank.n);
    let aq = (m - 1.0).powi(2) * q * q;
    let k = (nn * (m - 1.0)).powi(2);
    let g2 = target * target;
    let p = |x: f64| {
        let u = m * x - 1.0;
        let v = x - 1.0;
        let val = g2 * (u * u + aq * x * v * v) - k * x * x;
        let der = g2 * (2.0 * m * u + aq * (v * v + 2.0 * x * v)) - 2.0 * k * x;
        (val, der)
    };
    let (mut a, mut b) = ((fs_range.0 / fr1).powi(2), (fs_range.1 / fr1).powi(2));
    let mut x = guess.map_or(0.5 * (a + b), |fs| (fs / fr1).powi(2).clamp(a, b));
    for _ in 0..100 {
        let (val, der) = p(x);
        if val == 0.0 {
            break;
        }
        if val < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = x - val / der;
        let next = if der > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        let done = (next - x).abs() <= 1e-15 * x || b - a <= 1e-15 * b;
        x = next;
        if done {
            break;
        }
    }
    x.sqrt() * fr1
}

/// One point of a gain/angle curve family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub fs: f64,
    pub rac: f64,
    pub q: f64,
    pub gain: f64,
    pub theta: f64,
}

/// Gain and circuit angle for every `(load, fs)` pair, load-major.
pub fn sweep_curves(tank: &ResonantTank, rac_loads: &[f64], fs_grid: &[f64], exec: Execution) -> Result<Vec<CurveRow>> {
    let fr1 = tank.fr1();
    let points: Vec<(f64, f64)> = rac_loads.iter().flat_map(|&rac| fs_grid.iter().map(move |&fs| (rac, fs))).collect();
    parallel::map(&points, exec, |&(rac, fs)| {
        let q = quality_factor(tank, rac)?;
        Ok(CurveRow { fs, rac, q, gain: gain_fha(tank, q, fs / fr1)?, theta: impedance_angle_circuit(tank, rac, fs)? })
    })
    .into_iter()
    .collect()
}

/// Circuit angle versus magnetizing inductance, frequency-major.
/// Returns `(fs, lm, theta)` triples.
pub fn sweep_angle_vs_lm(
    tank: &ResonantTank,
    rac: f64,
    lm_grid: &[f64],
    fs_grid: &[f64],
    exec: Execution,
) -> Result<Vec<(f64, f64, f64)>> {
    let points: Vec<(f64, f64)> = fs_grid.iter().flat_map(|&fs| lm_grid.iter().map(move |&lm| (fs, lm))).collect();
    parallel::map(&points, exec, |&(fs, lm)| {
        let t = ResonantTank::new(tank.lr, tank.cr, lm, tank.n)?;
        Ok((fs, lm, impedance_angle_circuit(&t, rac, fs)?))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn table1() -> ResonantTank {
        ResonantTank::new(4e-6, 3.3e-6, 100e-6, 10.0).unwrap()
    }

    #[test]
    fn resonant_frequencies_of_reference_tank() {
        let (fr1, fr2) = resonant_frequencies(&table1()).unwrap();
        assert_relative_eq!(fr1, 43_809.0, max_relative = 1e-4);
        assert_relative_eq!(fr2, 8_591.0, max_relative = 1e-3);
        assert!(fr2 < fr1);
    }

    #[test]
    fn fr2_vanishes_with_huge_lm() {
        let t = ResonantTank::new(4e-6, 3.3e-6, 1e6, 10.0).unwrap();
        assert!(t.fr2() < 1.0);
    }

    #[test]
    fn rejects_non_positive_components() {
        assert!(ResonantTank::new(0.0, 3.3e-6, 1e-4, 10.0).is_err());
        assert!(ResonantTank::new(4e-6, -1.0, 1e-4, 10.0).is_err());
        assert!(ResonantTank::new(4e-6, 3.3e-6, 1e-4, f64::NAN).is_err());
    }

    #[test]
    fn m_and_lx() {
        let t = table1();
        assert_relative_eq!(t.m(), 26.0, epsilon = 1e-12);
        assert_relative_eq!(t.lx(), t.m() - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(gain(10.0, 26.0, 3.7, 1.0).unwrap(), 10.0);
        // frozen from an independent evaluation of the closed form
        assert_relative_eq!(gain(10.0, 26.0, 1.4267, 1.2).unwrap(), 8.776_483_185, max_relative = 1e-9);
        assert_relative_eq!(gain(10.0, 26.0, 0.0, 1.2).unwrap(), 360.0 / 36.44, max_relative = 1e-12);
        assert!(gain(10.0, 26.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn phase_shift_gain() {
        assert_eq!(gain_with_phase_shift(10.0, 0.0).unwrap(), 10.0);
        assert!(gain_with_phase_shift(10.0, PI).unwrap().abs() < 1e-12);
        assert_relative_eq!(gain_with_phase_shift(10.0, PI / 2.0).unwrap(), 7.0710678, max_relative = 1e-7);
        assert!(gain_with_phase_shift(10.0, -0.1).is_err());
        assert!(gain_with_phase_shift(10.0, 3.2).is_err());
    }

    #[test]
    fn impedance_at_resonance_is_the_magnetizing_branch() {
        let t = table1();
        let rac = 0.7717;
        let z = input_impedance(&t, rac, t.fr1()).unwrap();
        let w = 2.0 * PI * t.fr1();
        let expected_angle = (rac / (w * t.lm)).atan();
        assert_relative_eq!(z.arg(), expected_angle, max_relative = 1e-9);
        assert_relative_eq!(z.arg().to_degrees(), 1.6, epsilon = 0.05);
    }

    #[test]
    fn open_secondary_is_purely_reactive() {
        let t = table1();
        let z = input_impedance(&t, f64::INFINITY, 60e3).unwrap();
        assert_eq!(z.re, 0.0);
        assert_relative_eq!(z.arg(), PI / 2.0, epsilon = 1e-12);
        // a very large finite load approaches the same limit
        let z = input_impedance(&t, 1e9, 60e3).unwrap();
        assert_relative_eq!(z.arg(), PI / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn eq2_rejects_zero_q_and_stays_bounded() {
        assert!(impedance_angle_eq2(1.2, 0.0, 25.0).is_err());
        let th = impedance_angle_eq2(1.2, 1.4, 25.0).unwrap();
        assert!(th.abs() < PI / 2.0);
    }

    #[test]
    fn zvs_margin_examples() {
        assert_relative_eq!(zvs_margin(0.5, 0.4).unwrap(), 0.3, epsilon = 1e-15);
        assert!(zvs_predicted(zvs_margin(0.5, 0.4).unwrap()));
        assert!(!zvs_predicted(zvs_margin(1.0, PI).unwrap()));
        assert!(!zvs_predicted(zvs_margin(0.7, 1.4).unwrap()));
    }

    #[test]
    fn quality_factor_examples() {
        let t = table1();
        let z0 = t.characteristic_impedance();
        assert_relative_eq!(quality_factor(&t, z0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(quality_factor(&t, 0.7717).unwrap(), 1.4267, max_relative = 2e-4);
        let q1 = quality_factor(&t, 2.0).unwrap();
        let q2 = quality_factor(&t, 4.0).unwrap();
        assert_relative_eq!(q1, 2.0 * q2, epsilon = 1e-12);
        assert!(quality_factor(&t, 0.0).is_err());
    }

    #[test]
    fn load_context_chain_for_full_module_load() {
        let t = table1();
        let ctx = LoadContext::new(&t, 3983.7, 166.7e3).unwrap();
        assert_relative_eq!(ctx.ro, 95.2, max_relative = 1e-3);
        assert_relative_eq!(ctx.rac, 0.7717, max_relative = 1e-3);
        assert_relative_eq!(ctx.q, 1.4267, max_relative = 1e-3);
    }

    #[test]
    fn solve_examples() {
        let t = table1();
        let q = 1.2;
        let fr1 = t.fr1();
        let sol = solve_fs_for_gain(&t, q, t.n, (fr1, 70e3)).unwrap();
        assert_relative_eq!(sol.fs, fr1, max_relative = 1e-12);
        let g_max = gain_fha(&t, q, 70e3 / fr1).unwrap();
        let sol = solve_fs_for_gain(&t, q, g_max, (45e3, 70e3)).unwrap();
        assert_eq!(sol, GainSolution { fs: 70e3, saturated: false });
        let sol = solve_fs_for_gain(&t, q, 0.5 * g_max, (45e3, 70e3)).unwrap();
        assert!(sol.saturated);
        assert_eq!(sol.fs, 70e3);
        assert!(matches!(solve_fs_for_gain(&t, q, 10.5, (45e3, 70e3)), Err(FhaError::Infeasible { .. })));
    }

    #[test]
    fn sweep_single_point_echoes_primitives() {
        let t = table1();
        let rows = sweep_curves(&t, &[0.7717], &[50e3], Execution::Sequential).unwrap();
        assert_eq!(rows.len(), 1);
        let q = quality_factor(&t, 0.7717).unwrap();
        assert_eq!(rows[0].gain, gain_fha(&t, q, 50e3 / t.fr1()).unwrap());
        assert_eq!(rows[0].theta, impedance_angle_circuit(&t, 0.7717, 50e3).unwrap());
    }

    #[test]
    fn heavier_load_has_lower_gain_above_resonance() {
        let t = table1();
        let heavy = LoadContext::new(&t, 3983.7, 166.7e3).unwrap();
        let light = LoadContext::new(&t, 3983.7, 83.3e3).unwrap();
        let grid: Vec<f64> = (0..50).map(|i| 45e3 + 500.0 * i as f64).collect();
        let rows = sweep_curves(&t, &[heavy.rac, light.rac], &grid, Execution::default()).unwrap();
        let (h, l) = rows.split_at(grid.len());
        for (a, b) in h.iter().zip(l) {
            assert!(a.gain < b.gain);
        }
    }

    #[test]
    fn theta_increases_along_frequency_above_resonance() {
        let t = table1();
        let grid: Vec<f64> = (0..200).map(|i| t.fr1() + i as f64 * (70e3 - t.fr1()) / 199.0).collect();
        let rows = sweep_curves(&t, &[0.7717, 5.0], &grid, Execution::default()).unwrap();
        for fam in rows.chunks(grid.len()) {
            for w in fam.windows(2) {
                assert!(w[1].theta > w[0].theta);
            }
        }
    }
}
