//! Component sizing and the iterative design flow.
//!
//! The pure sizing steps live here; [`run_design_loop`] strings them
//! together with simulation-backed checks.

mod flow;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fha::{self, FhaError, ResonantTank};
use crate::sim::{LoadEstimate, SimError};

pub use flow::{
    design_and_validate, run_design_loop, validate_switched, Action, Check, DesignReport, DesignSimulator,
    EngineSimulator, TraceEntry, Validation, Verdict,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("invalid design input: {0}")]
    Invalid(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("empty {region} band: lower {lo} Hz >= upper {hi} Hz")]
    EmptyBand { region: Region, lo: f64, hi: f64 },
    #[error(transparent)]
    Fha(#[from] FhaError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type Result<T> = std::result::Result<T, DesignError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Line-to-line RMS voltage.
    pub vo: f64,
    pub fg: f64,
    /// Voltage tolerance fraction.
    pub k: f64,
}

impl GridSpec {
    pub fn table1() -> Self {
        Self { vo: 13.8e3, fg: 60.0, k: 0.05 }
    }

    pub fn validate(&self) -> Result<()> {
        fha::positive("Vo", self.vo)?;
        fha::positive("fg", self.fg)?;
        if !(0.0..=0.05).contains(&self.k) {
            return Err(DesignError::Invalid(format!("grid tolerance k = {} outside [0, 0.05]", self.k)));
        }
        Ok(())
    }

    /// Phase RMS voltage.
    pub fn phase_rms(&self) -> f64 {
        self.vo / 3.0_f64.sqrt()
    }

    /// Phase peak voltage.
    pub fn vm(&self) -> f64 {
        2.0_f64.sqrt() * self.phase_rms()
    }

    /// Peak voltage each of `n_series` stacked modules must produce.
    pub fn module_peak(&self, n_series: u32) -> f64 {
        self.vm() / f64::from(n_series)
    }

    pub fn v_grid(&self, t: f64) -> f64 {
        self.vm() * (2.0 * PI * self.fg * t).sin()
    }

    /// Unfolder polarity: +1 in the positive grid half-cycle, -1 otherwise.
    pub fn polarity(&self, t: f64) -> f64 {
        let half = (2.0 * self.fg * t).floor() as i64;
        if half.rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    /// Cutoff between the two tank resonances.
    Region1,
    /// Cutoff below the second resonance.
    Region2,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Region::Region1 => "region1",
            Region::Region2 => "region2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionPreference {
    Region1,
    Region2,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub cf: f64,
    pub lf: f64,
    pub fc: f64,
    pub region: Region,
}

impl FilterDesign {
    pub fn new(cf: f64, lf: f64, region: Region) -> Result<Self> {
        fha::positive("Cf", cf)?;
        fha::positive("Lf", lf)?;
        Ok(Self { cf, lf, fc: cutoff(lf, cf), region })
    }

    pub fn validate(&self) -> Result<()> {
        fha::positive("Cf", self.cf)?;
        fha::positive("Lf", self.lf)?;
        let fc = cutoff(self.lf, self.cf);
        if (fc - self.fc).abs() > 1e-3 * fc {
            return Err(DesignError::Invalid(format!("fc = {} Hz does not match Lf, Cf ({fc} Hz)", self.fc)));
        }
        Ok(())
    }

    /// Whether the cutoff sits strictly inside its region.
    pub fn satisfies_region(&self, tank: &ResonantTank, fg: f64, x: f64, y: f64) -> bool {
        match self.region {
            Region::Region1 => tank.fr2() < self.fc && y * self.fc <= tank.fr1() * (1.0 + 1e-12),
            Region::Region2 => self.fc < tank.fr2() && x * fg <= self.fc * (1.0 + 1e-12),
        }
    }
}

pub fn cutoff(lf: f64, cf: f64) -> f64 {
    1.0 / (2.0 * PI * (lf * cf).sqrt())
}

/// Standard preferred-number series used to snap the filter capacitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ESeries {
    #[default]
    E6,
    E12,
}

impl ESeries {
    pub fn mantissas(self) -> &'static [f64] {
        match self {
            ESeries::E6 => &[1.0, 1.5, 2.2, 3.3, 4.7, 6.8],
            ESeries::E12 => &[1.0, 1.2, 1.5, 1.8, 2.2, 2.7, 3.3, 3.9, 4.7, 5.6, 6.8, 8.2],
        }
    }

    /// Largest series value not above `value`.
    pub fn round_down(self, value: f64) -> f64 {
        let decade = value.log10().floor();
        let scale = 10f64.powf(decade);
        let mant = value / scale;
        let mut best = 0.1 * self.mantissas()[self.mantissas().len() - 1];
        for &m in self.mantissas() {
            if m <= mant * (1.0 + 1e-9) {
                best = m;
            }
        }
        best * scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationControls {
    pub cr_step: f64,
    pub lm_step: f64,
    pub lf_step: f64,
    pub max_iterations: u32,
    /// Minimum ZVS coverage at light load.
    pub zvs_threshold: f64,
    /// Region 2 lower bound is `x * fg`.
    pub x: f64,
    /// Region 1 upper bound is `fr1 / y`.
    pub y: f64,
    /// `fr1 = fs_min / fr1_ratio`.
    pub fr1_ratio: f64,
    /// Initial `Lm / Lr + 1`.
    pub m_init: f64,
    /// Lower bound on the initial resonant capacitor.
    pub cr_floor: f64,
    /// Grid cycles per simulated check; the last two are measured.
    pub check_cycles: u32,
}

impl Default for IterationControls {
    fn default() -> Self {
        Self {
            cr_step: 1.2,
            lm_step: 0.8,
            lf_step: 1.25,
            max_iterations: 32,
            zvs_threshold: 0.90,
            x: 15.0,
            y: 3.0,
            fr1_ratio: 1.025,
            m_init: 26.0,
            cr_floor: 0.0,
            check_cycles: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub grid: GridSpec,
    pub vin_min: f64,
    pub vin_max: f64,
    /// Single-phase output power range.
    pub po_min: f64,
    pub po_max: f64,
    pub fs_min: f64,
    pub fs_max: f64,
    pub vcr_max: f64,
    pub thd_max: f64,
    pub n_series: u32,
    pub region_preference: RegionPreference,
    /// Filter volume matters; makes `auto` pick region 1.
    pub size_constrained: bool,
    pub cf_series: ESeries,
    pub controls: IterationControls,
}

impl DesignSpec {
    pub fn table1() -> Self {
        Self {
            grid: GridSpec::table1(),
            vin_min: 600.0,
            vin_max: 850.0,
            po_min: 30e3,
            po_max: 1e6 / 3.0,
            fs_min: 45e3,
            fs_max: 70e3,
            vcr_max: 850.0,
            thd_max: 0.12,
            n_series: 2,
            region_preference: RegionPreference::Auto,
            size_constrained: false,
            cf_series: ESeries::E6,
            controls: IterationControls::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |m: String| Err(DesignError::Invalid(m));
        if !(self.vin_min > 0.0 && self.vin_min < self.vin_max) {
            return bad(format!("need 0 < Vin_min < Vin_max, got {} / {}", self.vin_min, self.vin_max));
        }
        if !(self.po_min > 0.0 && self.po_min < self.po_max) {
            return bad(format!("need 0 < Po_min < Po_max, got {} / {}", self.po_min, self.po_max));
        }
        if !(self.fs_min > 0.0 && self.fs_min < self.fs_max) {
            return bad(format!("need 0 < fs_min < fs_max, got {} / {}", self.fs_min, self.fs_max));
        }
        if !(self.vcr_max > 0.0) {
            return bad(format!("Vcr_max must be positive, got {}", self.vcr_max));
        }
        if !(self.thd_max > 0.0) {
            return bad(format!("THD_max must be positive, got {}", self.thd_max));
        }
        if self.n_series == 0 {
            return bad("n_series must be at least 1".into());
        }
        let c = &self.controls;
        if !(c.cr_step > 1.0 && c.lm_step > 0.0 && c.lm_step < 1.0 && c.lf_step > 1.0) {
            return bad(format!("step factors must move their component: {c:?}"));
        }
        if !(c.x > 0.0 && c.y > 1.0 && c.fr1_ratio >= 1.0 && c.m_init > 1.0 && c.cr_floor >= 0.0) {
            return bad(format!("invalid iteration controls: {c:?}"));
        }
        if !(0.0..=1.0).contains(&c.zvs_threshold) || c.max_iterations == 0 || c.check_cycles < 2 {
            return bad(format!("invalid iteration controls: {c:?}"));
        }
        Ok(())
    }

    /// Grid peak current at a single-phase power.
    pub fn grid_peak_current(&self, po: f64) -> f64 {
        2.0 * po / self.grid.vm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnsRatio {
    pub raw: f64,
    pub n: f64,
}

/// `N_raw = (1 + k) Vo / (sqrt(6) Vin_min)`, rounded to the nearest integer.
pub fn turns_ratio(grid: &GridSpec, vin_min: f64) -> Result<TurnsRatio> {
    fha::positive("Vin_min", vin_min)?;
    let raw = (1.0 + grid.k) * grid.vo / (6.0_f64.sqrt() * vin_min);
    Ok(TurnsRatio { raw, n: raw.round().max(1.0) })
}

/// Minimum resonant capacitance `N Im / (4 fs_min (Vcr_max - Vo_module / N))`.
pub fn cr_min(n: f64, im: f64, fs_min: f64, vcr_max: f64, vo_module: f64) -> Result<f64> {
    fha::positive("N", n)?;
    fha::positive("Im", im)?;
    fha::positive("fs_min", fs_min)?;
    let margin = vcr_max - vo_module / n;
    if !(margin > 0.0) {
        return Err(DesignError::Infeasible(format!(
            "Vcr_max = {vcr_max} V does not exceed the reflected output voltage {} V",
            vo_module / n
        )));
    }
    Ok(n * im / (4.0 * fs_min * margin))
}

/// `(Lr, Lm)` placing the series resonance at `fr1`.
pub fn tank_from_fr1(fr1: f64, cr: f64, m_init: f64) -> Result<(f64, f64)> {
    fha::positive("fr1", fr1)?;
    fha::positive("Cr", cr)?;
    if !(m_init > 1.0) {
        return Err(DesignError::Invalid(format!("m_init must exceed 1, got {m_init}")));
    }
    let lr = 1.0 / ((2.0 * PI * fr1).powi(2) * cr);
    Ok((lr, (m_init - 1.0) * lr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterCapacitor {
    pub raw: f64,
    pub cf: f64,
}

/// `Cf_raw = 0.1 Im_min / (2 pi Vm fg)`, snapped down to `series`.
pub fn filter_capacitor(im_min: f64, vm: f64, fg: f64, series: ESeries) -> Result<FilterCapacitor> {
    fha::positive("Im_min", im_min)?;
    fha::positive("Vm", vm)?;
    fha::positive("fg", fg)?;
    let raw = 0.1 * im_min / (2.0 * PI * vm * fg);
    Ok(FilterCapacitor { raw, cf: series.round_down(raw) })
}

/// `Lf = 1 / (4 pi^2 fc^2 Cf)`.
pub fn filter_inductor(fc: f64, cf: f64) -> Result<f64> {
    fha::positive("fc", fc)?;
    fha::positive("Cf", cf)?;
    Ok(1.0 / (4.0 * PI * PI * fc * fc * cf))
}

/// Allowed cutoff interval of a region.
pub fn region_band(region: Region, fr1: f64, fr2: f64, fg: f64, x: f64, y: f64) -> Result<(f64, f64)> {
    let (lo, hi) = match region {
        Region::Region1 => (fr2, fr1 / y),
        Region::Region2 => (x * fg, fr2),
    };
    if !(lo < hi) {
        return Err(DesignError::EmptyBand { region, lo, hi });
    }
    Ok((lo, hi))
}

pub fn resolve_region(spec: &DesignSpec) -> Region {
    match spec.region_preference {
        RegionPreference::Region1 => Region::Region1,
        RegionPreference::Region2 => Region::Region2,
        RegionPreference::Auto if spec.size_constrained => Region::Region1,
        RegionPreference::Auto => Region::Region2,
    }
}

/// Filter with its cutoff at the geometric mean of the region band.
pub fn select_filter_region(spec: &DesignSpec, fr1: f64, fr2: f64) -> Result<FilterDesign> {
    if !(fr2 < fr1) {
        return Err(DesignError::Invalid(format!("need fr2 < fr1, got {fr2} / {fr1}")));
    }
    let region = resolve_region(spec);
    let c = &spec.controls;
    let (lo, hi) = region_band(region, fr1, fr2, spec.grid.fg, c.x, c.y)?;
    let fc = (lo * hi).sqrt();
    let im_min = spec.grid_peak_current(spec.po_min);
    let cf = filter_capacitor(im_min, spec.grid.vm(), spec.grid.fg, spec.cf_series)?.cf;
    let lf = filter_inductor(fc, cf)?;
    FilterDesign::new(cf, lf, region)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulationCheck {
    pub pass: bool,
    /// Available minus required gain.
    pub margin: f64,
    pub required: f64,
    pub available: f64,
}

/// Peak gain demand `(1 + k) Vm_module / Vin_min` against the full-load gain
/// at `fs_min`. Zero demand is always reachable by phase shift.
pub fn regulation_check(tank: &ResonantTank, spec: &DesignSpec) -> Result<RegulationCheck> {
    let required = (1.0 + spec.grid.k) * spec.grid.module_peak(spec.n_series) / spec.vin_min;
    let load = LoadEstimate::new(tank, &spec.grid, spec.n_series, spec.grid_peak_current(spec.po_max));
    let available = fha::gain_fha(tank, load.q, tank.normalized_frequency(spec.fs_min))?;
    let margin = available - required;
    Ok(RegulationCheck { pass: margin > 0.0, margin, required, available })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_peaks() {
        let g = GridSpec::table1();
        assert_relative_eq!(g.vm(), 11_267.65, max_relative = 1e-5);
        assert_relative_eq!(g.module_peak(2), 5_633.8, max_relative = 1e-4);
        assert_eq!(g.polarity(0.001), 1.0);
        assert_eq!(g.polarity(0.01), -1.0);
        assert!(GridSpec { k: 0.06, ..g }.validate().is_err());
    }

    #[test]
    fn turns_ratio_examples() {
        let g = GridSpec::table1();
        let t = turns_ratio(&g, 600.0).unwrap();
        assert!((t.raw - 9.859).abs() < 1e-3);
        assert_eq!(t.n, 10.0);
        let id = GridSpec { vo: 6.0_f64.sqrt() * 600.0, k: 0.0, ..g };
        assert_relative_eq!(turns_ratio(&id, 600.0).unwrap().raw, 1.0, max_relative = 1e-15);
        assert_relative_eq!(turns_ratio(&g, 1200.0).unwrap().raw, t.raw / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn cr_min_examples() {
        let c = cr_min(10.0, 60.0, 45e3, 850.0, 5634.0).unwrap();
        assert_relative_eq!(c, 11.63e-6, max_relative = 2e-3);
        assert!(matches!(cr_min(10.0, 60.0, 45e3, 563.4, 5634.0), Err(DesignError::Infeasible(_))));
        assert_relative_eq!(cr_min(10.0, 30.0, 45e3, 850.0, 5634.0).unwrap(), c / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn tank_from_fr1_round_trips_table1() {
        let fr1 = 1.0 / (2.0 * PI * (4e-6_f64 * 3.3e-6).sqrt());
        let (lr, lm) = tank_from_fr1(fr1, 3.3e-6, 26.0).unwrap();
        assert_relative_eq!(lr, 4e-6, max_relative = 1e-12);
        assert_relative_eq!(lm, 100e-6, max_relative = 1e-12);
        let (lr2, _) = tank_from_fr1(fr1, 6.6e-6, 26.0).unwrap();
        assert_relative_eq!(lr2, 2e-6, max_relative = 1e-12);
    }

    #[test]
    fn filter_capacitor_examples() {
        let g = GridSpec::table1();
        let im = 2.0 * 30e3 / g.vm();
        assert_relative_eq!(im, 5.325, max_relative = 1e-3);
        let c = filter_capacitor(im, g.vm(), g.fg, ESeries::E6).unwrap();
        assert_relative_eq!(c.raw, 0.1253e-6, max_relative = 1e-3);
        assert_relative_eq!(c.cf, 0.1e-6, max_relative = 1e-12);
        // the finer series lands on 0.12 uF
        assert_relative_eq!(ESeries::E12.round_down(c.raw), 0.12e-6, max_relative = 1e-12);
        let c2 = filter_capacitor(2.0 * im, g.vm(), g.fg, ESeries::E6).unwrap();
        assert_relative_eq!(c2.raw, 2.0 * c.raw, max_relative = 1e-15);
    }

    #[test]
    fn round_down_exact_values_are_kept() {
        for s in [ESeries::E6, ESeries::E12] {
            for &m in s.mantissas() {
                assert_relative_eq!(s.round_down(m * 1e-7), m * 1e-7, max_relative = 1e-12);
            }
        }
        assert_relative_eq!(ESeries::E6.round_down(0.99e-6), 0.68e-6, max_relative = 1e-12);
    }

    #[test]
    fn filter_inductor_examples() {
        assert_relative_eq!(filter_inductor(4e3, 0.1e-6).unwrap(), 15.83e-3, max_relative = 1e-3);
        assert_relative_eq!(filter_inductor(13e3, 0.1e-6).unwrap(), 1.499e-3, max_relative = 1e-3);
        let l = filter_inductor(2e3, 0.1e-6).unwrap();
        assert_relative_eq!(filter_inductor(4e3, 0.1e-6).unwrap(), l / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn region_bands() {
        let (lo, hi) = region_band(Region::Region2, 43.81e3, 8.59e3, 60.0, 15.0, 3.0).unwrap();
        assert_eq!((lo, hi), (900.0, 8.59e3));
        assert_relative_eq!((lo * hi).sqrt(), 2.78e3, max_relative = 2e-3);
        let (lo, hi) = region_band(Region::Region1, 43.81e3, 8.59e3, 60.0, 15.0, 3.0).unwrap();
        assert_eq!(lo, 8.59e3);
        assert_relative_eq!(hi, 14.60e3, max_relative = 1e-3);
        assert!(matches!(
            region_band(Region::Region2, 43.81e3, 900.0, 60.0, 15.0, 3.0),
            Err(DesignError::EmptyBand { .. })
        ));
    }

    #[test]
    fn auto_region_follows_size_flag() {
        let mut spec = DesignSpec::table1();
        let f = select_filter_region(&spec, 43.81e3, 8.59e3).unwrap();
        assert_eq!(f.region, Region::Region2);
        assert_relative_eq!(f.fc, (900.0_f64 * 8.59e3).sqrt(), max_relative = 1e-9);
        spec.size_constrained = true;
        assert_eq!(select_filter_region(&spec, 43.81e3, 8.59e3).unwrap().region, Region::Region1);
    }

    #[test]
    fn regulation_examples() {
        let spec = DesignSpec::table1();
        let tank = ResonantTank::new(4e-6, 3.3e-6, 100e-6, 10.0).unwrap();
        let r = regulation_check(&tank, &spec).unwrap();
        assert!(r.pass, "{r:?}");
        let half = ResonantTank { n: 5.0, ..tank };
        let r5 = regulation_check(&half, &spec).unwrap();
        assert!(!r5.pass);
        assert!(r5.required > 1.9 * r5.available);
    }

    #[test]
    fn filter_design_validation() {
        let f = FilterDesign::new(0.1e-6, 16e-3, Region::Region2).unwrap();
        assert!(f.validate().is_ok());
        let broken = FilterDesign { fc: f.fc * 1.01, ..f };
        assert!(broken.validate().is_err());
    }
}
