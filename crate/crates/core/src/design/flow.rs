//! The iterative design loop and its replayable trace.

use serde::{Deserialize, Serialize};

use super::{
    cr_min, cutoff, regulation_check, select_filter_region, tank_from_fr1, turns_ratio, DesignError, DesignSpec,
    FilterDesign, Region, Result,
};
use crate::analysis::{self, MetricOptions, Metrics};
use crate::fha::ResonantTank;
use crate::sim::{self, Schedule, SimConfig, SimError, SimMode, SimOutput};

/// Time-domain backend for the simulation-backed checks.
pub trait DesignSimulator {
    fn mode(&self) -> SimMode;
    fn run(
        &mut self,
        tank: &ResonantTank,
        filter: &FilterDesign,
        grid: &super::GridSpec,
        schedule: &Schedule,
    ) -> std::result::Result<SimOutput, SimError>;
}

/// [`DesignSimulator`] backed by [`sim::simulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EngineSimulator {
    pub config: SimConfig,
}

impl EngineSimulator {
    pub fn new(config: SimConfig) -> Self {
        Self { config }
    }

    pub fn for_spec(spec: &DesignSpec, mode: SimMode) -> Self {
        let mut config = SimConfig::switched(spec.fs_min, spec.fs_max).with_mode(mode, spec.grid.fg);
        config.n_series = spec.n_series;
        config.control = sim::ControlGains::harmonic();
        Self { config }
    }
}

impl DesignSimulator for EngineSimulator {
    fn mode(&self) -> SimMode {
        self.config.mode
    }

    fn run(
        &mut self,
        tank: &ResonantTank,
        filter: &FilterDesign,
        grid: &super::GridSpec,
        schedule: &Schedule,
    ) -> std::result::Result<SimOutput, SimError> {
        sim::simulate(tank, filter, grid, schedule, &self.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    TurnsRatio,
    InitialTank,
    CrStress,
    Regulation,
    ZvsCoverage,
    FilterSizing,
    Thd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    IncreaseCr { from: f64, to: f64 },
    DecreaseLm { from: f64, to: f64 },
    IncreaseLf { from: f64, to: f64 },
    DecreaseLf { from: f64, to: f64 },
}

/// One evaluated check and the parameter change it caused, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Count of budgeted checks so far; sizing steps carry the current count.
    pub iteration: u32,
    pub check: Check,
    pub tank: Option<ResonantTank>,
    pub filter: Option<FilterDesign>,
    pub metric: Option<f64>,
    pub limit: Option<f64>,
    pub passed: bool,
    pub action: Option<Action>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible { check: Check, reason: String },
}

/// Final checks repeated with a second simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub mode: SimMode,
    pub vcr_peak: f64,
    pub vcr_ok: bool,
    pub zvs_coverage: Option<f64>,
    pub zvs_ok: bool,
    pub thd: Option<f64>,
    pub thd_ok: bool,
    pub full_load: Metrics,
    pub light_load: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub spec: DesignSpec,
    pub inner_mode: SimMode,
    pub n_raw: f64,
    pub cr_min: Option<f64>,
    pub tank: Option<ResonantTank>,
    pub filter: Option<FilterDesign>,
    pub iterations: u32,
    pub trace: Vec<TraceEntry>,
    pub verdict: Verdict,
    pub validation: Option<Validation>,
}

impl DesignReport {
    pub fn is_feasible(&self) -> bool {
        self.verdict == Verdict::Feasible
    }
}

struct Recorder<'a> {
    spec: &'a DesignSpec,
    trace: Vec<TraceEntry>,
    iterations: u32,
}

impl Recorder<'_> {
    /// Spends one iteration; false once the budget is gone.
    fn spend(&mut self) -> bool {
        if self.iterations >= self.spec.controls.max_iterations {
            return false;
        }
        self.iterations += 1;
        true
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        check: Check,
        tank: Option<ResonantTank>,
        filter: Option<FilterDesign>,
        metric: Option<f64>,
        limit: Option<f64>,
        passed: bool,
        action: Option<Action>,
        note: Option<String>,
    ) {
        self.trace.push(TraceEntry {
            iteration: self.iterations,
            check,
            tank,
            filter,
            metric,
            limit,
            passed,
            action,
            note,
        });
    }
}

fn schedule_for(spec: &DesignSpec, vin: f64, po: f64) -> Result<Schedule> {
    let duration = f64::from(spec.controls.check_cycles) / spec.grid.fg;
    Ok(Schedule::constant(vin, spec.grid_peak_current(po), duration)?)
}

/// Metrics over the last two grid cycles of a check run.
fn tail_metrics(out: &SimOutput) -> Result<Metrics> {
    let end = (out.duration() / out.sample_interval + 1e-6).floor() * out.sample_interval;
    analysis::window_metrics(out, end, 2, &MetricOptions::default())
        .map_err(|e| DesignError::Invalid(format!("check run too short: {e}")))
}

fn check_run(
    sim: &mut dyn DesignSimulator,
    spec: &DesignSpec,
    tank: &ResonantTank,
    filter: &FilterDesign,
    vin: f64,
    po: f64,
) -> Result<Metrics> {
    let out = sim.run(tank, filter, &spec.grid, &schedule_for(spec, vin, po)?)?;
    tail_metrics(&out)
}

/// Runs the sizing-and-verification flow:
///
/// 1. turns ratio;
/// 2. initial tank from `fr1 = fs_min / fr1_ratio` and the minimum resonant
///    capacitor;
/// 3. capacitor-stress loop (`Cr` up);
/// 4. regulation and light-load ZVS loop (`Lm` down);
/// 5. filter sizing;
/// 6. light-load THD loop (`Lf` moved away from the tank resonances within
///    the region band).
pub fn run_design_loop(spec: &DesignSpec, sim: &mut dyn DesignSimulator) -> Result<DesignReport> {
    spec.validate()?;
    let c = spec.controls;
    let grid = spec.grid;
    let mut rec = Recorder { spec, trace: Vec::new(), iterations: 0 };
    let tr = turns_ratio(&grid, spec.vin_min)?;
    let n = tr.n;
    rec.push(Check::TurnsRatio, None, None, Some(tr.raw), None, true, None, Some(format!("N = {n}")));

    let mut report = DesignReport {
        spec: spec.clone(),
        inner_mode: sim.mode(),
        n_raw: tr.raw,
        cr_min: None,
        tank: None,
        filter: None,
        iterations: 0,
        trace: Vec::new(),
        verdict: Verdict::Feasible,
        validation: None,
    };
    let finish = |mut report: DesignReport, rec: Recorder, tank, filter, verdict| {
        report.tank = tank;
        report.filter = filter;
        report.iterations = rec.iterations;
        report.trace = rec.trace;
        report.verdict = verdict;
        Ok(report)
    };
    let infeasible = |check, reason: &str| Verdict::Infeasible { check, reason: reason.to_string() };
    let exhausted = |check| infeasible(check, "iteration budget exhausted");

    let fr1 = spec.fs_min / c.fr1_ratio;
    let im_max = spec.grid_peak_current(spec.po_max);
    let crm = match cr_min(n, im_max, spec.fs_min, spec.vcr_max, grid.module_peak(spec.n_series)) {
        Ok(v) => v,
        Err(DesignError::Infeasible(msg)) => {
            rec.push(Check::CrStress, None, None, None, Some(spec.vcr_max), false, None, Some(msg.clone()));
            return finish(report, rec, None, None, infeasible(Check::CrStress, &msg));
        }
        Err(e) => return Err(e),
    };
    report.cr_min = Some(crm);
    let cr = crm.max(c.cr_floor);
    let (lr, lm) = tank_from_fr1(fr1, cr, c.m_init)?;
    let mut tank = ResonantTank::new(lr, cr, lm, n)?;
    rec.push(Check::InitialTank, Some(tank), None, Some(crm), None, true, None, None);

    let provisional = |tank: &ResonantTank| select_filter_region(spec, tank.fr1(), tank.fr2());
    let mut filter = match provisional(&tank) {
        Ok(f) => f,
        Err(e) => {
            let msg = e.to_string();
            rec.push(Check::FilterSizing, Some(tank), None, None, None, false, None, Some(msg.clone()));
            return finish(report, rec, Some(tank), None, infeasible(Check::FilterSizing, &msg));
        }
    };

    // capacitor stress at the lowest input voltage and full load
    loop {
        if !rec.spend() {
            return finish(report, rec, Some(tank), Some(filter), exhausted(Check::CrStress));
        }
        let m = check_run(sim, spec, &tank, &filter, spec.vin_min, spec.po_max)?;
        if m.vcr_peak <= spec.vcr_max {
            rec.push(Check::CrStress, Some(tank), Some(filter), Some(m.vcr_peak), Some(spec.vcr_max), true, None, None);
            break;
        }
        let ratio = tank.m();
        let cr_new = tank.cr * c.cr_step;
        let (lr, _) = tank_from_fr1(fr1, cr_new, ratio)?;
        let next = ResonantTank::new(lr, cr_new, (ratio - 1.0) * lr, n)?;
        let action = Action::IncreaseCr { from: tank.cr, to: cr_new };
        rec.push(
            Check::CrStress,
            Some(tank),
            Some(filter),
            Some(m.vcr_peak),
            Some(spec.vcr_max),
            false,
            Some(action),
            None,
        );
        tank = next;
        filter = provisional(&tank)?;
    }

    // regulation, then light-load soft switching
    loop {
        if !rec.spend() {
            return finish(report, rec, Some(tank), Some(filter), exhausted(Check::Regulation));
        }
        let reg = regulation_check(&tank, spec)?;
        let lm_next = tank.lm * c.lm_step;
        if !reg.pass {
            let action = Action::DecreaseLm { from: tank.lm, to: lm_next };
            rec.push(
                Check::Regulation,
                Some(tank),
                None,
                Some(reg.available),
                Some(reg.required),
                false,
                Some(action),
                None,
            );
            tank.lm = lm_next;
            continue;
        }
        rec.push(Check::Regulation, Some(tank), None, Some(reg.available), Some(reg.required), true, None, None);

        if !rec.spend() {
            return finish(report, rec, Some(tank), Some(filter), exhausted(Check::ZvsCoverage));
        }
        filter = match provisional(&tank) {
            Ok(f) => f,
            Err(e) => {
                let msg = e.to_string();
                rec.push(Check::FilterSizing, Some(tank), None, None, None, false, None, Some(msg.clone()));
                return finish(report, rec, Some(tank), None, infeasible(Check::FilterSizing, &msg));
            }
        };
        let m = check_run(sim, spec, &tank, &filter, spec.vin_max, spec.po_min)?;
        let cov = m.zvs_coverage.unwrap_or(0.0);
        if cov >= c.zvs_threshold {
            rec.push(Check::ZvsCoverage, Some(tank), Some(filter), Some(cov), Some(c.zvs_threshold), true, None, None);
            break;
        }
        let action = Action::DecreaseLm { from: tank.lm, to: lm_next };
        rec.push(
            Check::ZvsCoverage,
            Some(tank),
            Some(filter),
            Some(cov),
            Some(c.zvs_threshold),
            false,
            Some(action),
            None,
        );
        tank.lm = lm_next;
    }

    // final filter, then light-load distortion
    filter = match provisional(&tank) {
        Ok(f) => f,
        Err(e) => {
            let msg = e.to_string();
            rec.push(Check::FilterSizing, Some(tank), None, None, None, false, None, Some(msg.clone()));
            return finish(report, rec, Some(tank), None, infeasible(Check::FilterSizing, &msg));
        }
    };
    rec.push(Check::FilterSizing, Some(tank), Some(filter), Some(filter.fc), None, true, None, None);
    loop {
        if !rec.spend() {
            return finish(report, rec, Some(tank), Some(filter), exhausted(Check::Thd));
        }
        let m = check_run(sim, spec, &tank, &filter, spec.vin_max, spec.po_min)?;
        let thd = m.thd.unwrap_or(f64::INFINITY);
        if thd <= spec.thd_max {
            rec.push(Check::Thd, Some(tank), Some(filter), Some(thd), Some(spec.thd_max), true, None, None);
            return finish(report, rec, Some(tank), Some(filter), Verdict::Feasible);
        }
        let (lf_next, action) = match filter.region {
            Region::Region2 => {
                let lf = filter.lf * c.lf_step;
                (lf, Action::IncreaseLf { from: filter.lf, to: lf })
            }
            Region::Region1 => {
                let lf = filter.lf / c.lf_step;
                (lf, Action::DecreaseLf { from: filter.lf, to: lf })
            }
        };
        let fc_next = cutoff(lf_next, filter.cf);
        let in_band = match filter.region {
            Region::Region2 => fc_next >= c.x * grid.fg,
            Region::Region1 => fc_next <= tank.fr1() / c.y,
        };
        if !in_band {
            let note = format!("next cutoff {fc_next:.1} Hz leaves the {} band", filter.region);
            rec.push(Check::Thd, Some(tank), Some(filter), Some(thd), Some(spec.thd_max), false, None, Some(note));
            return finish(report, rec, Some(tank), Some(filter), infeasible(Check::Thd, "filter band bound reached"));
        }
        rec.push(Check::Thd, Some(tank), Some(filter), Some(thd), Some(spec.thd_max), false, Some(action), None);
        filter = FilterDesign::new(filter.cf, lf_next, filter.region)?;
    }
}

/// Runs the loop with the envelope simulator and, when it ends feasible,
/// validates the result with the switched simulator.
pub fn design_and_validate(spec: &DesignSpec) -> Result<DesignReport> {
    let mut report = run_design_loop(spec, &mut EngineSimulator::for_spec(spec, SimMode::Envelope))?;
    if report.is_feasible() {
        validate_switched(&mut report, &mut EngineSimulator::for_spec(spec, SimMode::Switched))?;
    }
    Ok(report)
}

/// Repeats the stress, ZVS and THD checks of a feasible report with `sim`
/// (normally the switched integrator) and attaches the outcome.
pub fn validate_switched(report: &mut DesignReport, sim: &mut dyn DesignSimulator) -> Result<()> {
    let (Some(tank), Some(filter)) = (report.tank, report.filter) else {
        return Err(DesignError::Invalid("report has no final tank and filter".into()));
    };
    let spec = report.spec.clone();
    let full = check_run(sim, &spec, &tank, &filter, spec.vin_min, spec.po_max)?;
    let light = check_run(sim, &spec, &tank, &filter, spec.vin_max, spec.po_min)?;
    report.validation = Some(Validation {
        mode: sim.mode(),
        vcr_peak: full.vcr_peak,
        vcr_ok: full.vcr_peak <= spec.vcr_max,
        zvs_coverage: light.zvs_coverage,
        zvs_ok: light.zvs_coverage.is_some_and(|c| c >= spec.controls.zvs_threshold),
        thd: light.thd,
        thd_ok: light.thd.is_some_and(|t| t <= spec.thd_max),
        full_load: full,
        light_load: light,
    });
    Ok(())
}
