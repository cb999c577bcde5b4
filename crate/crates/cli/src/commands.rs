//! The four verbs.

use std::path::PathBuf;

use llc_inverter::analysis::{self, MetricOptions, Metrics, SegmentMetrics};
use llc_inverter::design::{self, DesignReport};
use llc_inverter::fha::{self, LoadContext};
use llc_inverter::parallel::Execution;
use llc_inverter::sim::PRESET_NAMES;
use llc_inverter::{DesignSpec, FilterDesign, ResonantTank, Schedule, SimConfig, SimMode, SimOutput};
use serde::{Deserialize, Serialize};

use crate::config::{self, Loaded, SweepParam};
use crate::output::{self, num, opt};
use crate::{Cli, CliError, Outcome, DEFAULT_OUT_DIR};

/// Parsed configuration merged with command-line overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub loaded: Loaded,
    pub spec: DesignSpec,
    pub preset: Option<String>,
    pub mode: SimMode,
    pub dt: Option<f64>,
    pub jobs: Option<usize>,
    pub out: PathBuf,
}

impl Context {
    /// Flags win over the config file; the environment only supplies the
    /// output directory when neither names one.
    pub fn new(cli: &Cli, env_out: Option<PathBuf>) -> Result<Self, CliError> {
        let loaded = Loaded::from_path(cli.config.as_deref())?;
        let spec = loaded.spec_file.design_spec()?;
        let run = &loaded.run;
        let out = cli
            .out
            .clone()
            .or_else(|| run.out.as_deref().map(|p| loaded.resolve(p)))
            .or(env_out)
            .unwrap_or_else(|| DEFAULT_OUT_DIR.into());
        if cli.jobs == Some(0) {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        Ok(Self {
            preset: cli.preset.clone().or_else(|| run.preset.clone()),
            mode: cli.mode.or(run.mode).unwrap_or_default(),
            dt: cli.dt.or(run.dt.map(f64::from)),
            jobs: cli.jobs,
            spec,
            out,
            loaded,
        })
    }

    pub fn tank(&self) -> Result<ResonantTank, CliError> {
        self.loaded.spec_file.tank()
    }

    pub fn filter(&self, tank: &ResonantTank) -> Result<FilterDesign, CliError> {
        self.loaded.spec_file.filter(tank)
    }

    /// `--preset` beats a schedule file; the c1-c4 preset is the fallback.
    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let schedule = match (&self.preset, &self.loaded.schedule_file) {
            (Some(name), _) => Schedule::preset(name).ok_or_else(|| {
                CliError::Config(format!("unknown preset `{name}` (expected one of {})", PRESET_NAMES.join(", ")))
            })?,
            (None, Some(file)) => file.schedule()?,
            (None, None) => Schedule::c1_c4(),
        };
        match self.loaded.run.segment_cycles {
            Some(c) if !(c.0 > 0.0) => Err(CliError::Config(format!("segment_cycles must be positive, got {}", c.0))),
            Some(c) => Ok(schedule.with_segment_cycles(c.0, self.spec.grid.fg)),
            None => Ok(schedule),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let run = &self.loaded.run;
        let mut c = SimConfig::switched(self.spec.fs_min, self.spec.fs_max).with_mode(self.mode, self.spec.grid.fg);
        c.n_series = self.spec.n_series;
        if let Some(dt) = self.dt {
            c.dt = dt;
        }
        if let Some(spc) = run.samples_per_cycle {
            c.samples_per_cycle = spc;
        }
        if let Some(th) = run.zvs_current_threshold {
            c.zvs_current_threshold = th.0;
        }
        c.control = run.control.as_ref().map(|s| s.gains()).unwrap_or_default();
        c.validate()?;
        Ok(c)
    }

    fn out_dir(&self) -> Result<&PathBuf, CliError> {
        output::create_dir(&self.out)?;
        Ok(&self.out)
    }
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub const CURVE_COLUMNS: [&str; 7] = ["load", "rac", "q", "fs", "fx", "gain", "theta_deg"];
pub const LM_COLUMNS: [&str; 3] = ["fs", "lm", "theta_deg"];

/// Writes `gain_curves.csv` (one family per load) and `angle_vs_lm.csv`
/// (one family per switching frequency).
pub fn analyze(ctx: &Context) -> Result<Outcome, CliError> {
    let tank = ctx.tank()?;
    let plan = ctx.loaded.run.analyze.clone().unwrap_or_default().plan(&ctx.spec)?;
    let vo = ctx.spec.grid.phase_rms() / f64::from(ctx.spec.n_series);
    let rac_of = |po: f64| LoadContext::new(&tank, vo, po).map(|l| l.rac);
    let racs = plan.loads.iter().map(|&po| rac_of(po)).collect::<Result<Vec<_>, _>>()?;
    let curves = fha::sweep_curves(&tank, &racs, &plan.fs, Execution::Sequential)?;
    let fr1 = tank.fr1();
    let dir = ctx.out_dir()?;
    let per_load = plan.fs.len();
    let rows = curves
        .iter()
        .enumerate()
        .map(|(i, r)| [plan.loads[i / per_load], r.rac, r.q, r.fs, r.fs / fr1, r.gain, r.theta.to_degrees()].map(num));
    let a = output::write_csv(&dir.join("gain_curves.csv"), &CURVE_COLUMNS, rows)?;
    let lm_rows = fha::sweep_angle_vs_lm(&tank, rac_of(plan.lm_load)?, &plan.lm, &plan.lm_fs, Execution::Sequential)?;
    let rows = lm_rows.iter().map(|&(fs, lm, th)| [fs, lm, th.to_degrees()].map(num));
    let b = output::write_csv(&dir.join("angle_vs_lm.csv"), &LM_COLUMNS, rows)?;
    report_written(&[a, b]);
    Ok(Outcome::Success)
}

/// Runs the design loop and writes `design_report.json`.
pub fn design(ctx: &Context) -> Result<Outcome, CliError> {
    let report: DesignReport = design::design_and_validate(&ctx.spec)?;
    let path = output::write_json(&ctx.out_dir()?.join("design_report.json"), &report)?;
    report_written(&[path]);
    match &report.verdict {
        design::Verdict::Feasible => Ok(Outcome::Success),
        design::Verdict::Infeasible { check, reason } => {
            eprintln!("infeasible at {check:?}: {reason}");
            Ok(Outcome::Infeasible)
        }
    }
}

/// Everything `simulate` knows about a run apart from the waveforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub mode: SimMode,
    pub tank: ResonantTank,
    pub filter: FilterDesign,
    pub config: SimConfig,
    pub schedule: Schedule,
    pub samples: usize,
    pub events: usize,
    pub steps: u64,
    pub controller_updates: u64,
    pub saturated_updates: u64,
    /// Metrics over the final grid cycles; absent for runs shorter than a
    /// cycle.
    pub run: Option<Metrics>,
    pub segments: Vec<SegmentMetrics>,
}

pub fn simulation_report(
    tank: ResonantTank,
    filter: FilterDesign,
    config: SimConfig,
    schedule: Schedule,
    out: &SimOutput,
) -> SimulationReport {
    let opts = MetricOptions::default();
    SimulationReport {
        mode: out.mode,
        tank,
        filter,
        run: analysis::run_metrics(out, &schedule, &opts).ok(),
        segments: analysis::segment_metrics(out, &schedule, &opts),
        config,
        schedule,
        samples: out.channels.len(),
        events: out.events.len(),
        steps: out.steps,
        controller_updates: out.controller_updates,
        saturated_updates: out.saturated_updates,
    }
}

/// Writes the waveforms, the switching-event log and `metrics.json`.
pub fn simulate(ctx: &Context, binary: bool) -> Result<Outcome, CliError> {
    let tank = ctx.tank()?;
    let filter = ctx.filter(&tank)?;
    let schedule = ctx.schedule()?;
    let config = ctx.sim_config()?;
    let out = llc_inverter::simulate(&tank, &filter, &ctx.spec.grid, &schedule, &config)?;
    let dir = ctx.out_dir()?;
    let waves = if binary {
        output::write_waveforms_binary(&dir.join("waveforms.bin"), &out.channels)?
    } else {
        output::write_waveforms_csv(&dir.join("waveforms.csv"), &out.channels)?
    };
    let events = output::write_events_csv(&dir.join("events.csv"), &out.events)?;
    let report = simulation_report(tank, filter, config, schedule, &out);
    let metrics = output::write_json(&dir.join("metrics.json"), &report)?;
    report_written(&[waves, events, metrics]);
    Ok(Outcome::Success)
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub values: Vec<f64>,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub params: Vec<SweepParam>,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_METRIC_COLUMNS: [&str; 12] = [
    "status",
    "thd",
    "zvs_coverage",
    "hard_switch_fraction",
    "vcr_peak",
    "i_lr_rms",
    "i_lm_rms",
    "i_grid_rms",
    "p_in_avg",
    "p_out_avg",
    "zero_crossing_error",
    "error",
];

/// Cartesian product, first axis slowest.
pub fn grid_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

struct SweepBase {
    tank: ResonantTank,
    filter: FilterDesign,
    region_fixed: bool,
    schedule: Schedule,
    config: SimConfig,
    grid: llc_inverter::GridSpec,
}

impl SweepBase {
    fn evaluate(&self, params: &[SweepParam], values: &[f64]) -> Result<Metrics, CliError> {
        let (mut t, mut f, mut s) = (self.tank, self.filter, self.schedule.clone());
        let mut fc = None;
        for (&p, &v) in params.iter().zip(values) {
            match p {
                SweepParam::Lr => t.lr = v,
                SweepParam::Cr => t.cr = v,
                SweepParam::Lm => t.lm = v,
                SweepParam::N => t.n = v,
                SweepParam::Cf => f.cf = v,
                SweepParam::Lf => f.lf = v,
                SweepParam::Fc => fc = Some(v),
                SweepParam::Vin => s = s.with_vin(v),
                SweepParam::Ipeak => s = s.with_ipeak(v),
            }
        }
        let tank = ResonantTank::new(t.lr, t.cr, t.lm, t.n)?;
        let lf = if fc.is_some() { None } else { Some(f.lf) };
        let region = self.region_fixed.then_some(f.region);
        let filter = config::filter_from(f.cf, lf, fc, region, &tank)?;
        let out = llc_inverter::simulate(&tank, &filter, &self.grid, &s, &self.config)?;
        Ok(analysis::run_metrics(&out, &s, &MetricOptions::default())?)
    }
}

#[cfg(feature = "parallel")]
fn map_points<F>(points: &[Vec<f64>], jobs: Option<usize>, f: F) -> Result<Vec<SweepRow>, CliError>
where
    F: Fn(&Vec<f64>) -> SweepRow + Sync + Send,
{
    use llc_inverter::parallel::map;
    match jobs {
        Some(1) => Ok(map(points, Execution::Sequential, f)),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(|| map(points, Execution::Parallel, f)))
        }
        None => Ok(map(points, Execution::Parallel, f)),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_points<F>(points: &[Vec<f64>], _jobs: Option<usize>, f: F) -> Result<Vec<SweepRow>, CliError>
where
    F: Fn(&Vec<f64>) -> SweepRow + Sync + Send,
{
    Ok(points.iter().map(f).collect())
}

/// Evaluates every grid point; failures are recorded in their row.
pub fn sweep_report(ctx: &Context) -> Result<SweepReport, CliError> {
    let axes = &ctx.loaded.run.sweep;
    if axes.is_empty() {
        return Err(CliError::Config("sweep needs at least one [[sweep]] axis".into()));
    }
    let params: Vec<SweepParam> = axes.iter().map(|a| a.param).collect();
    let values = axes.iter().map(|a| a.values()).collect::<Result<Vec<_>, _>>()?;
    let tank = ctx.tank()?;
    let base = SweepBase {
        filter: ctx.filter(&tank)?,
        region_fixed: ctx.loaded.spec_file.filter.is_some_and(|f| f.region.is_some()),
        tank,
        schedule: ctx.schedule()?,
        config: ctx.sim_config()?,
        grid: ctx.spec.grid,
    };
    let points = grid_points(&values);
    let rows = map_points(&points, ctx.jobs, |p| match base.evaluate(&params, p) {
        Ok(m) => SweepRow { values: p.clone(), metrics: Some(m), error: None },
        Err(e) => SweepRow { values: p.clone(), metrics: None, error: Some(e.to_string()) },
    })?;
    Ok(SweepReport { params, rows })
}

pub fn metric_cells(m: Option<&Metrics>, error: Option<&str>) -> Vec<String> {
    let status = if error.is_some() { "error" } else { "ok" };
    let mut cells = vec![status.to_string()];
    match m {
        Some(m) => cells.extend([
            opt(m.thd),
            opt(m.zvs_coverage),
            opt(m.hard_switch_fraction),
            num(m.vcr_peak),
            num(m.i_lr_rms),
            num(m.i_lm_rms),
            num(m.i_grid_rms),
            num(m.p_in_avg),
            num(m.p_out_avg),
            num(m.zero_crossing_error),
        ]),
        None => cells.extend(std::iter::repeat_n(String::new(), 10)),
    }
    cells.push(error.unwrap_or_default().to_string());
    cells
}

/// Writes `sweep.csv` and `sweep.json`, one row per grid point in grid order.
pub fn sweep(ctx: &Context) -> Result<Outcome, CliError> {
    let report = sweep_report(ctx)?;
    let dir = ctx.out_dir()?;
    let mut header: Vec<&str> = report.params.iter().map(|p| p.name()).collect();
    header.extend(SWEEP_METRIC_COLUMNS);
    let rows = report.rows.iter().map(|r| {
        let mut cells: Vec<String> = r.values.iter().map(|&v| num(v)).collect();
        cells.extend(metric_cells(r.metrics.as_ref(), r.error.as_deref()));
        cells
    });
    let a = output::write_csv(&dir.join("sweep.csv"), &header, rows)?;
    let b = output::write_json(&dir.join("sweep.json"), &report)?;
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} grid points failed; see the error column", report.rows.len());
    }
    report_written(&[a, b]);
    Ok(Outcome::Success)
}
