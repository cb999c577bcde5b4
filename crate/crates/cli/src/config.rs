//! Run configuration, design spec and schedule files.
//!
//! All three are TOML. Every numeric field accepts an engineering suffix.
//! Paths inside a run configuration are relative to the file that names
//! them.

use std::path::{Path, PathBuf};

use llc_inverter::design::{self, ESeries, IterationControls, RegionPreference};
use llc_inverter::sim::{ControlGains, Segment};
use llc_inverter::{DesignSpec, FilterDesign, GridSpec, Region, ResonantTank, Schedule, SimMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::si::Si;
use crate::CliError;

fn or(v: Option<Si>, default: f64) -> f64 {
    v.map_or(default, f64::from)
}

/// Top-level file passed with `--config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Design spec file; reference-design values when absent.
    pub spec: Option<PathBuf>,
    /// Schedule file; mutually exclusive with `preset`.
    pub schedule: Option<PathBuf>,
    pub preset: Option<String>,
    /// Stretch or truncate every schedule segment to this many grid cycles.
    pub segment_cycles: Option<Si>,
    pub out: Option<PathBuf>,
    pub mode: Option<SimMode>,
    pub dt: Option<Si>,
    pub samples_per_cycle: Option<u32>,
    pub zvs_current_threshold: Option<Si>,
    pub control: Option<ControlSection>,
    pub analyze: Option<AnalyzeSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub bandwidth: Option<Si>,
    pub trim_tau: Option<Si>,
    pub trim_limit: Option<Si>,
    pub trim_harmonics: Option<u32>,
}

impl ControlSection {
    pub fn gains(&self) -> ControlGains {
        let d = ControlGains::default();
        ControlGains {
            bandwidth: or(self.bandwidth, d.bandwidth),
            trim_tau: or(self.trim_tau, d.trim_tau),
            trim_limit: or(self.trim_limit, d.trim_limit),
            trim_harmonics: self.trim_harmonics.unwrap_or(d.trim_harmonics),
        }
    }
}

/// Curve families written by `analyze`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Per-module output powers, one gain/angle family each.
    pub loads: Option<Vec<Si>>,
    pub fs_start: Option<Si>,
    pub fs_stop: Option<Si>,
    pub fs_points: Option<usize>,
    pub lm_start: Option<Si>,
    pub lm_stop: Option<Si>,
    pub lm_points: Option<usize>,
    /// Switching frequencies of the angle-versus-Lm families.
    pub lm_fs: Option<Vec<Si>>,
    /// Per-module power of the angle-versus-Lm families.
    pub lm_load: Option<Si>,
}

/// Resolved `analyze` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzePlan {
    pub loads: Vec<f64>,
    pub fs: Vec<f64>,
    pub lm: Vec<f64>,
    pub lm_fs: Vec<f64>,
    pub lm_load: f64,
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n).map(|k| start + (stop - start) * k as f64 / (n - 1) as f64).collect(),
    }
}

impl AnalyzeSection {
    pub fn plan(&self, spec: &DesignSpec) -> Result<AnalyzePlan, CliError> {
        let n = f64::from(spec.n_series);
        let loads = match &self.loads {
            Some(v) => v.iter().map(|x| x.0).collect(),
            None => vec![spec.po_max / n, spec.po_max / n / 2.0],
        };
        let fs = linspace(or(self.fs_start, 20e3), or(self.fs_stop, 100e3), self.fs_points.unwrap_or(401));
        let lm = linspace(or(self.lm_start, 20e-6), or(self.lm_stop, 500e-6), self.lm_points.unwrap_or(49));
        let lm_fs = match &self.lm_fs {
            Some(v) => v.iter().map(|x| x.0).collect(),
            None => vec![50e3, 60e3, 70e3],
        };
        let plan = AnalyzePlan { loads, fs, lm, lm_fs, lm_load: or(self.lm_load, spec.po_min / n) };
        let positive = |name: &str, v: &[f64]| {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0)) {
                Err(CliError::Config(format!("analyze.{name} needs at least one value, all positive")))
            } else {
                Ok(())
            }
        };
        positive("loads", &plan.loads)?;
        positive("fs", &plan.fs)?;
        positive("lm", &plan.lm)?;
        positive("lm_fs", &plan.lm_fs)?;
        positive("lm_load", &[plan.lm_load])?;
        Ok(plan)
    }
}

/// Parameters a sweep axis can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lr,
    Cr,
    Lm,
    N,
    Cf,
    Lf,
    /// Filter cutoff; sets `Lf` from the current `Cf`.
    Fc,
    /// Scales every segment's input voltage to this value.
    Vin,
    /// Sets every segment's current demand to this value.
    Ipeak,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lr => "lr",
            SweepParam::Cr => "cr",
            SweepParam::Lm => "lm",
            SweepParam::N => "n",
            SweepParam::Cf => "cf",
            SweepParam::Lf => "lf",
            SweepParam::Fc => "fc",
            SweepParam::Vin => "vin",
            SweepParam::Ipeak => "ipeak",
        }
    }
}

/// One `[[sweep]]` table: explicit `values` or a `start`/`stop`/`points` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: SweepParam,
    pub values: Option<Vec<Si>>,
    pub start: Option<Si>,
    pub stop: Option<Si>,
    pub points: Option<usize>,
}

impl SweepAxis {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let name = self.param.name();
        let v = match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) => v.iter().map(|x| x.0).collect(),
            (None, Some(a), Some(b), Some(n)) => linspace(a.0, b.0, n),
            _ => {
                return Err(CliError::Config(format!(
                    "sweep axis `{name}` needs either `values` or all of `start`, `stop`, `points`"
                )))
            }
        };
        if v.is_empty() {
            return Err(CliError::Config(format!("sweep axis `{name}` has no points")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub vo: Option<Si>,
    pub fg: Option<Si>,
    pub k: Option<Si>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSection {
    pub cr_step: Option<Si>,
    pub lm_step: Option<Si>,
    pub lf_step: Option<Si>,
    pub max_iterations: Option<u32>,
    pub zvs_threshold: Option<Si>,
    pub x: Option<Si>,
    pub y: Option<Si>,
    pub fr1_ratio: Option<Si>,
    pub m_init: Option<Si>,
    pub cr_floor: Option<Si>,
    pub check_cycles: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TankSection {
    pub lr: Si,
    pub cr: Si,
    pub lm: Si,
    pub n: Si,
}

/// Filter given by `lf` or by cutoff `fc`; the region defaults to where
/// the cutoff falls relative to the tank's second resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub cf: Si,
    pub lf: Option<Si>,
    pub fc: Option<Si>,
    pub region: Option<Region>,
}

/// Design spec file: overrides on the reference spec, plus the tank and
/// filter that `analyze`, `simulate` and `sweep` operate on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub vin_min: Option<Si>,
    pub vin_max: Option<Si>,
    pub po_min: Option<Si>,
    pub po_max: Option<Si>,
    pub fs_min: Option<Si>,
    pub fs_max: Option<Si>,
    pub vcr_max: Option<Si>,
    pub thd_max: Option<Si>,
    pub n_series: Option<u32>,
    pub region: Option<RegionPreference>,
    pub size_constrained: Option<bool>,
    pub cf_series: Option<ESeries>,
    pub grid: Option<GridSection>,
    pub controls: Option<ControlsSection>,
    pub tank: Option<TankSection>,
    pub filter: Option<FilterSection>,
}

impl SpecFile {
    pub fn design_spec(&self) -> Result<DesignSpec, CliError> {
        let d = DesignSpec::table1();
        let g = self.grid.unwrap_or_default();
        let c = self.controls.unwrap_or_default();
        let dc = IterationControls::default();
        let spec = DesignSpec {
            grid: GridSpec { vo: or(g.vo, d.grid.vo), fg: or(g.fg, d.grid.fg), k: or(g.k, d.grid.k) },
            vin_min: or(self.vin_min, d.vin_min),
            vin_max: or(self.vin_max, d.vin_max),
            po_min: or(self.po_min, d.po_min),
            po_max: or(self.po_max, d.po_max),
            fs_min: or(self.fs_min, d.fs_min),
            fs_max: or(self.fs_max, d.fs_max),
            vcr_max: or(self.vcr_max, d.vcr_max),
            thd_max: or(self.thd_max, d.thd_max),
            n_series: self.n_series.unwrap_or(d.n_series),
            region_preference: self.region.unwrap_or(d.region_preference),
            size_constrained: self.size_constrained.unwrap_or(d.size_constrained),
            cf_series: self.cf_series.unwrap_or(d.cf_series),
            controls: IterationControls {
                cr_step: or(c.cr_step, dc.cr_step),
                lm_step: or(c.lm_step, dc.lm_step),
                lf_step: or(c.lf_step, dc.lf_step),
                max_iterations: c.max_iterations.unwrap_or(dc.max_iterations),
                zvs_threshold: or(c.zvs_threshold, dc.zvs_threshold),
                x: or(c.x, dc.x),
                y: or(c.y, dc.y),
                fr1_ratio: or(c.fr1_ratio, dc.fr1_ratio),
                m_init: or(c.m_init, dc.m_init),
                cr_floor: or(c.cr_floor, dc.cr_floor),
                check_cycles: c.check_cycles.unwrap_or(dc.check_cycles),
            },
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    /// The reference tank unless overridden.
    pub fn tank(&self) -> Result<ResonantTank, CliError> {
        let t = self.tank.unwrap_or(TankSection { lr: Si(4e-6), cr: Si(3.3e-6), lm: Si(100e-6), n: Si(10.0) });
        ResonantTank::new(t.lr.0, t.cr.0, t.lm.0, t.n.0).map_err(|e| CliError::Config(format!("tank: {e}")))
    }

    /// The 16 mH reference filter unless overridden.
    pub fn filter(&self, tank: &ResonantTank) -> Result<FilterDesign, CliError> {
        let f = self.filter.unwrap_or(FilterSection { cf: Si(0.1e-6), lf: Some(Si(16e-3)), fc: None, region: None });
        filter_from(f.cf.0, f.lf.map(f64::from), f.fc.map(f64::from), f.region, tank)
    }
}

/// Builds a filter from `cf` and exactly one of `lf` or `fc`.
pub fn filter_from(
    cf: f64,
    lf: Option<f64>,
    fc: Option<f64>,
    region: Option<Region>,
    tank: &ResonantTank,
) -> Result<FilterDesign, CliError> {
    let lf = match (lf, fc) {
        (Some(lf), None) => lf,
        (None, Some(fc)) => design::filter_inductor(fc, cf).map_err(|e| CliError::Config(format!("filter: {e}")))?,
        _ => return Err(CliError::Config("filter needs exactly one of `lf` or `fc`".into())),
    };
    let region = match region {
        Some(r) => r,
        None if design::cutoff(lf, cf) < tank.fr2() => Region::Region2,
        None => Region::Region1,
    };
    FilterDesign::new(cf, lf, region).map_err(|e| CliError::Config(format!("filter: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    /// End of the segment; each segment starts where the previous ended.
    pub t_end: Si,
    pub vin: Si,
    pub ipeak: Si,
}

/// Schedule file: a list of `[[segment]]` tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    #[serde(default)]
    pub segment: Vec<SegmentSection>,
}

impl ScheduleFile {
    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let mut t = 0.0;
        let segments = self
            .segment
            .iter()
            .map(|s| {
                let seg = Segment { t_start: t, t_end: s.t_end.0, vin: s.vin.0, ipeak: s.ipeak.0 };
                t = s.t_end.0;
                seg
            })
            .collect();
        Schedule::new(segments).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Reads and parses a TOML file, reporting the file, line and column of
/// any problem.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_toml(&text).map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    toml::from_str(text).map_err(|e| match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {col}: {}", e.message())
        }
        None => e.message().to_string(),
    })
}

/// A run configuration with every referenced file loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub run: RunConfig,
    pub spec_file: SpecFile,
    pub schedule_file: Option<ScheduleFile>,
    /// Directory that relative paths in `run` are resolved against.
    pub base: PathBuf,
}

impl Loaded {
    pub fn from_path(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self {
                run: RunConfig::default(),
                spec_file: SpecFile::default(),
                schedule_file: None,
                base: ".".into(),
            });
        };
        let run: RunConfig = read_toml(path)?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        let spec_file = match &run.spec {
            Some(p) => read_toml(&base.join(p))?,
            None => SpecFile::default(),
        };
        let schedule_file = match &run.schedule {
            Some(p) => Some(read_toml(&base.join(p))?),
            None => None,
        };
        Ok(Self { run, spec_file, schedule_file, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }
}
