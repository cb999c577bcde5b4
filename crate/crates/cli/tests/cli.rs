use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llc_inverter::design::{self, Check, DesignReport, Verdict};
use llc_inverter::sim::{SimError, CHANNEL_NAMES, PRESET_BOUNDARIES};
use llc_inverter::DesignSpec;
use llc_inverter_cli::commands::{SimulationReport, SweepReport};
use llc_inverter_cli::config::{self, RunConfig, ScheduleFile, SpecFile};
use llc_inverter_cli::output::read_waveforms_binary;
use llc_inverter_cli::CliError;
use tempfile::TempDir;

fn llcinv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llcinv"))
        .args(args)
        .current_dir(dir)
        .env_remove(llc_inverter_cli::OUT_DIR_ENV)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_json<T: serde::de::DeserializeOwned>(p: PathBuf) -> T {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: PathBuf) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

const SPEC_WITH_SUFFIXES: &str = r#"
vin_min = 600
fs_min = "45k"
po_min = "30k"
[grid]
vo = "13.8k"
[tank]
lr = "4u"
cr = "3.3u"
lm = "100u"
n = 10
[filter]
cf = "0.1u"
lf = "16m"
"#;

#[test]
fn suffixed_spec_matches_table1() {
    let spec: SpecFile = config::parse_toml(SPEC_WITH_SUFFIXES).unwrap();
    assert_eq!(spec.design_spec().unwrap(), DesignSpec::table1());
    let tank = spec.tank().unwrap();
    assert_eq!(tank, llc_inverter::ResonantTank::new(4e-6, 3.3e-6, 100e-6, 10.0).unwrap());
    assert_eq!(spec.filter(&tank).unwrap(), SpecFile::default().filter(&tank).unwrap());
}

#[test]
fn config_files_round_trip() {
    let spec: SpecFile = config::parse_toml(SPEC_WITH_SUFFIXES).unwrap();
    let again: SpecFile = config::parse_toml(&toml::to_string(&spec).unwrap()).unwrap();
    assert_eq!(spec, again);

    let run: RunConfig = config::parse_toml(
        r#"
spec = "spec.toml"
preset = "c5-c8"
segment_cycles = 3
mode = "envelope"
dt = "100n"
[control]
bandwidth = "2k"
trim_harmonics = 3
[analyze]
loads = ["166.7k"]
lm_fs = ["50k"]
[[sweep]]
param = "lm"
values = ["50u", "100u"]
[[sweep]]
param = "fc"
start = "2k"
stop = "13k"
points = 4
"#,
    )
    .unwrap();
    assert_eq!(run.dt.unwrap().0, 100e-9);
    let again: RunConfig = config::parse_toml(&toml::to_string(&run).unwrap()).unwrap();
    assert_eq!(run, again);

    let sched: ScheduleFile = config::parse_toml("[[segment]]\nt_end = \"70.8m\"\nvin = 600\nipeak = 60\n").unwrap();
    let again: ScheduleFile = config::parse_toml(&toml::to_string(&sched).unwrap()).unwrap();
    assert_eq!(sched, again);
    assert_eq!(sched.schedule().unwrap().segments()[0].t_end, 0.0708);
}

#[test]
fn config_errors_carry_line_numbers() {
    let err = config::parse_toml::<SpecFile>("vin_min = 600\n\nfs_min = \"45q\"\n").unwrap_err();
    assert!(err.contains("line 3"), "{err}");
    let err = config::parse_toml::<RunConfig>("[[sweep]]\nparam = \"lq\"\nvalues = [1]\n").unwrap_err();
    assert!(err.contains("line 2") && err.contains("lm"), "{err}");
    let err = config::parse_toml::<SpecFile>("vin_mim = 600\n").unwrap_err();
    assert!(err.contains("line 1") && err.contains("vin_mim"), "{err}");
}

#[test]
fn error_kinds_map_to_exit_codes() {
    assert_eq!(CliError::from(SimError::Numeric { last_good_t: 0.1 }).exit_code(), 4);
    assert_eq!(CliError::from(SimError::Config("x".into())).exit_code(), 3);
    assert_eq!(CliError::from(design::DesignError::Invalid("x".into())).exit_code(), 3);
}

#[test]
fn bad_inputs_exit_with_config_status() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "bad.toml", "preset = [\n");
    assert_eq!(code(&llcinv(dir.path(), &["--config", "bad.toml", "simulate"])), 3);
    assert_eq!(code(&llcinv(dir.path(), &["--config", "missing.toml", "design"])), 3);
    assert_eq!(code(&llcinv(dir.path(), &["--preset", "c0", "simulate"])), 3);
    assert_eq!(code(&llcinv(dir.path(), &["--dt", "1u", "simulate"])), 3);
    assert_eq!(code(&llcinv(dir.path(), &["sweep"])), 3);
    assert_eq!(code(&llcinv(dir.path(), &["frobnicate"])), 3);
    assert_eq!(code(&llcinv(dir.path(), &["--help"])), 0);
}

#[test]
fn design_report_is_feasible_deterministic_and_round_trips() {
    let dir = TempDir::new().unwrap();
    ok(&llcinv(dir.path(), &["design", "--out", "a"]));
    ok(&llcinv(dir.path(), &["design", "--out", "b"]));
    let a = fs::read_to_string(dir.path().join("a/design_report.json")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b/design_report.json")).unwrap());
    let report: DesignReport = serde_json::from_str(&a).unwrap();
    assert_eq!(report, design::design_and_validate(&DesignSpec::table1()).unwrap());
    assert_eq!(serde_json::to_string_pretty(&report).unwrap() + "\n", a);
    let v = report.validation.unwrap();
    assert!(v.thd_ok && v.thd.unwrap() < 0.12);
}

#[test]
fn stress_limit_of_ten_volts_is_reported_infeasible() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "spec.toml", "vcr_max = 10\n");
    write(dir.path(), "run.toml", "spec = \"spec.toml\"\nout = \"res\"\n");
    let out = llcinv(dir.path(), &["--config", "run.toml", "design"]);
    assert_eq!(code(&out), 2);
    let report: DesignReport = read_json(dir.path().join("res/design_report.json"));
    assert!(matches!(report.verdict, Verdict::Infeasible { check: Check::CrStress, .. }));
}

#[test]
fn empty_schedule_writes_empty_tables() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "empty.toml", "");
    write(dir.path(), "run.toml", "schedule = \"empty.toml\"\n");
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "o", "simulate"]));
    let (header, rows) = csv_rows(dir.path().join("o/waveforms.csv"));
    assert_eq!(header, CHANNEL_NAMES);
    assert!(rows.is_empty());
    assert!(csv_rows(dir.path().join("o/events.csv")).1.is_empty());
    let report: SimulationReport = read_json(dir.path().join("o/metrics.json"));
    assert_eq!((report.samples, report.run), (0, None));
}

#[test]
fn presets_follow_the_published_schedules() {
    let dir = TempDir::new().unwrap();
    for (preset, vin, ipeak) in
        [("c1-c4", [600.0, 850.0, 700.0, 750.0], [60.0; 4]), ("c5-c8", [850.0; 4], [50.0, 10.0, 60.0, 30.0])]
    {
        let out = format!("o-{preset}");
        ok(&llcinv(dir.path(), &["--preset", preset, "--mode", "envelope", "--out", &out, "simulate"]));
        let report: SimulationReport = read_json(dir.path().join(&out).join("metrics.json"));
        let segs = report.schedule.segments();
        assert_eq!(segs.len(), 4);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!((s.t_start, s.t_end), (PRESET_BOUNDARIES[i], PRESET_BOUNDARIES[i + 1]));
            assert_eq!((s.vin, s.ipeak), (vin[i], ipeak[i]));
        }
        let m = report.run.unwrap();
        let last = ipeak[3] / 2.0_f64.sqrt();
        assert!((m.i_grid_rms / last - 1.0).abs() < 0.05, "{preset}: {}", m.i_grid_rms);
        assert_eq!(report.segments.len(), 4);
    }
}

const SHORT_RUN: &str = "preset = \"c5-c8\"\nsegment_cycles = 1\n";

#[test]
fn simulate_output_is_deterministic() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", SHORT_RUN);
    for out in ["a", "b"] {
        ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", out, "simulate"]));
    }
    for f in ["waveforms.csv", "events.csv", "metrics.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let report: SimulationReport = read_json(dir.path().join("a/metrics.json"));
    let again: SimulationReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(report, again);
    assert!(report.events > 0);
}

#[test]
fn binary_waveforms_hold_the_exact_samples() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", &format!("{SHORT_RUN}mode = \"envelope\"\n"));
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "bin", "simulate", "--binary"]));
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "txt", "simulate"]));
    let cols = read_waveforms_binary(&fs::read(dir.path().join("bin/waveforms.bin")).unwrap()).unwrap();
    let (header, rows) = csv_rows(dir.path().join("txt/waveforms.csv"));
    assert_eq!(cols.iter().map(|c| c.0.as_str()).collect::<Vec<_>>(), header);
    for (name, values) in &cols {
        let text = column(&header, &rows, name);
        assert_eq!(values.len(), text.len());
        assert!(values.iter().zip(&text).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1e-30)), "{name}");
    }
}

#[test]
fn output_directory_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_llcinv"))
        .args(["analyze"])
        .current_dir(dir.path())
        .env(llc_inverter_cli::OUT_DIR_ENV, "from-env")
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("from-env/gain_curves.csv").exists());
}

#[test]
fn analyze_curves_cross_at_resonance_and_angle_falls_with_lm() {
    let dir = TempDir::new().unwrap();
    ok(&llcinv(dir.path(), &["analyze", "--out", "o"]));
    let (header, rows) = csv_rows(dir.path().join("o/gain_curves.csv"));
    assert_eq!(header, llc_inverter_cli::commands::CURVE_COLUMNS);
    let loads = column(&header, &rows, "load");
    assert_eq!(loads.iter().filter(|&&l| l == loads[0]).count() * 2, rows.len());
    // each family passes through gain N where the sign of log(fx) changes
    let (fx, gain) = (column(&header, &rows, "fx"), column(&header, &rows, "gain"));
    for family in 0..2 {
        let r = family * rows.len() / 2..(family + 1) * rows.len() / 2;
        let k = r.clone().find(|&i| fx[i] >= 1.0).unwrap();
        let t = (1.0 - fx[k - 1]) / (fx[k] - fx[k - 1]);
        let at_one = gain[k - 1] + t * (gain[k] - gain[k - 1]);
        assert!((at_one - 10.0).abs() < 0.05, "{at_one}");
    }
    let (header, rows) = csv_rows(dir.path().join("o/angle_vs_lm.csv"));
    let (fs, theta) = (column(&header, &rows, "fs"), column(&header, &rows, "theta_deg"));
    for w in (0..rows.len()).collect::<Vec<_>>().windows(2) {
        if fs[w[0]] == fs[w[1]] {
            assert!(theta[w[1]] <= theta[w[0]]);
        }
    }
}

#[test]
fn single_point_analyze_gives_single_row() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", "[analyze]\nloads = [\"166.7k\"]\nfs_start = \"50k\"\nfs_points = 1\n");
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "o", "analyze"]));
    assert_eq!(csv_rows(dir.path().join("o/gain_curves.csv")).1.len(), 1);
}

#[test]
fn one_point_sweep_equals_simulate_metrics() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "run.toml", &format!("{SHORT_RUN}[[sweep]]\nparam = \"lm\"\nvalues = [\"100u\"]\n"));
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "o", "simulate"]));
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "o", "sweep"]));
    let sim: SimulationReport = read_json(dir.path().join("o/metrics.json"));
    let sweep: SweepReport = read_json(dir.path().join("o/sweep.json"));
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(sweep.rows[0].metrics, sim.run);
}

#[test]
fn sweep_rows_are_order_stable_and_failures_stay_in_row() {
    let dir = TempDir::new().unwrap();
    let axes = "[[sweep]]\nparam = \"lm\"\nvalues = [\"50u\", \"-1u\", \"200u\"]\n\
                [[sweep]]\nparam = \"ipeak\"\nvalues = [10, 60]\n";
    write(dir.path(), "run.toml", &format!("{SHORT_RUN}mode = \"envelope\"\n{axes}"));
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "seq", "--jobs", "1", "sweep"]));
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "par", "--jobs", "4", "sweep"]));
    let seq = fs::read(dir.path().join("seq/sweep.csv")).unwrap();
    assert_eq!(seq, fs::read(dir.path().join("par/sweep.csv")).unwrap());
    let (header, rows) = csv_rows(dir.path().join("seq/sweep.csv"));
    assert_eq!(rows.len(), 6);
    let lm = column(&header, &rows, "lm");
    assert_eq!(lm, [50e-6, 50e-6, -1e-6, -1e-6, 200e-6, 200e-6]);
    let status: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    assert_eq!(status, ["ok", "ok", "error", "error", "ok", "ok"]);
    assert!(rows[2].last().unwrap().contains("Lm"));
}

#[test]
fn lm_sweep_at_light_load_trends_with_magnetizing_current() {
    let dir = TempDir::new().unwrap();
    let cfg = "preset = \"c1-c4\"\nsegment_cycles = 0.75\n\
               [[sweep]]\nparam = \"lm\"\nvalues = [\"50u\", \"100u\", \"200u\"]\n\
               [[sweep]]\nparam = \"vin\"\nvalues = [850]\n\
               [[sweep]]\nparam = \"ipeak\"\nvalues = [10]\n";
    write(dir.path(), "run.toml", cfg);
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "o", "sweep"]));
    let (header, rows) = csv_rows(dir.path().join("o/sweep.csv"));
    let hard = column(&header, &rows, "hard_switch_fraction");
    let ilm = column(&header, &rows, "i_lm_rms");
    assert!(hard[0] <= hard[1] && hard[1] <= hard[2], "{hard:?}");
    assert!(ilm[0] > ilm[1] && ilm[1] > ilm[2], "{ilm:?}");
}

#[test]
fn fc_sweep_has_lower_thd_in_the_low_cutoff_band() {
    let dir = TempDir::new().unwrap();
    let cfg = "preset = \"c5-c8\"\nsegment_cycles = 3\n\
               [[sweep]]\nparam = \"fc\"\nvalues = [\"4k\", \"13k\"]\n\
               [[sweep]]\nparam = \"ipeak\"\nvalues = [10, 60]\n";
    write(dir.path(), "run.toml", cfg);
    ok(&llcinv(dir.path(), &["--config", "run.toml", "--out", "o", "sweep"]));
    let (header, rows) = csv_rows(dir.path().join("o/sweep.csv"));
    let thd = column(&header, &rows, "thd");
    assert!(thd[0] < thd[2] && thd[1] < thd[3], "{thd:?}");
}
