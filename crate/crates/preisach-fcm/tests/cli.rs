mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::*;
use num_complex::Complex64;
use preisach_fcm::cli::*;
use preisach_fcm::linearize::DcPolicy;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn truth_model(dir: &Path) {
    ModelDocument::new(ModelSpec::Synthetic(transformer_like())).write(&dir.join("truth.json")).unwrap();
}

#[test]
fn config_defaults_and_overrides() {
    let c = RunConfig::from_toml("", Path::new(".")).unwrap();
    assert_eq!((c.order, c.bench.nphi, c.bench.dv, c.fit.zeta_cells), (11, 12, 2.0, 300));
    assert_eq!(c.samples_per_period().unwrap(), 2000);
    assert_eq!(c.dc_policy, DcPolicy::Excluded);
    assert_eq!(c.bench_harmonics(), (1..=11).collect::<Vec<_>>());
    let mut c = RunConfig::from_toml(
        "order = 7\ndc_policy = \"dc-free-flux\"\n[bench]\nharmonics = [1, 3]\n[bench.device]\nkind = \"linear-inductor\"\ninductance = 0.2\n",
        Path::new("/tmp"),
    )
    .unwrap();
    assert_eq!(c.dc_policy, DcPolicy::FreeFlux);
    assert_eq!(c.bench.device, DeviceSpec::LinearInductor { inductance: 0.2 });
    c.apply(&Overrides { order: Some(5), dc_policy: Some(DcPolicy::Excluded), nphi: Some(6), dv: Some(0.5) }).unwrap();
    assert_eq!((c.order, c.dc_policy, c.bench.nphi, c.bench.dv), (5, DcPolicy::Excluded, 6, 0.5));
    assert!(c.apply(&Overrides { nphi: Some(2), ..Default::default() }).is_err());
    for bad in ["ordr = 3", "schema_version = 2", "sample_rate = 1234.5", "[bench]\nnphi = 1", "frequency = -1"] {
        assert!(RunConfig::from_toml(bad, Path::new(".")).is_err(), "{bad}");
    }
    assert_eq!("dc-free-flux".parse::<DcPolicy>().unwrap(), DcPolicy::FreeFlux);
}

#[test]
fn waveform_csv_header_errors_name_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "a.csv", "time_s,voltage_V,curent_A\n0,1,2\n");
    let e = read_waveform_csv(&p).unwrap_err().to_string();
    assert!(e.contains("current_A") && e.contains("curent_A"), "{e}");
    let p = write(dir.path(), "b.csv", "time_s,voltage_V\n0,1\n");
    assert!(read_waveform_csv(&p).unwrap_err().to_string().contains("current_A"));
    let p = write(dir.path(), "c.csv", "time_s,voltage_V,current_A\n0,1,x\n");
    let e = read_waveform_csv(&p).unwrap_err().to_string();
    assert!(e.contains("row 2") && e.contains("current_A"), "{e}");
    let w = Waveform { time: vec![0.0, 0.1, 0.2], voltage: vec![1.0, -2.5, 3.25e-3], current: vec![0.0, 1e-7, -4.0] };
    let p = dir.path().join("d.csv");
    write_waveform_csv(&p, &w).unwrap();
    assert_eq!(read_waveform_csv(&p).unwrap(), w);
    let jitter = Waveform { time: vec![0.0, 0.1, 0.25], ..w };
    assert!(jitter.sample_interval().is_err());
}

#[test]
fn reports_round_trip() {
    let report = TableReport {
        meta: vec![("report".into(), "test".into())],
        tables: vec![Table {
            title: "Y1 magnitude [mS]".into(),
            cols: vec![0, 1, 3],
            rows: vec![
                (0, vec![Cell::Unbounded, Cell::Value(0.5), Cell::Value(-1.25)]),
                (1, vec![Cell::Unbounded, Cell::Undefined, Cell::Value(-0.0)]),
            ],
            decimals: 6,
        }],
    };
    let text = report.render();
    assert!(!text.contains("-0.000000"));
    let back = TableReport::parse(&text).unwrap();
    assert_eq!(back.render(), text);
    assert_eq!(back.table("Y1 magnitude [mS]").unwrap().rows[0].1[2], Cell::Value(-1.25));
    let entries = vec![
        CompanionEntry { matrix: "Y1".into(), row: 1, col: 1, value: Complex64::new(1.234e-3, -5.6e-2), flag: String::new() },
        CompanionEntry { matrix: "Y2".into(), row: 3, col: 0, value: Complex64::new(0.0, 0.0), flag: "unbounded".into() },
    ];
    assert_eq!(parse_companion(&render_companion(&entries)).unwrap(), entries);
    assert!(parse_companion("matrix,row\nY1,0\n").is_err());
}

#[test]
fn diff_flags_only_real_differences() {
    let e = |m: &str, r, c, v: Complex64| CompanionEntry { matrix: m.into(), row: r, col: c, value: v, flag: String::new() };
    let a = vec![e("Y1", 1, 1, Complex64::new(1e-3, 0.0)), e("Y1", 2, 1, Complex64::new(1e-15, 0.0)), e("Y1", 3, 1, Complex64::new(0.0, 1e-4))];
    let b = vec![e("Y1", 1, 1, Complex64::new(1.01e-3, 0.0)), e("Y1", 2, 1, Complex64::new(-1e-15, 0.0)), e("Y1", 3, 1, Complex64::from_polar(1e-4, 1.65))];
    let d = diff_companions(&a, &b, &DiffTolerance::default());
    assert!(!d.iter().find(|x| x.row == 1).unwrap().exceeds);
    assert!(d.iter().all(|x| x.row != 2 || !x.exceeds));
    assert!(d.iter().find(|x| x.row == 3).unwrap().exceeds);
    let odd = diff_companions(&a, &b, &DiffTolerance { odd_only: true, ..Default::default() });
    assert!(odd.iter().all(|x| x.row % 2 == 1 && x.col % 2 == 1));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    truth_model(d);
    let common = "sample_rate = 50000.0\noutput_dir = \"out\"\n[synth]\namplitudes_rms = [40, 80, 120, 160, 200, 240]\ncycles = 3\n";
    let synth = RunConfig::load(&write(d, "synth.toml", &format!("model = \"truth.json\"\n{common}"))).unwrap();
    let out = cmd_synth(&synth).unwrap();
    assert_eq!(out.files.len(), 6);
    let inputs = (1..=6).map(|k| format!("\"out/synth_{k:02}.csv\"")).collect::<Vec<_>>().join(", ");
    let cfg_text = format!(
        "model = \"fitted.json\"\n{common}[fit]\ninputs = [{inputs}]\nzeta_cells = 100\n[simulate]\ninput = \"out/synth_06.csv\"\n[bench]\nharmonics = [1, 3]\nnphi = 6\ndv = 0.5\n"
    );
    let cfg = RunConfig::load(&write(d, "run.toml", &cfg_text)).unwrap();
    let fit = cmd_fit(&cfg).unwrap();
    assert!(fit.summary.contains("fitted 6 tests"));
    assert!(d.join("fitted.json").exists() && d.join("out/fit_report.json").exists());
    let fitted = ModelDocument::read(&d.join("fitted.json")).unwrap();
    assert!(matches!(fitted.model, ModelSpec::Fitted(_)));
    cmd_simulate(&cfg).unwrap();
    let flux = fs::read_to_string(d.join("out/simulate_flux.csv")).unwrap();
    assert!(flux.starts_with("time_s,current_A,flux_Vs\n"));
    assert_eq!(flux.lines().count(), 1001);
    let lin = cmd_linearize(&cfg).unwrap();
    assert!(lin.summary.starts_with("Y1[1,1]"));
    let rep = TableReport::parse(&fs::read_to_string(d.join("out/fcm_report.txt")).unwrap()).unwrap();
    assert_eq!(rep.table("Y1 magnitude [mS]").unwrap().rows[0].1[0], Cell::Unbounded);
    // determinism
    let first = fs::read(d.join("out/fcm_companion.csv")).unwrap();
    cmd_linearize(&cfg).unwrap();
    assert_eq!(fs::read(d.join("out/fcm_companion.csv")).unwrap(), first);
    let bench = cmd_bench(&cfg).unwrap();
    assert!(bench.summary.contains("12 sweep points, 0 failed"), "{}", bench.summary);
    let brep = TableReport::parse(&fs::read_to_string(d.join("out/bench_report.txt")).unwrap()).unwrap();
    assert!(brep.tables.iter().any(|t| t.title.starts_with('M')));
    let again = fs::read_to_string(d.join("out/bench_companion.csv")).unwrap();
    cmd_bench(&cfg).unwrap();
    assert_eq!(fs::read_to_string(d.join("out/bench_companion.csv")).unwrap(), again);
    let diff = cmd_report_diff(
        &d.join("out/fcm_companion.csv"),
        &d.join("out/bench_companion.csv"),
        &DiffTolerance { odd_only: true, ..Default::default() },
        Some(&d.join("out/diff.txt")),
    )
    .unwrap();
    assert!(diff.summary.contains("0 beyond tolerance"), "{}", diff.summary);
}

#[test]
fn missing_model_is_reported() {
    let cfg = RunConfig::from_toml("", Path::new(".")).unwrap();
    let e = cmd_linearize(&cfg).unwrap_err();
    assert!(e.to_string().contains("model"));
}

#[test]
fn binary_runs_and_fails_cleanly() {
    let exe = env!("CARGO_BIN_EXE_preisach-fcm");
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    truth_model(d);
    let cfg = write(d, "run.toml", "model = \"truth.json\"\nsample_rate = 20000.0\n");
    let ok = Command::new(exe).args(["linearize", "-c"]).arg(&cfg).args(["--order", "5", "--dc-policy", "dc-free-flux"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("dc-free-flux") && stdout.contains("wrote"));
    let bad = Command::new(exe).args(["bench", "-c"]).arg(&cfg).args(["--nphi", "2"]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nphi"));
}
