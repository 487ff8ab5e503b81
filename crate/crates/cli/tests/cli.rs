use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper.json")
}

fn deit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn run_ok(scenario: &str, extra: &[&str], out: &Path) {
    let cfg = config();
    let mut args = vec![scenario, "--config", cfg.to_str().unwrap()];
    args.extend(extra);
    let o = deit(&args, out);
    assert!(o.status.success(), "{scenario}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Header lines stripped, column line first.
fn table(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = config();
    let o = deit(&["frobnicate", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bad_configs_exit_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = config();
    let cases: [&[&str]; 4] = [
        &["--set", "params.gamma_e_z=-6MHz"],
        &["--set", "params.bogus=1"],
        &["--set", "pump.power=3 furlongs"],
        &["--set", "nonsense"],
    ];
    for extra in cases {
        let mut args = vec!["match", "--config", cfg.to_str().unwrap()];
        args.extend(extra);
        let o = deit(&args, &out);
        assert_eq!(o.status.code(), Some(3), "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
    }
    let missing = deit(&["match", "--config", "/nonexistent.json"], &out);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn match_finds_crossing_inside_range() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("match", &[], dir.path());
    let text = read(dir.path().join("match.csv"));
    let rows = table(&text);
    assert_eq!(rows[0], "preparation_power_W,v_zeeman_m_per_s,v_hyperfine_m_per_s,iterations");
    let f: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert!(f[0] > 0.0 && f[0] < 150e-6, "{}", rows[1]);
    assert!((f[1] / f[2] - 1.0).abs() < 0.01);
}

#[test]
fn reruns_are_byte_identical_and_echo_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let extra = ["--set", "spectrum.points=81", "--set", "spectrum.doppler=off"];
    run_ok("spectrum-deit", &extra, &a);
    run_ok("spectrum-deit", &extra, &b);
    for name in ["spectrum_deit.csv", "spectrum_deit_windows.csv", "manifest.txt"] {
        assert_eq!(read(a.join(name)), read(b.join(name)), "{name}");
    }
    let text = read(a.join("spectrum_deit.csv"));
    assert!(text.lines().any(|l| l == "# override = spectrum.points=81"));
    assert!(text.lines().any(|l| l.starts_with("# exchange_g = ")));
    let rows = table(&text);
    assert_eq!(rows[0], deit_columns());
    assert_eq!(rows.len(), 82);
    let windows = read(a.join("spectrum_deit_windows.csv"));
    let w = table(&windows);
    assert_eq!(w.len(), 3);
    assert!(w[1].starts_with("zeeman,") && w[2].starts_with("hyperfine,"));
    assert!(w[1..].iter().all(|l| !l.ends_with(",,")), "both windows found: {w:?}");
}

fn deit_columns() -> &'static str {
    "pump_shift_hz,zeeman_re_s,zeeman_im_s,zeeman_transmission,hyperfine_re_s,hyperfine_im_s,hyperfine_transmission"
}

#[test]
fn manifest_checksums_match_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("groupvel-vs-power", &["--set", "groupvel.powers=[\"0uW\",\"50uW\",\"100uW\"]"], dir.path());
    let manifest = read(dir.path().join("manifest.txt"));
    let mut outputs = 0;
    for line in manifest.lines() {
        let Some(rest) = line.strip_prefix("output = ") else { continue };
        let (name, sum) = rest.split_once(" sha256:").unwrap();
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(format!("{:x}", Sha256::digest(&bytes)), sum, "{name}");
        outputs += 1;
    }
    assert_eq!(outputs, 1);
    let cfg = std::fs::read(config()).unwrap();
    assert!(manifest.contains(&format!("sha256:{:x}", Sha256::digest(&cfg))));
    let text = read(dir.path().join("groupvel_vs_power.csv"));
    let rows = table(&text);
    assert_eq!(rows[0], "preparation_power_W,v_zeeman_m_per_s,v_hyperfine_m_per_s,delay_zeeman_s,delay_hyperfine_s");
    assert_eq!(rows.len(), 4);
}

#[test]
fn contrast_and_enhancement_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let extra = [
        "--set", "contrast.points=41",
        "--set", "contrast.doppler=off",
        "--set", "contrast.probes=[\"hyperfine\"]",
        "--set", "contrast.background_powers=[\"20uW\",\"150uW\"]",
    ];
    run_ok("contrast-vs-power", &extra, dir.path());
    let text = read(dir.path().join("contrast_hyperfine.csv"));
    let rows = table(&text);
    assert_eq!(rows[0], "probe,background_power_W,contrast,peak_transmission,center_transmission");
    assert_eq!(rows.len(), 3);
    let spectra = read(dir.path().join("contrast_hyperfine_spectra.csv"));
    assert_eq!(table(&spectra)[0], "probe,background_power_W,delta_hz,transmission");
    assert_eq!(table(&spectra).len(), 1 + 2 * 41);

    run_ok("delay-enhancement", &["--set", "enhancement.powers=[\"0uW\",\"150uW\"]"], dir.path());
    let text = read(dir.path().join("delay_enhancement.csv"));
    let rows = table(&text);
    assert_eq!(rows[0], "preparation_power_W,enhancement_factor,delay_hyperfine_s");
    let first: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((first - 1.0).abs() < 1e-9);
}

#[test]
fn short_fit_writes_result_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("fit-groupvel", &["--set", "fit.max_iterations=30"], dir.path());
    let text = read(dir.path().join("fit_result.txt"));
    assert!(text.contains("exchange_g = ") && text.contains("objective = "));
    let residuals = read(dir.path().join("fit_residuals.csv"));
    let rows = table(&residuals);
    assert_eq!(rows[0], "dataset,x,y,model,residual");
    assert_eq!(rows.len(), 1 + 16);
    let manifest = read(dir.path().join("manifest.txt"));
    assert_eq!(manifest.lines().filter(|l| l.starts_with("input = ")).count(), 3);
}

#[test]
fn small_propagation_and_storage_runs() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--set", "grid.nz=50",
        "--set", "grid.dt=20ns",
        "--set", "grid.velocity_classes=0",
        "--set", "params.optical_depth_z=40",
        "--set", "params.optical_depth_h=40",
        "--set", "grid.duration=6us",
    ];
    run_ok("propagate", &small, dir.path());
    let traces = read(dir.path().join("propagate_traces.csv"));
    assert_eq!(
        table(&traces)[0],
        "t_s,pump_re,pump_im,zeeman_in_re,zeeman_in_im,hyperfine_in_re,hyperfine_in_im,zeeman_out_re,zeeman_out_im,hyperfine_out_re,hyperfine_out_im"
    );
    assert_eq!(table(&read(dir.path().join("propagate_fieldmap.csv")))[0], "z_m,t_s,field,re,im");
    let delays = read(dir.path().join("propagate_delays.csv"));
    let rows = table(&delays);
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let f: Vec<f64> = r.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!(f[0] > 0.0 && (f[0] / f[2] - 1.0).abs() < 0.2, "{r}");
    }

    let mut store = small.to_vec();
    store.extend(["--set", "store.storage_times=[\"0us\",\"2us\"]", "--set", "store.trace_storage=2us", "--set", "store.tail=3us", "--set", "store.pump_off=1.905us"]);
    run_ok("store", &store, dir.path());
    let eff = read(dir.path().join("store_efficiency.csv"));
    let rows = table(&eff);
    assert_eq!(rows[0], "storage_time_s,efficiency_zeeman,efficiency_hyperfine,leakage_zeeman,leakage_hyperfine");
    assert_eq!(rows.len(), 3);
    assert!(dir.path().join("store_traces.csv").exists());
}
