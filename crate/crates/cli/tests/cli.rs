use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hsphr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsphr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hsphr(args);
    assert!(
        out.status.success(),
        "hsphr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = "[grid]\nchannels = 2\nsize = 32\nframe = 8\n\n[masks]\nexperiments = 6\n";

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn trace_rows(path: &Path) -> Vec<(usize, usize, f64, f64)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["iteration", "channel", "error", "mean"]);
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (
                rec[0].parse().unwrap(),
                rec[1].parse().unwrap(),
                rec[2].parse().unwrap(),
                rec[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn noiseless_run_writes_artifacts_and_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("run");
    ok(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);

    let rows = trace_rows(&out.join("trace.csv"));
    for k in 0..2 {
        assert_eq!(rows.iter().filter(|r| r.1 == k).count(), 300);
    }
    let last = rows.last().unwrap();
    assert_eq!(last.0, 300);
    assert!(last.3 < 0.1, "final mean error {}", last.3);

    for name in [
        "reconstruction.hsc1",
        "manifest.txt",
        "amplitude_k0.pgm",
        "amplitude_k1.pgm",
        "phase_k0.pgm",
        "phase_k1.pgm",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    for key in ["[calibration]", "snr_definition", "config_digest", "version", "seed = "] {
        assert!(manifest.contains(key), "manifest lacks {key}");
    }
    let info = ok(&["inspect", out.join("reconstruction.hsc1").to_str().unwrap()]);
    assert!(info.contains("2 channels, 48x48"), "{info}");
}

#[test]
fn manifest_rerun_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["run", "--config", &cfg, "--iters", "60", "--out", a.to_str().unwrap()]);
    let manifest = a.join("manifest.txt");
    ok(&["run", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("reconstruction.hsc1")).unwrap(),
        fs::read(b.join("reconstruction.hsc1")).unwrap()
    );
}

#[test]
fn existing_manifest_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("out");
    let args = ["run", "--config", &cfg, "--iters", "5", "--warmup", "2", "--out", out.to_str().unwrap()];
    ok(&args);
    let before = fs::read(out.join("manifest.txt")).unwrap();

    let refused = hsphr(&args);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    assert_eq!(fs::read(out.join("manifest.txt")).unwrap(), before);

    let mut forced = args.to_vec();
    forced.push("--force");
    ok(&forced);
}

#[test]
fn failed_run_leaves_no_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, format!("{SMALL}\n[object]\namplitude = file:/nonexistent/amp.pgm\n")).unwrap();
    let out = tmp.path().join("out");
    let res = hsphr(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(!out.exists());
}

#[test]
fn single_cell_sweep_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let run_dir = tmp.path().join("run");
    let sweep_dir = tmp.path().join("sweep");
    ok(&["run", "--config", &cfg, "--iters", "80", "--out", run_dir.to_str().unwrap()]);
    ok(&["sweep", "--config", &cfg, "--iters", "80", "--K", "2", "--T", "6", "--out", sweep_dir.to_str().unwrap()]);

    let last = fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    let final_mean = last.lines().last().unwrap().rsplit(',').next().unwrap().to_string();
    let mut r = csv::Reader::from_path(sweep_dir.join("sweep.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["K\\T", "6"]);
    let row = r.records().next().unwrap().unwrap();
    assert_eq!(&row[0], "2");
    assert_eq!(&row[1], final_mean.as_str());
    assert!(sweep_dir.join("heatmap.pgm").exists());
}

#[test]
fn sweep_over_experiments_improves_with_more_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let dir = tmp.path().join("sweep");
    ok(&[
        "sweep", "--config", &cfg, "--K", "2", "--T", "1,3,6", "--workers", "2", "--out", dir.to_str().unwrap(),
    ]);
    let mut r = csv::Reader::from_path(dir.join("sweep.csv")).unwrap();
    let row = r.records().next().unwrap().unwrap();
    let errs: Vec<f64> = row.iter().skip(1).map(|v| v.parse().unwrap()).collect();
    for w in errs.windows(2) {
        assert!(w[1] <= 1.2 * w[0], "{errs:?}");
    }
    assert!(errs[2] < 0.1, "{errs:?}");
}

#[test]
fn snr_sweeps_have_one_row_per_snr() {
    let tmp = tempfile::tempdir().unwrap();
    let lam = tmp.path().join("lam");
    let it = tmp.path().join("it");
    let flags = ["--noise", "poisson", "--snr-db", "20,40", "--iters", "20", "--warmup", "5"];
    let sweep = |layout: &str, out: &Path| {
        let cfg = tmp.path().join(format!("{layout}.cfg"));
        fs::write(&cfg, format!("{SMALL}\n[sweep]\nlayout = {layout}\n")).unwrap();
        let mut args = vec!["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(&flags);
        ok(&args);
        fs::read_to_string(out.join("sweep.csv")).unwrap()
    };

    let text = sweep("snr_lambda", &lam);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "snr_db\\lambda_nm,400,700");
    assert_eq!(lines.len(), 3);

    let text = sweep("snr_iteration", &it);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1].split(',').count(), 21);
    assert!(lines[1].starts_with("20,"));
}

#[test]
fn simulate_then_reconstruct_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let sim = tmp.path().join("sim");
    let rec = tmp.path().join("rec");
    let run_dir = tmp.path().join("run");
    let noise = ["--noise", "gaussian", "--snr-db", "40"];

    let mut args = vec!["simulate", "--config", &cfg, "--out", sim.to_str().unwrap()];
    args.extend_from_slice(&noise);
    ok(&args);
    assert!(sim.join("observations.hsr1").exists());
    let info = ok(&["inspect", sim.join("observations.hsr1").to_str().unwrap()]);
    assert!(info.contains("6 images"), "{info}");

    ok(&["reconstruct", "--input", sim.to_str().unwrap(), "--iters", "40", "--warmup", "10", "--out", rec.to_str().unwrap()]);
    let mut args = vec!["run", "--config", &cfg, "--iters", "40", "--warmup", "10", "--out", run_dir.to_str().unwrap()];
    args.extend_from_slice(&noise);
    ok(&args);
    assert_eq!(fs::read(rec.join("trace.csv")).unwrap(), fs::read(run_dir.join("trace.csv")).unwrap());

    let refused = hsphr(&["reconstruct", "--input", sim.to_str().unwrap(), "--K", "3"]);
    assert!(!refused.status.success());
}

#[test]
fn phantom_and_default_config() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("shepp.pgm");
    ok(&["phantom", "--kind", "shepp", "--size", "32", "--out", p.to_str().unwrap()]);
    let info = ok(&["inspect", p.to_str().unwrap()]);
    assert!(info.contains("32x32"));
    assert!(!hsphr(&["phantom", "--out", p.to_str().unwrap()]).status.success());

    let text = ok(&["default-config"]);
    let cfg = tmp.path().join("default.cfg");
    fs::write(&cfg, &text).unwrap();
    // the printed defaults parse back
    let out = tmp.path().join("x");
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
}

#[test]
fn invalid_flags_are_rejected() {
    assert!(!hsphr(&["run", "--K", "2,4"]).status.success());
    assert!(!hsphr(&["run", "--noise", "laplace"]).status.success());
    assert!(!hsphr(&["run", "--iters", "10", "--warmup", "10"]).status.success());
}
