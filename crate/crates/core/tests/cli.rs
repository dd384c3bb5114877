use std::path::Path;
use std::process::{Command, Output};

use sosm::report::read_report;

fn sosm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sosm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SOSM_OUT_DIR")
        .output()
        .expect("binary runs")
}

#[test]
fn help_enumerates_variant_flags() {
    let out = Command::new(env!("CARGO_BIN_EXE_sosm")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["--penalty", "--laplacian", "--weights", "--seed", "synth", "verify", "transport"] {
        assert!(text.contains(needle), "help lacks {needle}");
    }
}

#[test]
fn synth_writes_cohort_report_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = sosm(dir.path(), &["--seed", "2", "synth", "--n", "40", "--dim", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["cohort.csv", "synth.json", "synth.svg"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let r = read_report(&dir.path().join("synth.json")).unwrap();
    assert_eq!(r.seed, 2);
    assert!(r.pass);
    roxmltree::Document::parse(&std::fs::read_to_string(dir.path().join("synth.svg")).unwrap()).unwrap();
}

#[test]
fn energy_of_a_polyline_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let mut text = String::from("x,y,t\n");
    for i in 0..200 {
        let th = std::f64::consts::PI * i as f64 / 199.0;
        text.push_str(&format!("{},{},{}\n", th.cos(), th.sin(), th));
    }
    std::fs::write(&path, text).unwrap();
    let out = sosm(dir.path(), &["--sigma", "1.0", "energy", "--input", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_report(&dir.path().join("energy.json")).unwrap();
    let e = r.get_metric("energy").unwrap();
    assert!((e - std::f64::consts::PI).abs() < 0.05, "energy {e}");
    assert!(r.get_metric("weighted_energy").unwrap() < e);
}

#[test]
fn bad_csv_cell_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "id,survival_time,f0,f1\na,1,0,1\nb,2,1,abc\nc,3,2,2\n").unwrap();
    let out = sosm(dir.path(), &["embed", "--input", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("column f1"), "{err}");
}

#[test]
fn proxy_weights_work_without_survival() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nosurv.csv");
    let mut text = String::from("id,f0,f1,f2\n");
    for i in 0..30 {
        let s = i as f64 / 10.0;
        text.push_str(&format!("p{i},{},{},{}\n", s.cos(), s.sin(), s));
    }
    std::fs::write(&path, text).unwrap();
    let failed = sosm(dir.path(), &["embed", "--input", path.to_str().unwrap()]);
    assert!(!failed.status.success());
    let ok = sosm(dir.path(), &["--weights", "proxy", "--k", "4", "embed", "--input", path.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
}

#[test]
fn failing_verify_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // noise far above the curve scale leaves no survival gradient to recover
    let out = sosm(dir.path(), &["--noise", "5.0", "--iters", "2", "verify", "--n", "40", "--dim", "4"]);
    let r = read_report(&dir.path().join("verify.json")).unwrap();
    assert_eq!(out.status.success(), r.pass);
    assert!(!r.pass);
    assert_eq!(r.recompute_pass(), r.pass);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_sosm"))
        .args(["stability", "--m", "60"])
        .env("SOSM_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("stability.json").exists());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# defaults\nseed = 5\nn = 30\ndim = 4\n").unwrap();
    let out = sosm(dir.path(), &["--config", cfg.to_str().unwrap(), "synth", "--n", "25"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_report(&dir.path().join("synth.json")).unwrap();
    assert_eq!(r.seed, 5);
    assert_eq!(r.get_metric("samples"), Some(25.0));
    assert_eq!(r.get_metric("features"), Some(4.0));
}

#[test]
fn flow_and_transport_commands_complete() {
    let dir = tempfile::tempdir().unwrap();
    assert!(sosm(dir.path(), &["synth", "--n", "60", "--dim", "4"]).status.success());
    let cohort = dir.path().join("cohort.csv");
    let c = cohort.to_str().unwrap();
    let flow = sosm(dir.path(), &["--iters", "3", "--eta", "0.01", "flow", "--input", c]);
    assert!(flow.status.success(), "{}", String::from_utf8_lossy(&flow.stderr));
    let r = read_report(&dir.path().join("flow.json")).unwrap();
    assert!(r.get_metric("trace.variance.003").is_some() || r.get_metric("steps_run").unwrap() < 3.0);
    let tr = sosm(dir.path(), &["--reg", "0.05", "transport", "--input", c]);
    assert!(tr.status.success(), "{}", String::from_utf8_lossy(&tr.stderr));
    let t = read_report(&dir.path().join("transport.json")).unwrap();
    assert!(t.get_metric("marginal_residual").unwrap() <= 1e-8);
}
