use std::path::Path;
use std::process::{Command, Output};

fn geosteer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geosteer"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run geosteer")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn config_prints_resolved_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let o = geosteer(&["config", "--preset", "desk", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(!out.exists());
    let text = stdout(&o);
    assert!(text.contains("method = \"rl_est_1\""), "{text}");
    assert!(text.contains("seed = 7"));
    assert!(text.contains("n_seeds = 3"));
    assert!(text.contains("episodes = 5000"));
}

#[test]
fn config_round_trips_through_a_file() {
    let tmp = tempfile::tempdir().unwrap();
    let first = stdout(&geosteer(&["config", "--seed", "9"]));
    let path = tmp.path().join("exp.toml");
    std::fs::write(&path, &first).unwrap();
    let second = stdout(&geosteer(&["config", "--config", path.to_str().unwrap()]));
    assert_eq!(first, second);
}

#[test]
fn bad_configuration_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "eval_realizations = 0\n").unwrap();
    let o = geosteer(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eval_realizations"));

    let o = geosteer(&["evaluate", "--method", "rl_est_3", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_with_3() {
    let o = geosteer(&["config", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn report_names_the_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("empty");
    std::fs::create_dir(&dir).unwrap();
    let o = geosteer(&["report", "--dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
}

#[test]
fn small_sweep_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sweep.toml");
    std::fs::write(
        &cfg,
        "[sweep]\nrealizations = 4\nn_par = [32, 64]\nn_best = [1, 2]\nn_best_at = 64\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let args = ["pf-sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = geosteer(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("n_par,median_gamma_mae"));
    for f in ["sweep_n_par.csv", "sweep_n_best.csv", "sweep_n_par.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let first = std::fs::read(out.join("sweep_n_par.csv")).unwrap();
    assert!(geosteer(&args).status.success());
    assert_eq!(first, std::fs::read(out.join("sweep_n_par.csv")).unwrap());

    let o = geosteer(&["report", "--dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(Path::new(stdout(&o).lines().next().unwrap()).ends_with("sweep_n_par_report.svg"));
}

#[test]
fn generate_writes_realizations() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = geosteer(&["generate", "--count", "3", "--out", out]);
    assert!(o.status.success());
    let files = std::fs::read_dir(tmp.path().join("realizations")).unwrap().count();
    assert_eq!(files, 3);
    assert!(tmp.path().join("offset_log.csv").is_file());
    assert!(stdout(&o).contains("sha256"));
}
