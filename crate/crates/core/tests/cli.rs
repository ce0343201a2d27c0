use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "train.epochs=3",
    "--set",
    "train.ensemble=16",
    "--set",
    "system.steps=40",
];

fn etgpssm(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etgpssm"))
        .args(args)
        .env("ETGPSSM_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn metrics_row(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,dataset,seed,rmse,spread,coverage,crps,forecast_rmse,wall_time"
    );
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(lines.next().unwrap().as_bytes());
    reader.records().next().unwrap().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn repeated_runs_give_identical_metrics() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("kink_dnn.cfg");
    std::fs::write(&cfg, "[system]\nkind = kink\nr_var = 0.008\n\n[model]\nvariant = etgpssm-dnn\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut rows = Vec::new();
    for out in ["a", "b"] {
        let dir = root.path().join(out);
        let mut args = vec!["run", "--config", cfg, "--seed", "0", "--out", dir.to_str().unwrap()];
        args.extend_from_slice(SMALL);
        let o = etgpssm(&args, root.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        rows.push(metrics_row(&dir));
    }
    let n = rows[0].len();
    assert_eq!(rows[0][..n - 1], rows[1][..n - 1]);
    assert_eq!(rows[0][0], "etgpssm-dnn");
}

#[test]
fn missing_dataset_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let o = etgpssm(&["run", "--system", "csv", "--set", "system.path=/no/such/data.csv"], root.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/data.csv"));
}

#[test]
fn parse_errors_report_line_and_column() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.cfg");
    std::fs::write(&cfg, "[model]\nvariant = etgpssm-dnn\nthis line has no equals sign\n").unwrap();
    let o = etgpssm(&["run", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("column"), "{err}");
}

#[test]
fn lorenz_run_emits_all_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--variant", "etgpssm-dnn", "--system", "lorenz96", "--dx", "20"];
    args.extend_from_slice(SMALL);
    let o = etgpssm(&args, root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = root.path().join("lorenz96-etgpssm-dnn-seed0");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    for file in ["checkpoint.json", "elbo_trace.csv", "metrics.csv", "filtered.csv", "manifest.json"] {
        assert!(dir.join(file).exists(), "{file} missing");
        let listed = manifest["artifacts"].as_object().unwrap().values().filter(|v| v.as_str() == Some(file)).count();
        assert_eq!(listed, 1, "{file}");
    }
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let filtered = std::fs::read_to_string(dir.join("filtered.csv")).unwrap();
    assert_eq!(filtered.lines().count(), 41);
    assert!(filtered.starts_with("t,x_0,mean_0,q025_0,q975_0,x_1"));
    assert!(std::fs::read_dir(&dir).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn kink_run_writes_transition_grid() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("k");
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    assert!(etgpssm(&args, root.path()).status.success());
    let grid = std::fs::read_to_string(dir.join("transition.csv")).unwrap();
    assert!(grid.starts_with("x,true_f,learned_mean,lower,upper"));
    assert_eq!(grid.lines().count(), 452);
}

#[test]
fn sweep_runs_the_grid_and_aggregates() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("noise.cfg");
    std::fs::write(
        &cfg,
        "[run]\nname = noise\n\n[train]\nepochs = 2\nensemble = 8\n\n[system]\nsteps = 30\n\n\
         [sweep]\nsystem.r_var = 0.0008, 0.008, 0.08, 0.8\nrun.seed = 0, 1\n",
    )
    .unwrap();
    let o = etgpssm(&["sweep", "--config", cfg.to_str().unwrap()], root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = root.path().join("noise");
    let runs = std::fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(runs, 8);
    let agg = std::fs::read_to_string(dir.join("aggregate.csv")).unwrap();
    let mut lines = agg.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("system.r_var,runs,rmse_mean,rmse_std"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn empty_grid_is_a_single_run() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--set", "run.name=single"];
    args.extend_from_slice(SMALL);
    let o = etgpssm(&args, root.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let agg = std::fs::read_to_string(root.path().join("single/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2);
}

#[test]
fn failing_grid_points_are_recorded() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("mixed.cfg");
    std::fs::write(
        &cfg,
        "[run]\nname = mixed\n\n[train]\nepochs = 1\nensemble = 8\n\n[system]\nsteps = 20\n\n\
         [sweep]\nsystem.d_x = 1, 2\n",
    )
    .unwrap();
    let o = etgpssm(&["sweep", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("2 runs, 1 failed"), "{out}");
}

#[test]
fn simulate_writes_a_dataset() {
    let root = tempfile::tempdir().unwrap();
    let path = root.path().join("l96.csv");
    let o = etgpssm(
        &["simulate", "--system", "lorenz96", "--dx", "6", "--steps", "25", "--out", path.to_str().unwrap()],
        root.path(),
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(text.lines().next().unwrap().starts_with("t,y_0"));
}

#[test]
fn count_params_prints_the_convention() {
    let root = tempfile::tempdir().unwrap();
    let o = etgpssm(&["count-params", "--dx", "100", "--inducing", "100"], root.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("etgpssm,100,100,54287"));
    let o = etgpssm(&["count-params", "--variant", "nonsense"], root.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn time_transition_writes_scaling_csv() {
    let root = tempfile::tempdir().unwrap();
    let path = root.path().join("scaling.csv");
    let o = etgpssm(
        &[
            "time-transition",
            "--dx",
            "2,3",
            "--inducing",
            "5",
            "--members",
            "10",
            "--repetitions",
            "3",
            "--out",
            path.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("variant,d_x,M,param_count,median_seconds"));
    assert_eq!(text.lines().count(), 5);
}
