use std::path::Path;
use std::process::{Command, Output};

fn jointreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointreg"))
        .args(args)
        .env_remove("JRMPC_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_exits_zero() {
    let out = jointreg(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("register-batch") && text.contains("baseline-icp"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = jointreg(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ply");
    let out = jointreg(&[
        "register-batch",
        "--inputs",
        path(&missing),
        "--out",
        path(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ply"));
}

#[test]
fn bad_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[batch]\nmax_iteration = 3\n").unwrap();
    let out = jointreg(&["synth", "--config", path(&cfg), "--out-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_iteration"));
}

fn key_values(stdout: &[u8]) -> Vec<(String, f64)> {
    String::from_utf8_lossy(stdout)
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').expect("key=value line");
            (k.to_string(), v.parse().expect("numeric value"))
        })
        .collect()
}

#[test]
fn synth_register_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    std::fs::write(
        &cfg,
        "seed = 4\n[synth]\ncardinality_range = [300, 400]\n[batch]\nmax_iterations = 30\nfix_variance_iters = 0\n[init]\nmean_strategy = \"sample-one-set\"\n",
    )
    .unwrap();
    let out = jointreg(&[
        "synth",
        "--config",
        path(&cfg),
        "--blob-points",
        "3000",
        "--angles",
        "0,10,20,30",
        "--snr-db",
        "20",
        "--outliers",
        "0.1",
        "--out-dir",
        path(d),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let views: Vec<String> = (0..4).map(|j| path(&d.join(format!("view_{j}.ply"))).to_string()).collect();
    let run = |record: &str, model: &str| {
        let mut args = vec!["register-batch", "--config", path(&cfg), "--out", record, "--model-out", model, "--inputs"];
        args.extend(views.iter().map(String::as_str));
        jointreg(&args)
    };
    let rec = d.join("run.json");
    let rec2 = d.join("run2.json");
    let model = d.join("model.json");
    let out = run(path(&rec), path(&model));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(run(path(&rec2), path(&model)).status.code(), Some(0));

    // Identical apart from the runtime.
    let strip = |p: &Path| -> String {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.contains("runtime_ms"))
            .collect()
    };
    assert_eq!(strip(&rec), strip(&rec2));

    let out = jointreg(&["eval", "--record", path(&rec), "--truth", path(&d.join("truth.json"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let kv = key_values(&out.stdout);
    let rmse = kv.iter().find(|(k, _)| k == "rotation_rmse").expect("rotation_rmse printed").1;
    assert!(rmse.is_finite() && rmse >= 0.0);

    let scene = d.join("scene.xyz");
    let out = jointreg(&["export-model", "--model", path(&model), "--out", path(&scene)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!std::fs::read_to_string(&scene).unwrap().is_empty());

    let out = jointreg(&["classify", "--model", path(&model)]);
    assert_eq!(out.status.code(), Some(0));
    let kv = key_values(&out.stdout);
    assert!(kv.iter().any(|(k, _)| k == "rejected"));

    let icp = d.join("icp.json");
    let truth = d.join("truth.json");
    let mut args = vec!["baseline-icp", "--out", path(&icp), "--truth", path(&truth), "--inputs"];
    args.extend(views.iter().map(String::as_str));
    assert_eq!(jointreg(&args).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Two collinear sets: the rigid step has no well-defined rotation.
    let line: String = (0..20).map(|i| format!("{} 0 0\n", i as f64 * 0.1)).collect();
    std::fs::write(d.join("a.xyz"), &line).unwrap();
    std::fs::write(d.join("b.xyz"), &line).unwrap();
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, "[init]\nk_policy = { absolute = 5 }\n").unwrap();
    let out = jointreg(&[
        "register-batch",
        "--config",
        path(&cfg),
        "--out",
        path(&d.join("r.json")),
        "--inputs",
        path(&d.join("a.xyz")),
        path(&d.join("b.xyz")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
