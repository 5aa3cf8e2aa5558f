use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cfkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfkit"))
        .args(args)
        .output()
        .expect("cfkit runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A 60x40 MovieLens-100K style directory: `u.data` plus `u.item` with
/// 19 genre flags.
fn synthetic_dir(dir: &Path) -> PathBuf {
    let root = dir.join("synth");
    std::fs::create_dir_all(&root).unwrap();
    let mut data = String::new();
    for u in 1..=60u32 {
        for i in 1..=40u32 {
            if (u * 13 + i * 7) % 3 != 0 {
                let r = 1 + (u % 3 + i % 4 + (u * i) % 2) % 5;
                writeln!(data, "{u}\t{i}\t{r}\t88125{u}{i}").unwrap();
            }
        }
    }
    std::fs::write(root.join("u.data"), data).unwrap();
    let mut items = String::new();
    for i in 1..=40u32 {
        let flags: Vec<&str> = (0..19)
            .map(|g| if (i + g) % 5 == 0 || g == i % 19 { "1" } else { "0" })
            .collect();
        writeln!(items, "{i}|Movie {i} (1995)|01-Jan-1995||http://x|{}", flags.join("|")).unwrap();
    }
    std::fs::write(root.join("u.item"), items).unwrap();
    root
}

fn rmse_mae_columns(csv: &Path) -> Vec<String> {
    std::fs::read_to_string(csv)
        .unwrap()
        .lines()
        .map(|l| l.split(',').take(7).collect::<Vec<_>>().join(","))
        .collect()
}

const FAST: [&str; 6] = ["--epochs", "15", "--k", "4", "--no-warmup", "--tol=0"];

#[test]
fn ingest_prints_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = synthetic_dir(tmp.path());
    let o = cfkit(&["ingest", dir.join("u.data").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(dir.join("u.data")).unwrap().lines().count();
    assert!(
        stdout(&o).starts_with(&format!("60 users, 40 items, {lines} ratings")),
        "{}",
        stdout(&o)
    );
}

#[test]
fn ingest_csv_latest() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ratings.csv");
    std::fs::write(
        &path,
        "userId,movieId,rating,timestamp\n1,10,4.5,1\n1,11,3.0,2\n2,10,2.5,3\n",
    )
    .unwrap();
    let o = cfkit(&["ingest", path.to_str().unwrap(), "--format", "csv_latest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("2 users, 2 items, 3 ratings"));
}

#[test]
fn malformed_input_fails_with_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.data");
    std::fs::write(&path, "1\t1\t5\t0\n1\t2\tfive\t0\n2\t2\n2\t3\t3\t0\n").unwrap();
    let o = cfkit(&["ingest", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    let lenient = cfkit(&["ingest", path.to_str().unwrap(), "--lenient"]);
    assert!(lenient.status.success());
    assert!(stdout(&lenient).starts_with("2 users, 2 items, 2 ratings"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = synthetic_dir(tmp.path());
    let data = dir.to_str().unwrap();
    assert_eq!(cfkit(&["sweep", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        cfkit(&["sweep", "--algos", "nope", "--data", data]).status.code(),
        Some(2)
    );

    let o = cfkit(&["evaluate", "--data", data, "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("params"), "{}", stderr(&o));

    let o = cfkit(&[
        "evaluate",
        "--data",
        dir.join("u.data").to_str().unwrap(),
        "--algos",
        "hybrid",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.features"), "{}", stderr(&o));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = []\n[dataset]\npath = \"x\"\n").unwrap();
    let o = cfkit(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seeds"), "{}", stderr(&o));

    std::fs::write(&cfg, "sparsity = \"lots\"\n").unwrap();
    assert_eq!(
        cfkit(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_data_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = cfkit(&[
        "evaluate",
        "--data",
        "/nonexistent/u.data",
        "--algos",
        "mf",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/u.data"), "{}", stderr(&o));
}

#[test]
fn train_twice_gives_identical_model_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = synthetic_dir(tmp.path());
    let mut models = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = cfkit(&[
            "train",
            "--data",
            dir.to_str().unwrap(),
            "--algo",
            "mf",
            "--k",
            "8",
            "--lambda",
            "0.05",
            "--seed",
            "7",
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(out.join("trace.json").is_file());
        assert!(out.join("run_config.toml").is_file());
        models.push(std::fs::read(out.join("model.bin")).unwrap());
    }
    assert!(!models[0].is_empty());
    assert_eq!(models[0], models[1]);
}

#[test]
fn partitioned_train_matches_serial_als() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = synthetic_dir(tmp.path());
    let trace = |extra: &[&str], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec![
            "train",
            "--data",
            dir.to_str().unwrap(),
            "--optimizer",
            "als",
            "--epochs",
            "5",
            "--tol=0",
        ];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["-o", out.to_str().unwrap()]);
        let o = cfkit(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
        v["test_rmse"].as_f64().unwrap()
    };
    let serial = trace(&[], "serial");
    let split = trace(&["--partitions", "3", "--sync-rounds", "5"], "parts");
    assert!((serial - split).abs() < 1e-9, "{serial} vs {split}");
}

#[test]
fn sweep_writes_one_row_per_cell_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = synthetic_dir(tmp.path());
    let out = tmp.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--data",
        dir.to_str().unwrap(),
        "--sparsity",
        "0.2,0.5,0.8",
        "--algos",
        "baseline_cf,mf,hybrid,ann",
        "--seeds",
        "3",
        "--tables",
        "4",
        "--bits",
        "4",
        "-o",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(&FAST);
    let o = cfkit(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = rmse_mae_columns(&out.join("results.csv"));
    assert_eq!(first.len(), 1 + 36);
    assert!(out.join("results.json").is_file());

    let replay = tmp.path().join("replay");
    let o = cfkit(&[
        "sweep",
        "--config",
        out.join("run_config.toml").to_str().unwrap(),
        "-o",
        replay.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rmse_mae_columns(&replay.join("results.csv")), first);

    let o = cfkit(&["report", out.join("results.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 2 + 12, "{table}");
    assert!(table.lines().next().unwrap().starts_with("Algorithm"));
    assert!(table.contains("20% (retained 80%)"));
}

#[test]
fn report_rejects_foreign_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("x.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    let o = cfkit(&["report", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("header"), "{}", stderr(&o));
}

#[test]
fn tune_writes_replayable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = synthetic_dir(tmp.path());
    let out = tmp.path().join("tune");
    let mut args = vec![
        "tune",
        "--data",
        dir.to_str().unwrap(),
        "--grid-k",
        "2,4",
        "--grid-lambda",
        "0.05",
        "--grid-alpha",
        "0.5,1",
        "--folds",
        "2",
        "-o",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(&FAST);
    let o = cfkit(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("best: k="));
    let tuned = out.join("tuned_config.toml");
    let text = std::fs::read_to_string(&tuned).unwrap();
    assert!(!text.contains("[tuning"), "{text}");
    let outcome: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("tune.json")).unwrap()).unwrap();
    assert_eq!(outcome["table"].as_array().unwrap().len(), 2 + 2 * 2);

    let eval = tmp.path().join("eval");
    let o = cfkit(&[
        "evaluate",
        "--config",
        tuned.to_str().unwrap(),
        "-o",
        eval.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(rmse_mae_columns(&eval.join("results.csv")).len(), 1 + 2);
}
