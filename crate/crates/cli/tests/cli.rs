use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn flarecast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flarecast"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FLARECAST_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTH: &str = r#"{
  "n_per_class": {"X": 6, "M": 10, "C": 20, "B": 15, "N": 49},
  "P": 3,
  "T": 5,
  "class_signal": {"X": {"drift": 0.05, "amplitude": 1.0}},
  "noise_sd": 0.8,
  "outlier_fraction": 0.1,
  "outlier_magnitude": 4.0,
  "seed": 11,
  "n_partitions": 3,
  "param_names": ["TOTUSJH", "TOTPOT", "ABSNJZH"]
}"#;

fn experiment(task: &str) -> String {
    format!(
        r#"{{
  "task": "{task}",
  "parameters": ["TOTUSJH", "TOTPOT", "ABSNJZH"],
  "test_partitions": [2, 3],
  "contamination_grid": [0.0, 0.1, 0.3],
  "n_trials": 2,
  "master_seed": 5,
  "data": {{"directory": "data"}}
}}"#
    )
}

/// Temp dir holding `synth.json`, generated `data/` and `exp.json`.
fn workspace(task: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("synth.json"), SYNTH).unwrap();
    fs::write(dir.path().join("exp.json"), experiment(task)).unwrap();
    let o = flarecast(&["synth", "--config", "synth.json", "--out", "data"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_meta.json" {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_deterministic() {
    let ws = workspace("XM_VS_CBN");
    let o = flarecast(&["synth", "--config", "synth.json", "--out", "again"], ws.path());
    assert_eq!(code(&o), 0);
    let a = tree(&ws.path().join("data"));
    assert_eq!(a, tree(&ws.path().join("again")));
    assert!(a.iter().any(|(p, _)| p == Path::new("partition1/manifest.csv")));
    assert!(ws.path().join("data/run_meta.json").exists());
    let o = flarecast(&["synth", "--config", "synth.json", "--set", "seed=12", "--out", "other"], ws.path());
    assert_eq!(code(&o), 0);
    assert_ne!(a, tree(&ws.path().join("other")));
}

#[test]
fn sweep_writes_reports_and_is_reproducible() {
    let ws = workspace("XM_VS_CBN");
    let o = flarecast(&["sweep", "--config", "exp.json", "--out", "results"], ws.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let results = ws.path().join("results");
    for f in ["report.json", "report.csv", "manifest.json", "run_meta.json"] {
        assert!(results.join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(results.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(results.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config"]["n_trials"], 2);

    let o = flarecast(&["--threads", "1", "sweep", "--config", "exp.json", "--out", "rerun"], ws.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["report.json", "report.csv", "manifest.json"] {
        assert_eq!(
            fs::read(results.join(f)).unwrap(),
            fs::read(ws.path().join("rerun").join(f)).unwrap(),
            "{f} differs"
        );
    }

    let o = flarecast(&["report", "--input", "results", "--out", "reemit", "--format", "csv"], ws.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(ws.path().join("reemit/report.csv")).unwrap(), csv);
    assert!(!ws.path().join("reemit/report.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("r\tpartition\tTSS\tHSS2"));
}

#[test]
fn detect_lists_every_score_and_flags_by_floor() {
    let ws = workspace("X_VS_N");
    // 49 N instances in the training partition
    let o = flarecast(&["detect", "--config", "exp.json", "--contamination", "0", "--out", "d0"], ws.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = |dir: &str| -> Vec<Vec<String>> {
        fs::read_to_string(ws.path().join(dir).join("detect.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(String::from).collect())
            .collect()
    };
    let r0 = rows("d0");
    assert_eq!(r0.len(), 49);
    assert!(r0.iter().all(|r| r[2] == "false"));
    let o = flarecast(&["detect", "--config", "exp.json", "--contamination", "0.1", "--out", "d1"], ws.path());
    assert_eq!(code(&o), 0);
    let r1 = rows("d1");
    assert_eq!(r1.iter().filter(|r| r[2] == "true").count(), 4);
    assert!(r1[..4].iter().all(|r| r[2] == "true"));
    let scores: Vec<f64> = r1.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    flarecast(&["detect", "--config", "exp.json", "--contamination", "0.1", "--out", "d2"], ws.path());
    assert_eq!(
        fs::read(ws.path().join("d1/detect.csv")).unwrap(),
        fs::read(ws.path().join("d2/detect.csv")).unwrap()
    );
}

#[test]
fn validate_prints_counts() {
    let ws = workspace("XM_VS_CBN");
    let o = flarecast(&["validate", "--config", "exp.json"], ws.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("1,train,6,10,20,15,49,1:8,1:5"), "{out}");
    let o = flarecast(&["validate", "--config", "exp.json", "--subsample", "10"], ws.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("2,test,6,10,10,10,10,"));
}

#[test]
fn gridsearch_picks_a_candidate() {
    let ws = workspace("XM_VS_CBN");
    let o = flarecast(
        &[
            "gridsearch",
            "--config",
            "exp.json",
            "--set",
            r#"grid_search={"C": [100], "gamma": [0.01]}"#,
            "--out",
            "gs",
        ],
        ws.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("C=100 gamma=0.01"));
    assert!(ws.path().join("gs/gridsearch.json").exists());
}

#[test]
fn input_errors_exit_with_one() {
    let ws = workspace("XM_VS_CBN");
    let o = flarecast(&["sweep", "--config", "nope.json", "--out", "x"], ws.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nope.json"));
    let o = flarecast(&["sweep", "--config", "exp.json", "--set", "n_trails=2", "--out", "x"], ws.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("n_trails"));
    let o = flarecast(&["sweep", "--config", "exp.json", "--bogus", "--out", "x"], ws.path());
    assert_eq!(code(&o), 1);
    let o = flarecast(&["sweep", "--config", "exp.json", "--set", "test_partitions=[1]", "--out", "x"], ws.path());
    assert_eq!(code(&o), 1);
    let o = flarecast(&["sweep", "--preset", "experiment-z", "--out", "x"], ws.path());
    assert_eq!(code(&o), 1);
    // experiment-a reads data/partition<k>; partitions 4 and 5 do not exist here
    let o = flarecast(
        &["sweep", "--preset", "experiment-a", "--set", r#"parameters=["TOTUSJH","TOTPOT"]"#, "--out", "x"],
        ws.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("partition4"), "{}", stderr(&o));
    let o = flarecast(&["sweep", "--preset", "experiment-a", "--out", "x"], ws.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("TOTBSQ"), "{}", stderr(&o));
    fs::write(ws.path().join("broken.json"), "{ not json").unwrap();
    let o = flarecast(&["validate", "--config", "broken.json"], ws.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn runtime_errors_exit_with_two() {
    let ws = workspace("X_VS_N");
    // more X than N in the training partition cannot be undersampled
    fs::write(
        ws.path().join("synth_few.json"),
        SYNTH.replace(r#""N": 49"#, r#""N": 4"#),
    )
    .unwrap();
    let o = flarecast(&["synth", "--config", "synth_few.json", "--out", "few"], ws.path());
    assert_eq!(code(&o), 0);
    let o = flarecast(&["sweep", "--config", "exp.json", "--set", "data.directory=few", "--out", "x"], ws.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("undersample"));
}

#[test]
fn help_documents_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["validate", "synth", "detect", "sweep", "gridsearch", "report"] {
        let o = flarecast(&[sub, "--help"], dir.path());
        assert_eq!(code(&o), 0);
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.contains("--out") || sub == "validate", "{sub}");
        assert!(text.contains("--threads"), "{sub}");
    }
}
