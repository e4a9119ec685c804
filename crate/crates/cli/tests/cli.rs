use std::path::{Path, PathBuf};
use std::process::Command;

use zdc::config::ExperimentConfig;
use zdc::{emit_plot_data, load_policy, run_experiment, save_policy, CliError};
use zdc_core::evaluation::{evaluate_policy, EvalError, EvalOptions};
use zdc_core::{extract_policy, train, DistortionSpec, FiniteSource, ProbabilityVector, QuantizerSpace, TrainConfig};

const THREE_STATE: &str = r#"{"matrix": [[0.8, 0.15, 0.05], [0.1, 0.8, 0.1], [0.05, 0.15, 0.8]], "values": [0, 1, 2]}"#;

fn small_config(out: &Path) -> String {
    format!(
        r#"{{
        "name": "small",
        "source": {THREE_STATE},
        "methods": [{{"algorithm1": {{"n": 3, "beta": 0.9, "max_steps": 20000}}}}, {{"ofssq": {{"K": 3}}}}, "lloyd_max"],
        "rates": [2, 3],
        "eval_samples": 5000,
        "train_samples": 5000,
        "seeds": [1, 2],
        "baseline": "ofssq_k3",
        "output_dir": {:?}
    }}"#,
        out
    )
}

fn three_state() -> FiniteSource {
    FiniteSource::new(
        vec![vec![0.8, 0.15, 0.05], vec![0.1, 0.8, 0.1], vec![0.05, 0.15, 0.8]],
        vec![0.0, 1.0, 2.0],
        ProbabilityVector::uniform(3),
    )
    .unwrap()
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::from_json(&small_config(Path::new("unused"))).unwrap();
    let first = run_experiment(&config, Some(a.path()), 1).unwrap();
    let second = run_experiment(&config, Some(b.path()), 4).unwrap();
    assert_eq!(first.failed, 0);
    assert_eq!(first.rows, second.rows);
    assert_eq!(first.rows.len(), 3 * 2 * 2);
    assert_eq!(first.gains.len(), 2 * 2 * 2);

    let fa = files_under(a.path());
    let fb = files_under(b.path());
    assert_eq!(fa.len(), fb.len());
    // 12 reports, 4 policies, 4 codebooks, 4 quantizers, results and gains.
    assert_eq!(fa.len(), 26);
    for ((pa, ca), (pb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs between runs", pa.display());
    }

    let csv = std::fs::read_to_string(&first.results_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "method,rate_bits,n,K,T,seed,avg_distortion,snr_db,status");
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods[..4], ["alg1_n3"; 4]);
    assert_eq!(methods[4..8], ["ofssq_k3"; 4]);
    assert_eq!(methods[8..], ["lloyd_max"; 4]);
    for r in &first.rows {
        assert!(r.rate_bits == 1.0 || r.rate_bits == 3f64.log2());
    }
}

#[test]
fn empty_methods_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(dir.path()).replace(
        r#"[{"algorithm1": {"n": 3, "beta": 0.9, "max_steps": 20000}}, {"ofssq": {"K": 3}}, "lloyd_max"]"#,
        "[]",
    );
    assert!(matches!(ExperimentConfig::from_json(&text), Err(CliError::ConfigParse(_))));

    let path = dir.path().join("empty.json");
    std::fs::write(&path, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zdc"))
        .args(["experiment", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one method"));
}

#[test]
fn all_failed_cells_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config(dir.path()).replace(
        r#"[{"algorithm1": {"n": 3, "beta": 0.9, "max_steps": 20000}}, {"ofssq": {"K": 3}}, "lloyd_max"]"#,
        r#"[{"ofssq": {"K": 5}}]"#,
    );
    let text = text.replace(r#""baseline": "ofssq_k3","#, "");
    let config = ExperimentConfig::from_json(&text).unwrap();
    let err = run_experiment(&config, None, 2).unwrap_err();
    assert!(matches!(err, CliError::AllCellsFailed(4)), "{err}");
    let csv = std::fs::read_to_string(dir.path().join("small.results.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.ends_with(",failed")).count(), 4);

    let path = dir.path().join("failing.json");
    std::fs::write(&path, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zdc"))
        .args(["experiment", "--workers", "1", "--config"])
        .arg(&path)
        .env("ZDC_LOG", "off")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("all 4 cells failed"));
}

fn trained_policy(n: u32) -> zdc_core::Policy {
    let source = three_state();
    let dist = DistortionSpec::squared_error_for(&source);
    let space = QuantizerSpace::full(3, 2).unwrap();
    let cfg = TrainConfig { n, beta: 0.9, max_steps: 20_000, seed: 5, ..Default::default() };
    let (table, _) = train(&source, &dist, &space, &cfg).unwrap();
    extract_policy(&table, &cfg, &space, &source, &dist).unwrap()
}

#[test]
fn policy_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/policy.json");
    let policy = trained_policy(4);
    assert!(!policy.action_map().is_empty());
    save_policy(&policy, &path).unwrap();
    assert_eq!(load_policy(&path).unwrap(), policy);

    let missing = load_policy(&dir.path().join("nope.json")).unwrap_err();
    assert!(matches!(missing, CliError::Io { .. }));
}

#[test]
fn malformed_policy_files_are_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    save_policy(&trained_policy(4), &path).unwrap();
    let good: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();

    let mut bad_counts = good.clone();
    let counts = bad_counts["map"][0]["state"].as_array_mut().unwrap();
    counts[0] = serde_json::json!(counts[0].as_u64().unwrap() + 1);
    let mut bad_version = good.clone();
    bad_version["version"] = serde_json::json!(99);
    let mut bad_action = good.clone();
    bad_action["fallback"] = serde_json::json!([0, 1]);

    for (what, value) in [("counts", bad_counts), ("version", bad_version), ("action", bad_action)] {
        std::fs::write(&path, value.to_string()).unwrap();
        let err = load_policy(&path).unwrap_err();
        assert!(matches!(err, CliError::Schema(_)), "{what}: {err}");
    }
    std::fs::write(&path, "{not json").unwrap();
    assert!(matches!(load_policy(&path).unwrap_err(), CliError::Schema(_)));
}

#[test]
fn loaded_policy_with_other_n_is_rejected_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    save_policy(&trained_policy(4), &path).unwrap();
    let policy = load_policy(&path).unwrap();
    let source = three_state();
    let dist = DistortionSpec::squared_error_for(&source);
    let opts = EvalOptions { expected_n: Some(5), ..EvalOptions::new(100, 0) };
    let err = evaluate_policy(&source, &policy, &dist, &opts).unwrap_err();
    assert_eq!(err, EvalError::PolicyConfigMismatch { policy: 4, requested: 5 });

    let source_path = dir.path().join("source.json");
    std::fs::write(&source_path, THREE_STATE).unwrap();
    let run = |n: &str| {
        Command::new(env!("CARGO_BIN_EXE_zdc"))
            .args(["eval", "--samples", "200", "--seed", "3", "--n", n, "--policy"])
            .arg(&path)
            .arg("--source")
            .arg(&source_path)
            .output()
            .unwrap()
    };
    let bad = run("5");
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("n = 4"));
    let good = run("4");
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stderr));
    let report: serde_json::Value = serde_json::from_slice(&good.stdout).unwrap();
    assert_eq!(report["samples"], 200);
    assert_eq!(report["rate_bits"], 1.0);
}

#[test]
fn fig1_shaped_grid_gives_five_rows_and_three_methods() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk-fig1.json"))
        .unwrap()
        .replace("200000", "3000")
        .replace("100000", "2000");
    let config = ExperimentConfig::from_json(&text).unwrap();
    let summary = run_experiment(&config, Some(dir.path()), 4).unwrap();
    assert_eq!(summary.failed, 0);
    let plot = emit_plot_data(&summary.results_path, dir.path(), None).unwrap();
    assert_eq!(plot.file_name().unwrap(), "desk-fig1.plot.csv");
    let text = std::fs::read_to_string(plot).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rate_bits,alg1_n1,alg1_n5,ofssq_k8");
    assert_eq!(lines.len(), 6);
    let rates: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    let expected: Vec<f64> = (2..=6).map(|m| (m as f64).log2()).collect();
    assert_eq!(rates, expected);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
}

#[test]
fn plot_subcommand_selects_methods() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("fig3.results.csv");
    std::fs::write(
        &results,
        "method,rate_bits,n,K,T,seed,avg_distortion,snr_db,status\n\
         alg1_n5,1.0,5,,10,1,0.36,4.39,ok\n\
         lloyd_max,1.0,,1,10,1,0.36,4.40,ok\n\
         lloyd_max,2.0,,1,10,1,0.12,9.30,ok\n\
         alg1_n5,2.0,5,,10,1,0.12,9.28,ok\n",
    )
    .unwrap();
    let out = dir.path().join("plots");
    let run = |methods: &str| {
        Command::new(env!("CARGO_BIN_EXE_zdc"))
            .args(["plot", "--results"])
            .arg(&results)
            .arg("--out-dir")
            .arg(&out)
            .args(["--methods", methods])
            .output()
            .unwrap()
    };
    assert!(run("alg1_n5,lloyd_max").status.success());
    let text = std::fs::read_to_string(out.join("fig3.plot.csv")).unwrap();
    assert_eq!(text, "rate_bits,alg1_n5,lloyd_max\n1,4.39,4.4\n2,9.28,9.3\n");

    let missing = run("alg1_n5,ofssq_k8");
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("ofssq_k8"));
}

#[test]
fn train_subcommand_writes_a_loadable_policy() {
    let dir = tempfile::tempdir().unwrap();
    let policy_out = dir.path().join("p.json");
    let table_out = dir.path().join("q.json");
    let job = format!(
        r#"{{"source": {THREE_STATE}, "levels": 2, "algorithm1": {{"n": 2, "beta": 0.9, "max_steps": 5000}},
            "seed": 3, "policy_out": {policy_out:?}, "table_out": {table_out:?}}}"#
    );
    let job_path = dir.path().join("job.json");
    std::fs::write(&job_path, job).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zdc"))
        .args(["train", "--config"])
        .arg(&job_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(stats["steps"].as_u64().unwrap() <= 5000);
    assert_eq!(load_policy(&policy_out).unwrap().n(), 2);
    let table = zdc_core::QTable::from_json(&std::fs::read_to_string(table_out).unwrap()).unwrap();
    assert_eq!(table.n(), 2);
}
