mod common;

use std::path::Path;

use optshift::cli::cli_main;
use optshift::rundir::Manifest;

fn call(args: &[&str]) -> i32 {
    let mut v = vec!["optshift"];
    v.extend_from_slice(args);
    cli_main(v.into_iter().map(Into::into))
}

fn manifest(run: &Path) -> Manifest {
    serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap()
}

fn staging_files(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(staging_files(&p));
        } else if p.file_name().unwrap().to_string_lossy().starts_with(".staging-") {
            out.push(p.display().to_string());
        }
    }
    out
}

const SMALL: &str = "[train.gbt]\nn_estimators = 15\nmax_depth = 3\nlearning_rate = 0.3\n";

fn pipeline(chain: &Path, cfg: &Path, run: &Path) {
    let (c, r) = (cfg.to_str().unwrap(), run.to_str().unwrap());
    let steps: Vec<Vec<&str>> = vec![
        vec!["ingest", "--run", r, "--input", chain.to_str().unwrap()],
        vec!["featurize", "--run", r],
        vec!["train", "--run", r, "--approach", "hh", "--symbols", "ALPHA,BETA"],
        vec!["train", "--run", r, "--approach", "ds", "--symbols", "ALPHA,BETA"],
        vec!["calibrate-ensemble", "--run", r, "--set", "ALPHA+BETA"],
        vec!["evaluate", "--run", r, "--split", "typical", "--model", "bsm"],
        vec!["evaluate", "--run", r, "--split", "typical", "--model", "e", "--set", "ALPHA+BETA"],
        vec!["evaluate", "--run", r, "--split", "atypical", "--model", "bsm"],
        vec!["evaluate", "--run", r, "--split", "atypical", "--model", "ds", "--set", "ALPHA+BETA"],
        vec!["report", "--run", r],
    ];
    for st in steps {
        let mut args = vec!["--config", c];
        args.extend(st.iter());
        assert_eq!(call(&args), 0, "{st:?}");
    }
}

#[test]
fn usage_errors_exit_with_clap_code() {
    assert_eq!(call(&["no-such-command"]), 2);
    assert_eq!(call(&["train", "--run", "x", "--approach", "zz", "--symbols", "A"]), 2);
    assert_eq!(call(&["synth", "--run", "x", "--experiment", "3"]), 2);
    assert_eq!(call(&["--help"]), 0);
}

#[test]
fn pipeline_is_deterministic_and_manifested() {
    let tmp = tempfile::tempdir().unwrap();
    let chain = tmp.path().join("chain.csv");
    common::write_nse_chain(&chain, 4, 0.15, 0.4);
    let cfg = tmp.path().join("config.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&chain, &cfg, &a);
    pipeline(&chain, &cfg, &b);

    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.stages.len(), 10);
    assert_eq!(ma.files, mb.files);
    for (rel, entry) in &ma.files {
        let (sha, bytes) = optshift::rundir::sha256_file(&a.join(rel)).unwrap();
        assert_eq!((sha.as_str(), bytes), (entry.sha256.as_str(), entry.bytes), "{rel}");
    }
    for rel in [
        "quotes/train.csv",
        "features/train.csv",
        "models/ALPHA+BETA/hh.json",
        "models/ALPHA+BETA/ensemble.toml",
        "reports/ALPHA+BETA/e_typical.json",
        "report/rmse_table.csv",
        "report/diagnostic.txt",
    ] {
        assert!(ma.files.contains_key(rel), "{rel} missing from manifest");
    }
    // every stage echoes the effective config
    let echoed: optshift::config::PipelineConfig = toml::from_str(&ma.stages[2].config_toml).unwrap();
    assert_eq!(echoed.train.gbt.n_estimators, 15);
    assert!(staging_files(&a).is_empty());

    let table = std::fs::read_to_string(a.join("report/rmse_table.csv")).unwrap();
    assert!(table.starts_with("model_id,split,rmse,n,excluded\n"));
    assert!(table.contains("ALPHA+BETA/e,typical,") && table.contains("bsm/bsm,atypical,"));
}

#[test]
fn failed_stage_leaves_run_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let r = run.to_str().unwrap();
    let good = tmp.path().join("good.csv");
    common::write_nse_chain(&good, 5, 0.15, 0.4);
    assert_eq!(call(&["ingest", "--run", r, "--input", good.to_str().unwrap()]), 0);
    let before = manifest(&run);

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "Symbol,Date\nX,01-Jan-2019\n").unwrap();
    assert_eq!(call(&["ingest", "--run", r, "--input", bad.to_str().unwrap()]), 1);
    // training before featurize is a runtime error too
    assert_eq!(call(&["train", "--run", r, "--approach", "hh", "--symbols", "ALPHA"]), 1);
    assert_eq!(call(&["evaluate", "--run", r, "--split", "typical", "--model", "hh", "--set", "nope"]), 1);

    assert_eq!(manifest(&run), before);
    assert!(staging_files(&run).is_empty());
    for (rel, entry) in &before.files {
        assert_eq!(optshift::rundir::sha256_file(&run.join(rel)).unwrap().0, entry.sha256, "{rel}");
    }
}

#[test]
fn synth_experiment_one_writes_a_curve_per_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("config.toml");
    std::fs::write(&cfg, format!("{SMALL}[synth.scenario]\npath_days = 60\n")).unwrap();
    let run = tmp.path().join("run");
    let code = call(&["--config", cfg.to_str().unwrap(), "synth", "--run", run.to_str().unwrap(), "--experiment", "1"]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(run.join("synth/experiment1_curves.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (ap, rm) = (col("approach"), col("rmse"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for m in ["hh", "ds"] {
        let r: Vec<_> = rows.iter().filter(|r| r[ap] == m).collect();
        assert_eq!(r.len(), 30, "{m}");
        assert!(r.iter().all(|r| r[rm].parse::<f64>().unwrap().is_finite()));
    }
    assert_eq!(rows.len(), 60);
}

#[test]
fn approx_error_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let code = call(&["approx-error", "--run", run.to_str().unwrap(), "--sigma-min", "0.1", "--sigma-max", "0.3", "--step", "0.1"]);
    assert_eq!(code, 0);
    let matrix = std::fs::read_to_string(run.join("approx_error/matrix.csv")).unwrap();
    // 3 sigmas squared
    assert_eq!(matrix.lines().count(), 1 + 9);
    let summary = std::fs::read_to_string(run.join("approx_error/summary.txt")).unwrap();
    assert!(!summary.is_empty());
    assert!(manifest(&run).files.contains_key("approx_error/scatter.csv"));
}
