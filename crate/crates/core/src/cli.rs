//! Command-line front end. Each subcommand is one pipeline stage writing into
//! a run directory; see `rundir` for the manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{CalibrationMode, PipelineConfig};
use crate::dataset::{featurize, read_dataset_csv, write_dataset_csv, FeaturizedRow, RateSource};
use crate::ensemble::{sigma0_of_training_set, EnsembleParams};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, pool_histograms, qq_export, write_qq_csv, EvalReport, ModelKind, ModelSet};
use crate::features::{read_underlying_csv, series_from_quotes};
use crate::gbt::TrainedModel;
use crate::ingest::{clean_and_filter, parse_chain_csv, read_quotes_csv, split_by_date, write_quotes_csv, SplitKind};
use crate::pipeline::{calibrate_ensemble, fit_training_set, holdout_tail, train_approach, Approach};
use crate::pricing::{approx_error_study, ErrorStudyConfig};
use crate::rundir::{RunDir, StageRecord};
use crate::synthlab::{pooled_rows, run_experiment_1, run_experiment_2, write_curves_csv, write_positions_csv};

#[derive(Debug, Parser)]
#[command(name = "optshift", version, about = "Option price prediction under volatility shifts")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults to the configuration echoed by
    /// the run directory's last stage, or built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArg {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, clean and split raw option-chain CSVs.
    Ingest {
        #[command(flatten)]
        run: RunArg,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Build feature/target datasets from the ingested quotes.
    Featurize {
        #[command(flatten)]
        run: RunArg,
        /// `symbol,date,close` file; otherwise the underlying value on the option rows is used.
        #[arg(long)]
        underlying: Option<PathBuf>,
        #[arg(long, default_value = "%Y-%m-%d")]
        date_format: String,
        /// Constant risk-free rate (decimal).
        #[arg(long, conflicts_with = "rate_file")]
        rate: Option<f64>,
        /// `date,yield` file with yields in percent.
        #[arg(long)]
        rate_file: Option<PathBuf>,
    },
    /// Fit one approach on the training split.
    Train {
        #[command(flatten)]
        run: RunArg,
        #[arg(long)]
        approach: Approach,
        /// Training symbols; all symbols when omitted.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        symbols: Vec<String>,
        /// Training-set name; defaults to the symbols joined by '+', or "all".
        #[arg(long)]
        set: Option<String>,
    },
    /// Grid-search the ensemble weights for a training set.
    CalibrateEnsemble {
        #[command(flatten)]
        run: RunArg,
        #[arg(long, default_value = "all")]
        set: String,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<CalibrationMode>,
    },
    /// Score one model on one test split.
    Evaluate {
        #[command(flatten)]
        run: RunArg,
        #[arg(long)]
        split: SplitKind,
        #[arg(long)]
        model: ModelKind,
        #[arg(long, default_value = "all")]
        set: String,
        /// Restrict the test rows to these symbols.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        symbols: Vec<String>,
    },
    /// Synthetic volatility-shift experiments.
    Synth {
        #[command(flatten)]
        run: RunArg,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        experiment: u8,
    },
    /// Accuracy study of the implied-volatility approximation.
    ApproxError {
        #[command(flatten)]
        run: RunArg,
        #[arg(long, default_value_t = 0.2)]
        t: f64,
        /// Moneyness K/S.
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 0.05)]
        sigma_min: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_max: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 0.0)]
        r: f64,
    },
    /// Collect evaluation reports into tables and comparison exports.
    Report {
        #[command(flatten)]
        run: RunArg,
    },
}

fn parse_mode(s: &str) -> std::result::Result<CalibrationMode, String> {
    match s {
        "holdout" => Ok(CalibrationMode::Holdout),
        "test" | "test-splits" => Ok(CalibrationMode::TestSplits),
        other => Err(format!("unknown calibration mode {other:?} (holdout|test)")),
    }
}

/// Runs the CLI; returns the process exit status.
pub fn cli_main(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            1
        }
    }
}

struct Ctx {
    dir: RunDir,
    cfg: PipelineConfig,
    cfg_text: String,
}

impl Ctx {
    fn new(run: &Path, config: Option<&Path>) -> Result<Self> {
        let dir = RunDir::open(run)?;
        let cfg = match config {
            Some(p) => PipelineConfig::load(p)?,
            None => match dir.manifest()?.stages.last() {
                Some(s) => PipelineConfig::from_toml(&s.config_toml)?,
                None => PipelineConfig::default(),
            },
        };
        let cfg_text = cfg.to_toml()?;
        Ok(Self { dir, cfg, cfg_text })
    }

    fn record(&self, stage: &str, args: Vec<String>) -> StageRecord {
        StageRecord {
            stage: stage.into(),
            args,
            seeds: BTreeMap::from([
                ("gbt".to_string(), self.cfg.train.gbt.seed),
                ("synth".to_string(), self.cfg.synth.scenario.seed),
            ]),
            config_toml: self.cfg_text.clone(),
        }
    }
}

fn quotes_path(kind: SplitKind) -> String {
    format!("quotes/{}.csv", kind.as_str())
}

fn features_path(kind: SplitKind) -> String {
    format!("features/{}.csv", kind.as_str())
}

fn model_path(set: &str, name: &str) -> String {
    format!("models/{set}/{name}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn filter_symbols(rows: Vec<FeaturizedRow>, symbols: &BTreeSet<String>) -> Vec<FeaturizedRow> {
    if symbols.is_empty() {
        rows
    } else {
        rows.into_iter().filter(|r| symbols.contains(&r.symbol)).collect()
    }
}

fn load_set_symbols(ctx: &Ctx, set: &str) -> Result<BTreeSet<String>> {
    let p = ctx.dir.path(&model_path(set, "hh.symbols.json"));
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn load_models(ctx: &Ctx, set: &str, kind: ModelKind) -> Result<ModelSet> {
    let load = |name: &str| TrainedModel::load(&ctx.dir.path(&model_path(set, name)));
    let mut m = ModelSet::default();
    match kind {
        ModelKind::Bsm => {}
        ModelKind::Hh => m.hh = Some(load("hh.json")?),
        ModelKind::Ds => m.ds = Some(load("ds.json")?),
        ModelKind::E => {
            m.hh = Some(load("hh.json")?);
            m.ds = Some(load("ds.json")?);
            m.ensemble = Some(EnsembleParams::load(&ctx.dir.path(&model_path(set, "ensemble.toml")))?);
        }
    }
    Ok(m)
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Ingest { run, input } => {
            let ctx = Ctx::new(&run.run, config)?;
            let mut raw = Vec::new();
            for p in &input {
                raw.extend(parse_chain_csv(p, &ctx.cfg.schema)?);
            }
            let (quotes, report) = clean_and_filter(&raw, &ctx.cfg.filter);
            log::info!("{report}");
            let split = split_by_date(&quotes, &ctx.cfg.split)?;
            let mut st = ctx.dir.stage(ctx.record("ingest", input.iter().map(|p| p.display().to_string()).collect()));
            for kind in SplitKind::ALL {
                write_quotes_csv(&st.output(&quotes_path(kind))?, split.get(kind))?;
            }
            let mut text = report.to_string();
            let _ = writeln!(text, "beyond_atypical_end: {}", split.beyond_end);
            for kind in SplitKind::ALL {
                let _ = writeln!(text, "{}: {}", kind.as_str(), split.get(kind).len());
            }
            write_text(&st.output("quotes/drop_report.txt")?, &text)?;
            st.commit()?;
        }
        Command::Featurize {
            run,
            underlying,
            date_format,
            rate,
            rate_file,
        } => {
            let ctx = Ctx::new(&run.run, config)?;
            let rates = match (&rate_file, rate) {
                (Some(p), _) => RateSource::read_percent_csv(p, &date_format)?,
                (None, Some(r)) => RateSource::Constant(r),
                (None, None) => RateSource::Constant(ctx.cfg.rate),
            };
            let splits: Vec<_> = SplitKind::ALL
                .iter()
                .map(|k| Ok((*k, read_quotes_csv(&ctx.dir.path(&quotes_path(*k)))?)))
                .collect::<Result<_>>()?;
            let series = match &underlying {
                Some(p) => read_underlying_csv(p, &date_format)?,
                None => series_from_quotes(splits.iter().flat_map(|(_, q)| q.iter())),
            };
            let mut st = ctx.dir.stage(ctx.record("featurize", vec![]));
            let mut text = String::new();
            for (kind, quotes) in &splits {
                let (rows, rep) = featurize(quotes, &series, &rates, &ctx.cfg.featurize);
                let _ = writeln!(text, "{}: {:?}", kind.as_str(), rep);
                write_dataset_csv(&st.output(&features_path(*kind))?, &rows)?;
            }
            write_text(&st.output("features/report.txt")?, &text)?;
            st.commit()?;
        }
        Command::Train {
            run,
            approach,
            symbols,
            set,
        } => {
            let ctx = Ctx::new(&run.run, config)?;
            let symbols: BTreeSet<String> = symbols.into_iter().collect();
            let set = set.unwrap_or_else(|| {
                if symbols.is_empty() {
                    "all".into()
                } else {
                    symbols.iter().cloned().collect::<Vec<_>>().join("+")
                }
            });
            let rows = filter_symbols(read_dataset_csv(&ctx.dir.path(&features_path(SplitKind::Train)))?, &symbols);
            let fit_rows = match ctx.cfg.calibration {
                CalibrationMode::Holdout => holdout_tail(&rows, ctx.cfg.train.holdout_fraction).0,
                CalibrationMode::TestSplits => rows,
            };
            let model = train_approach(&fit_rows, approach, &ctx.cfg.train.gbt)?;
            let mut st = ctx.dir.stage(ctx.record("train", vec![approach.as_str().into(), set.clone()]));
            model.save(&st.output(&model_path(&set, &format!("{}.json", approach.as_str())))?)?;
            let sym_path = st.output(&model_path(&set, &format!("{}.symbols.json", approach.as_str())))?;
            write_text(&sym_path, &serde_json::to_string(&symbols)?)?;
            st.commit()?;
        }
        Command::CalibrateEnsemble { run, set, mode } => {
            let ctx = Ctx::new(&run.run, config)?;
            let mode = mode.unwrap_or(ctx.cfg.calibration);
            let symbols = load_set_symbols(&ctx, &set)?;
            let mut models = load_models(&ctx, &set, ModelKind::E).or_else(|_| -> Result<ModelSet> {
                let mut m = load_models(&ctx, &set, ModelKind::Hh)?;
                m.ds = load_models(&ctx, &set, ModelKind::Ds)?.ds;
                Ok(m)
            })?;
            models.ensemble = None;
            let train = filter_symbols(read_dataset_csv(&ctx.dir.path(&features_path(SplitKind::Train)))?, &symbols);
            let (fit_rows, sample) = match mode {
                CalibrationMode::Holdout => holdout_tail(&train, ctx.cfg.train.holdout_fraction),
                CalibrationMode::TestSplits => {
                    let mut s = read_dataset_csv(&ctx.dir.path(&features_path(SplitKind::Typical)))?;
                    s.extend(read_dataset_csv(&ctx.dir.path(&features_path(SplitKind::Atypical)))?);
                    (train, filter_symbols(s, &symbols))
                }
            };
            if sample.is_empty() {
                return Err(Error::Empty("calibration sample"));
            }
            let sigma0 = sigma0_of_training_set(&fit_rows.iter().map(|r| r.hist_vol).collect::<Vec<_>>())?;
            let (params, grid) = calibrate_ensemble(&models, sigma0, &sample, &ctx.cfg.train.grid, &ctx.cfg.eval)?;
            log::info!(
                "set {set}: lambda1={} lambda2={} sigma0={} rmse={}",
                params.lambda1,
                params.lambda2,
                params.sigma0,
                grid.rmse_min
            );
            let mut st = ctx.dir.stage(ctx.record("calibrate-ensemble", vec![set.clone()]));
            params.save(&st.output(&model_path(&set, "ensemble.toml"))?)?;
            grid.write_csv(&st.output(&model_path(&set, "ensemble_grid.csv"))?)?;
            st.commit()?;
        }
        Command::Evaluate {
            run,
            split,
            model,
            set,
            symbols,
        } => {
            let ctx = Ctx::new(&run.run, config)?;
            if split == SplitKind::Train {
                return Err(Error::Config("evaluate takes --split typical or atypical".into()));
            }
            let symbols: BTreeSet<String> = symbols.into_iter().collect();
            let rows = filter_symbols(read_dataset_csv(&ctx.dir.path(&features_path(split)))?, &symbols);
            let set = if model == ModelKind::Bsm { "bsm".to_string() } else { set };
            let models = load_models(&ctx, &set, model)?;
            let id = format!("{set}/{}", model.as_str());
            let rep = evaluate_model(model, &id, split.as_str(), &rows, &models, &ctx.cfg.eval)?;
            log::info!("{id} on {}: rmse={} n={}", split.as_str(), rep.rmse, rep.n);
            let stem = format!("reports/{set}/{}_{}", model.as_str(), split.as_str());
            let mut st = ctx.dir.stage(ctx.record("evaluate", vec![id.clone(), split.as_str().into()]));
            rep.save_json(&st.output(&format!("{stem}.json"))?)?;
            rep.write_histogram_csv(&st.output(&format!("{stem}_histogram.csv"))?)?;
            st.commit()?;
        }
        Command::Synth { run, experiment } => {
            let ctx = Ctx::new(&run.run, config)?;
            let sc = &ctx.cfg.synth;
            let mut sets = Vec::new();
            for (i, ts) in sc.training_sets.iter().enumerate() {
                let rows = pooled_rows(&sc.scenario, &ts.sigmas, (i as u64) * 1000, &ctx.cfg.featurize)?;
                log::info!("training set {}: {} rows", ts.name, rows.len());
                sets.push(fit_training_set(&ts.name, &rows, &ctx.cfg.train, &ctx.cfg.eval)?);
            }
            let mut st = ctx.dir.stage(ctx.record("synth", vec![experiment.to_string()]));
            let stem = format!("synth/experiment{experiment}");
            if experiment == 1 {
                let curves = run_experiment_1(&sets, &sc.sigma_grid, &sc.scenario, &ctx.cfg.featurize, &ctx.cfg.eval)?;
                write_curves_csv(&st.output(&format!("{stem}_curves.csv"))?, &curves)?;
            } else {
                let (curves, positions) =
                    run_experiment_2(&sets, &sc.sigma_grid, &sc.scenario, &ctx.cfg.featurize, &ctx.cfg.eval)?;
                write_curves_csv(&st.output(&format!("{stem}_curves.csv"))?, &curves)?;
                write_positions_csv(&st.output(&format!("{stem}_positions.csv"))?, &positions)?;
                for s in &sets {
                    s.grid.write_csv(&st.output(&format!("{stem}_grid_{}.csv", s.name))?)?;
                }
            }
            st.commit()?;
        }
        Command::ApproxError {
            run,
            t,
            p,
            sigma_min,
            sigma_max,
            step,
            r,
        } => {
            let ctx = Ctx::new(&run.run, config)?;
            let cfg = ErrorStudyConfig {
                sigma_min,
                sigma_max,
                step,
                ttm: t,
                moneyness: p,
                rate: r,
            };
            let grid = approx_error_study(&cfg)?;
            let mut st = ctx.dir.stage(ctx.record("approx-error", vec![format!("{cfg:?}")]));
            grid.write_matrix_csv(&st.output("approx_error/matrix.csv")?)?;
            grid.write_scatter_csv(&st.output("approx_error/scatter.csv")?)?;
            let mut summary = Vec::new();
            grid.write_summary(&mut summary).map_err(|e| Error::io(Path::new("summary"), e))?;
            write_text(&st.output("approx_error/summary.txt")?, &String::from_utf8_lossy(&summary))?;
            st.commit()?;
        }
        Command::Report { run } => {
            let ctx = Ctx::new(&run.run, config)?;
            report(&ctx)?;
        }
    }
    Ok(())
}

fn collect_reports(dir: &Path, out: &mut Vec<EvalReport>) -> Result<()> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(());
    };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_reports(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "json") {
            out.push(EvalReport::load_json(&p)?);
        }
    }
    Ok(())
}

/// Centered returns of every distinct (symbol, date) window.
fn window_returns(rows: &[FeaturizedRow]) -> Vec<f64> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in rows {
        if seen.insert((r.symbol.clone(), r.date)) {
            out.extend_from_slice(r.order_stats());
        }
    }
    out
}

fn report(ctx: &Ctx) -> Result<()> {
    let mut reports = Vec::new();
    collect_reports(&ctx.dir.path("reports"), &mut reports)?;
    let mut st = ctx.dir.stage(ctx.record("report", vec![]));

    let table_path = st.output("report/rmse_table.csv")?;
    let mut w = csv::Writer::from_path(&table_path)?;
    w.write_record(["model_id", "split", "rmse", "n", "excluded"])?;
    for r in &reports {
        w.write_record([
            r.model_id.clone(),
            r.split.clone(),
            r.rmse.to_string(),
            r.n.to_string(),
            r.excluded.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&table_path, e))?;

    let mut diagnostic = String::new();
    for split in [SplitKind::Typical, SplitKind::Atypical] {
        let mut group: Vec<EvalReport> = reports.iter().filter(|r| r.split == split.as_str()).cloned().collect();
        if group.is_empty() {
            continue;
        }
        pool_histograms(&mut group);
        let p = st.output(&format!("report/histograms_{}.csv", split.as_str()))?;
        let mut w = csv::Writer::from_path(&p)?;
        let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
        header.extend(group.iter().map(|r| r.model_id.clone()));
        w.write_record(&header)?;
        let edges = &group[0].histogram.edges;
        for k in 0..group[0].histogram.counts.len() {
            let mut rec = vec![edges[k].to_string(), edges[k + 1].to_string()];
            rec.extend(group.iter().map(|r| r.histogram.counts[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;

        if let Some(bsm) = group.iter().find(|r| r.model_id.ends_with("/bsm")) {
            for r in group.iter().filter(|r| !r.model_id.ends_with("/bsm")) {
                let verdict = if r.rmse < bsm.rmse { "beats" } else { "does not beat" };
                let _ = writeln!(
                    diagnostic,
                    "{}: {} ({:.6}) {} bsm ({:.6})",
                    split.as_str(),
                    r.model_id,
                    r.rmse,
                    verdict,
                    bsm.rmse
                );
            }
        }
    }

    let train_path = ctx.dir.path(&features_path(SplitKind::Train));
    if train_path.exists() {
        let train_ret = window_returns(&read_dataset_csv(&train_path)?);
        for split in [SplitKind::Typical, SplitKind::Atypical] {
            let p = ctx.dir.path(&features_path(split));
            if !p.exists() {
                continue;
            }
            let test_ret = window_returns(&read_dataset_csv(&p)?);
            if train_ret.is_empty() || test_ret.is_empty() {
                continue;
            }
            let qq = qq_export(&train_ret, &test_ret)?;
            write_qq_csv(&st.output(&format!("report/qq_train_vs_{}.csv", split.as_str()))?, &qq)?;
            let tail = |q: &[crate::evaluation::QqPoint], pct: u32| {
                q.iter().find(|x| x.percentile == pct).map(|x| (x.quantile_a, x.quantile_b))
            };
            if let (Some((a1, b1)), Some((a99, b99))) = (tail(&qq, 1), tail(&qq, 99)) {
                let _ = writeln!(
                    diagnostic,
                    "returns train vs {}: 1st pct {a1:.6} vs {b1:.6}, 99th pct {a99:.6} vs {b99:.6}, spread ratio {:.3}",
                    split.as_str(),
                    (b99 - b1) / (a99 - a1)
                );
            }
        }
    }
    write_text(&st.output("report/diagnostic.txt")?, &diagnostic)?;
    st.commit()?;
    Ok(())
}
