//! Command-line front end.
//!
//! Every command that produces artifacts takes `--out DIR` and writes a
//! `run.json` there with the full argument vector, the resolved settings and
//! SHA-256 hashes of every input file. `hops rerun DIR/run.json` replays it.
//! Failures print `{"error":{"code":…,"message":…}}` on stderr and exit
//! nonzero.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::benchmarks::{fit_linear_rows, LinearModel};
use crate::dim_reduction::{apply_reduction_holdout, LeakagePolicy};
use crate::error::{at_path, HopsError, Result};
use crate::evaluation::{
    fit_hops, grid_search_k, labelled_rows, max_embed_dim, run_experiment, ExperimentProtocol,
    Predictions, PRESETS,
};
use crate::features::{
    build_design_matrix, build_design_matrix_from, FeatureContext, HourlyRecord, VariableSpec,
    NAMED_SPECS,
};
use crate::ingestion::{ingest_csv, sha256_hex, write_canonical_csv, Dataset, IngestConfig};
use crate::poly_model::{read_model, write_model, PolyModel};
use crate::polycg_solver::{AlphaMode, SolverConfig};

#[derive(Debug, Parser, Serialize)]
#[command(name = "hops", version, about = "High-order polynomial load forecasting")]
pub struct Cli {
    /// Worker threads (default: all cores; 1 runs serially).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Treat leakage warnings and failed zones as errors.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Directory that relative `--data`/`--input` paths are resolved
    /// against.
    #[arg(long, global = true, env = "HOPS_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Validate raw CSV files and write one canonical CSV per zone.
    Ingest {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// TOML column map; default is the canonical layout.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the design matrix of one zone.
    Features {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        zone: String,
        #[arg(long, value_parser = parse_spec)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model on the given years.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        zone: String,
        #[arg(long, value_parser = parse_spec)]
        spec: String,
        /// Model family; inferred from the spec name when omitted.
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long, default_value_t = 60)]
        k2: usize,
        #[arg(long, default_value_t = 9)]
        k3: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [2012, 2013, 2014])]
        years: Vec<i32>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fitted model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        zone: String,
        /// Years to predict; all rows when omitted.
        #[arg(long, value_delimiter = ',')]
        years: Vec<i32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAPE, MSE and daily-peak MAPE of a predictions CSV.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embedding-dimension search for one zone and feature set.
    Gridsearch {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        zone: String,
        #[arg(long, value_parser = parse_spec)]
        spec: String,
        /// Defaults to the preset range for the spec's width.
        #[arg(long, value_delimiter = ',')]
        k2: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        k3: Vec<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full protocol over several zones.
    Experiment {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_preset)]
        preset: String,
        /// Comma-separated zone ids; all ingested zones when omitted.
        #[arg(long, value_delimiter = ',')]
        zones: Option<Vec<String>>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write tidy `zone,model,metric,value` rows.
        #[arg(long)]
        plot_data: bool,
    },
    /// Replay the command recorded in a `run.json`.
    Rerun {
        run: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// Canonical (or `--schema`-described) CSV files.
    #[arg(long = "data", required = true, num_args = 1..)]
    pub paths: Vec<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverArgs {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, value_parser = parse_alpha)]
    pub alpha_mode: Option<AlphaMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    Hops,
    Linear,
}

fn parse_spec(s: &str) -> std::result::Result<String, String> {
    VariableSpec::parse(s).map(|_| s.to_string()).map_err(|_| {
        format!(
            "unknown spec '{s}'; valid: {}, recency_h<H>_d<D>, rehops_h<H>_d<D>",
            NAMED_SPECS.join(", ")
        )
    })
}

fn parse_preset(s: &str) -> std::result::Result<String, String> {
    if PRESETS.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("unknown preset '{s}'; valid: {}", PRESETS.join(", ")))
    }
}

fn parse_alpha(s: &str) -> std::result::Result<AlphaMode, String> {
    s.parse().map_err(|e: HopsError| e.to_string())
}

impl SolverArgs {
    fn resolve(&self, mut base: SolverConfig) -> Result<SolverConfig> {
        if let Some(v) = self.max_iter {
            base.max_iter = v;
        }
        if let Some(v) = self.tolerance {
            base.tolerance = v;
        }
        if let Some(v) = self.alpha_mode {
            base.alpha_mode = v;
        }
        base.validate()?;
        Ok(base)
    }
}

fn default_model(spec: &str) -> ModelArg {
    if spec.starts_with("hops") || spec.starts_with("rehops") {
        ModelArg::Hops
    } else {
        ModelArg::Linear
    }
}

struct Context<'a> {
    data_dir: Option<&'a Path>,
    strict: bool,
    inputs: Vec<(String, String)>,
}

impl Context<'_> {
    fn resolve(&self, p: &Path) -> PathBuf {
        match self.data_dir {
            Some(dir) if p.is_relative() && !p.exists() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn hash_input(&mut self, p: &Path) -> Result<()> {
        let bytes = fs::read(p).map_err(at_path(p))?;
        self.inputs.push((p.display().to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    fn load(&mut self, data: &DataArgs) -> Result<Dataset> {
        let config = match &data.schema {
            Some(p) => {
                let p = self.resolve(p);
                self.hash_input(&p)?;
                IngestConfig::from_toml_file(&p)?
            }
            None => IngestConfig::canonical(),
        };
        let paths: Vec<PathBuf> = data.paths.iter().map(|p| self.resolve(p)).collect();
        let parts: Vec<Dataset> = paths
            .par_iter()
            .map(|p| ingest_csv(p, &config))
            .collect::<Result<_>>()?;
        let mut ds = Dataset::default();
        for part in parts {
            ds.merge(part)?;
        }
        self.inputs.extend(ds.provenance.iter().cloned());
        ds.summary.log();
        Ok(ds)
    }
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn write_run_json(out: &Path, argv: &[String], cli: &Cli, inputs: &[(String, String)]) -> Result<()> {
    let inputs: Vec<_> = inputs
        .iter()
        .map(|(path, sha256)| json!({ "path": path, "sha256": sha256 }))
        .collect();
    write_json_file(
        &out.join("run.json"),
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "argv": argv,
            "config": cli,
            "inputs": inputs,
        }),
    )
}

enum Model {
    Poly(PolyModel),
    Linear(LinearModel),
}

fn read_any_model(path: &Path) -> Result<Model> {
    let mut head = [0u8; 8];
    let n = File::open(path).map_err(at_path(path))?.read(&mut head)?;
    let r = BufReader::new(File::open(path).map_err(at_path(path))?);
    if n == 8 && &head == b"HOPSMODL" {
        Ok(Model::Poly(read_model(r)?))
    } else {
        Ok(Model::Linear(LinearModel::read_json(r)?))
    }
}

fn cmd_predict(
    ctx: &Context,
    model_path: &Path,
    records: &[HourlyRecord],
    years: &[i32],
    out: &Path,
) -> Result<Predictions> {
    let (spec, origin, model) = match read_any_model(model_path)? {
        Model::Poly(m) => {
            let fc = FeatureContext::from_json(&m.feature_spec).map_err(|_| {
                HopsError::ModelFormat("model carries no feature context".into())
            })?;
            (VariableSpec::parse(&fc.spec)?, fc.trend_origin, Model::Poly(m))
        }
        Model::Linear(m) => (m.spec.clone(), m.trend_origin, Model::Linear(m)),
    };
    let design = build_design_matrix_from(records, &spec, origin)?;
    let rows: Vec<usize> = if years.is_empty() {
        (0..design.matrix.rows()).collect()
    } else {
        design.rows_in_years(years)
    };
    let x = design.matrix.select_rows(&rows);
    let predicted = match &model {
        Model::Poly(m) => {
            let policy = if ctx.strict { LeakagePolicy::Strict } else { LeakagePolicy::Warn };
            if let Some(norm) = &m.normalizer {
                let xn = norm.apply(&x)?;
                let src = match m.spec.trend_column() {
                    Some(t) => xn.without_column(t),
                    None => xn,
                };
                for map in m.reductions.iter().flatten() {
                    apply_reduction_holdout(&src, map, policy)?;
                }
            }
            m.predict(&x)?
        }
        Model::Linear(m) => m.predict_matrix(&x)?,
    };
    let preds = Predictions {
        timestamps: rows.iter().map(|&i| design.timestamps[i]).collect(),
        actual: rows.iter().map(|&i| design.loads[i]).collect(),
        predicted,
    };
    preds.write_csv(BufWriter::new(File::create(out.join("predictions.csv"))?))?;
    Ok(preds)
}

fn grid_csv(path: &Path, cells: &[crate::evaluation::GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["h", "d", "k2", "k3", "validation_mape", "error"])?;
    let u = |v: Option<usize>| v.map_or_else(String::new, |v| v.to_string());
    for c in cells {
        w.write_record([
            u(c.key.h),
            u(c.key.d),
            c.key.k2.to_string(),
            c.key.k3.to_string(),
            c.validation_mape.map_or_else(String::new, |v| v.to_string()),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn save_poly(out: &Path, model: &PolyModel, trace: &crate::polycg_solver::SolverTrace) -> Result<()> {
    write_model(model, BufWriter::new(File::create(out.join("model.hops"))?))?;
    trace.write_csv(BufWriter::new(File::create(out.join("trace.csv"))?))
}

fn save_linear(out: &Path, model: &LinearModel) -> Result<()> {
    model.write_json(BufWriter::new(File::create(out.join("model.json"))?))?;
    model.write_coefficients_csv(BufWriter::new(File::create(out.join("coefficients.csv"))?))
}

/// Executes a parsed command line. `argv` is recorded in `run.json`.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(HopsError::Config("--threads must be at least 1".into()));
        }
        // A global pool can only be installed once per process; later
        // calls (e.g. from tests) keep the first one.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut ctx = Context {
        data_dir: cli.data_dir.as_deref(),
        strict: cli.strict,
        inputs: Vec::new(),
    };
    let out_dir: Option<&Path> = match &cli.command {
        Command::Ingest { inputs, schema, out } => {
            create_out(out)?;
            let config = match schema {
                Some(p) => {
                    let p = ctx.resolve(p);
                    ctx.hash_input(&p)?;
                    IngestConfig::from_toml_file(&p)?
                }
                None => IngestConfig::canonical(),
            };
            let data = DataArgs {
                paths: inputs.clone(),
                schema: None,
            };
            let paths: Vec<PathBuf> = data.paths.iter().map(|p| ctx.resolve(p)).collect();
            let mut ds = Dataset::default();
            for part in paths
                .par_iter()
                .map(|p| ingest_csv(p, &config))
                .collect::<Result<Vec<_>>>()?
            {
                ds.merge(part)?;
            }
            ctx.inputs.extend(ds.provenance.iter().cloned());
            ds.summary.log();
            for (zone, recs) in &ds.zones {
                write_canonical_csv(recs, BufWriter::new(File::create(out.join(format!("{zone}.csv")))?))?;
            }
            write_json_file(&out.join("summary.json"), &ds.summary)?;
            println!("{}", serde_json::to_string(&ds.summary.rows)?);
            Some(out)
        }
        Command::Features { data, zone, spec, out } => {
            create_out(out)?;
            let ds = ctx.load(data)?;
            let fm = build_design_matrix(ds.zone(zone)?, &VariableSpec::parse(spec)?)?;
            fm.write_csv(BufWriter::new(File::create(out.join("features.csv"))?))?;
            info!("{} rows × {} columns", fm.matrix.rows(), fm.matrix.cols());
            Some(out)
        }
        Command::Fit { data, zone, spec, model, k2, k3, years, solver, out } => {
            create_out(out)?;
            let ds = ctx.load(data)?;
            let records = ds.zone(zone)?;
            let vspec = VariableSpec::parse(spec)?;
            let design = build_design_matrix(records, &vspec)?;
            let rows = labelled_rows(&design, years);
            let fc = FeatureContext {
                spec: vspec.name.clone(),
                trend_origin: records[0].timestamp,
            };
            let summary = match model.unwrap_or_else(|| default_model(spec)) {
                ModelArg::Hops => {
                    let max = max_embed_dim(&design);
                    let cfg = solver.resolve(SolverConfig::default())?;
                    let (m, trace) = fit_hops(&design, &rows, (*k2).min(max), (*k3).min(max), &cfg, &fc)?;
                    save_poly(out, &m, &trace)?;
                    json!({
                        "model": "hops",
                        "embed_dims": m.spec.embed_dims(),
                        "iterations": trace.iterations_run,
                        "stop_reason": trace.stop_reason,
                        "final_loss": trace.final_loss(),
                        "training_rows": rows.len(),
                    })
                }
                ModelArg::Linear => {
                    let m = fit_linear_rows(&design, &rows, &vspec, fc.trend_origin)?;
                    save_linear(out, &m)?;
                    json!({ "model": "linear", "training_rows": rows.len() })
                }
            };
            write_json_file(&out.join("fit.json"), &summary)?;
            println!("{summary}");
            Some(out)
        }
        Command::Predict { model, data, zone, years, out } => {
            create_out(out)?;
            let ds = ctx.load(data)?;
            ctx.hash_input(model)?;
            let preds = cmd_predict(&ctx, model, ds.zone(zone)?, years, out)?;
            if preds.actual.iter().any(Option::is_some) {
                println!("{}", serde_json::to_string(&preds.metrics()?)?);
            }
            Some(out)
        }
        Command::Evaluate { predictions, out } => {
            ctx.hash_input(predictions)?;
            let p = Predictions::read_csv(BufReader::new(File::open(predictions).map_err(at_path(predictions))?))?;
            let m = p.metrics()?;
            println!("{}", serde_json::to_string(&m)?);
            if let Some(out) = out {
                create_out(out)?;
                write_json_file(&out.join("metrics.json"), &m)?;
            }
            out.as_deref()
        }
        Command::Gridsearch { data, zone, spec, k2, k3, solver, out } => {
            create_out(out)?;
            let ds = ctx.load(data)?;
            let vspec = VariableSpec::parse(spec)?;
            let base = ExperimentProtocol::preset(if vspec.column_count() >= 289 { "hops289" } else { "hops47" })?;
            let protocol = ExperimentProtocol {
                solver: solver.resolve(base.solver)?,
                ..base
            };
            let k2s = if k2.is_empty() { protocol.k2_range.clone() } else { k2.clone() };
            let k3s = if k3.is_empty() { protocol.k3_range.clone() } else { k3.clone() };
            let outcome = grid_search_k(ds.zone(zone)?, &vspec, &k2s, &k3s, &protocol)?;
            grid_csv(&out.join("grid.csv"), &outcome.cells)?;
            if let crate::evaluation::FittedModel::Hops { model, trace } = &outcome.model {
                save_poly(out, model, trace)?;
            }
            write_json_file(&out.join("selected.json"), &outcome.selected)?;
            println!("{}", serde_json::to_string(&outcome.selected)?);
            Some(out)
        }
        Command::Experiment { data, preset, zones, solver, out, plot_data } => {
            create_out(out)?;
            let ds = ctx.load(data)?;
            let base = ExperimentProtocol::preset(preset)?;
            let protocol = ExperimentProtocol {
                solver: solver.resolve(base.solver)?,
                ..base
            };
            let zones: Vec<String> = zones.clone().unwrap_or_else(|| ds.zones.keys().cloned().collect());
            let report = run_experiment(&protocol, &ds, &zones)?;
            report.write_csv(BufWriter::new(File::create(out.join("report.csv"))?))?;
            write_json_file(&out.join("report.json"), &report)?;
            for (zone, preds) in &report.predictions {
                preds.write_csv(BufWriter::new(File::create(out.join(format!("predictions_{zone}.csv")))?))?;
            }
            for (zone, cells) in &report.grids {
                if !cells.is_empty() {
                    grid_csv(&out.join(format!("grid_{zone}.csv")), cells)?;
                }
            }
            if *plot_data {
                report.write_plot_data(BufWriter::new(File::create(out.join("plot_data.csv"))?))?;
            }
            let mut stdout = Vec::new();
            report.write_csv(&mut stdout)?;
            print!("{}", String::from_utf8_lossy(&stdout));
            if ctx.strict && report.partial {
                write_run_json(out, argv, cli, &ctx.inputs)?;
                return Err(HopsError::Config("one or more zones failed (--strict)".into()));
            }
            Some(out)
        }
        Command::Rerun { run, out } => {
            let recorded: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(run).map_err(at_path(run))?))?;
            let mut args: Vec<String> = serde_json::from_value(recorded["argv"].clone())
                .map_err(|_| HopsError::Config(format!("{} has no argv", run.display())))?;
            if let Some(out) = out {
                let pos = args.iter().position(|a| a == "--out").ok_or_else(|| {
                    HopsError::Config("recorded command has no --out".into())
                })?;
                args[pos + 1] = out.display().to_string();
            }
            let cli = Cli::try_parse_from(&args).map_err(|e| HopsError::Config(e.to_string()))?;
            return execute(&cli, &args);
        }
    };
    if let Some(out) = out_dir {
        write_run_json(out, argv, cli, &ctx.inputs)?;
    }
    Ok(())
}

/// Error JSON printed on failure.
pub fn error_json(code: &str, message: &str) -> String {
    json!({ "error": { "code": code, "message": message } }).to_string()
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("cli.usage", e.render().to_string().trim()));
            return 2;
        }
    };
    match execute(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(e.code(), &e.to_string()));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_names_rejected_with_valid_list() {
        let e = Cli::try_parse_from(["hops", "experiment", "--data", "x.csv", "--preset", "hops48", "--out", "o"])
            .unwrap_err()
            .to_string();
        assert!(e.contains("hops289") && e.contains("recency"), "{e}");
        let e = Cli::try_parse_from(["hops", "features", "--data", "x", "--zone", "CT", "--spec", "g3", "--out", "o"])
            .unwrap_err()
            .to_string();
        assert!(e.contains("hops47") && e.contains("rehops_h"), "{e}");
    }

    #[test]
    fn solver_overrides() {
        let cli = Cli::try_parse_from([
            "hops", "fit", "--data", "x", "--zone", "CT", "--spec", "hops47", "--max-iter", "3",
            "--alpha-mode", "paper", "--out", "o",
        ])
        .unwrap();
        let Command::Fit { solver, years, .. } = &cli.command else { panic!() };
        let cfg = solver.resolve(SolverConfig::default()).unwrap();
        assert_eq!((cfg.max_iter, cfg.alpha_mode), (3, AlphaMode::Paper));
        assert_eq!(years, &[2012, 2013, 2014]);
        assert!(Cli::try_parse_from(["hops", "fit", "--data", "x", "--zone", "CT", "--spec", "hops47", "--alpha-mode", "fast", "--out", "o"]).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["hops", "bogus"]), 2);
        assert_eq!(run(["hops", "evaluate", "--predictions", "/nonexistent/p.csv"]), 1);
    }

    #[test]
    fn model_family_from_spec() {
        assert_eq!(default_model("hops59"), ModelArg::Hops);
        assert_eq!(default_model("rehops_h3_d2"), ModelArg::Hops);
        assert_eq!(default_model("g1"), ModelArg::Linear);
        assert_eq!(default_model("recency_h1_d1"), ModelArg::Linear);
    }
}
