//! Command-line front end: `simulate`, `couple`, `wasserstein`, `experiment`
//! and `selftest`.
//!
//! Exit codes: 0 success, 1 failed assertion or runtime error, 2 usage or
//! configuration error, 3 violated hypothesis.

mod flowcfg;
mod selftest;

pub use flowcfg::FlowConfig;
pub use selftest::{run_selftest, SelfTestCheck};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::coupling::{build_coupling, CouplingError};
use crate::flows::{FlowError, FlowKind, FlowPath, Recording};
use crate::montecarlo::report::SCHEMA_VERSION;
use crate::montecarlo::{run_experiment, summarize, ExperimentConfig, ExperimentError, ExperimentId};
use crate::transport::{uniform_transport, w1_cost_matrix, w1_real, DiscreteMeasure, MeasureEnsemble, Provenance, TransportError};

#[derive(Debug, Parser)]
#[command(name = "harris-lab", version, about = "Harris flows, Arratia flow and the epsilon-gluing coupling")]
pub struct Cli {
    /// Worker threads for replica loops (0 = all available cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Progress messages on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one n-point motion and write its path.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Flow config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Write every grid time instead of the final slice.
        #[arg(long)]
        full_path: bool,
    },
    /// Build the epsilon-gluing coupling of a simulated or given path.
    Couple {
        #[command(flatten)]
        common: CommonArgs,
        /// Flow config file (JSON); defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Full path CSV as written by `simulate --full-path`.
        #[arg(long)]
        path: Option<PathBuf>,
        /// Also write the per-stage endpoints and discrepancies.
        #[arg(long)]
        debug: bool,
    },
    /// Exact W1 between two measures, or empirical W1 between two ensembles.
    Wasserstein {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON measure `{"atoms": [..], "weights": [..]}` or array of them.
        a: PathBuf,
        b: PathBuf,
        /// Also write the inner cost matrix for ensembles.
        #[arg(long)]
        debug: bool,
    },
    /// Run a named experiment and write its reports.
    Experiment {
        #[command(flatten)]
        common: CommonArgs,
        /// One of lemma1, theorem2, lemma3, theorem3-bridge, theorem1-chain, wald-hitting.
        id: String,
        /// Experiment config file (JSON); defaults are used when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the brute-force oracle checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Config override `key=value` (dotted keys for nested fields); wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Hypothesis(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Hypothesis(m) => write!(f, "hypothesis violated: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e.exit_code() {
            2 => CliError::Usage(e.to_string()),
            3 => CliError::Hypothesis(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        ExperimentError::from(e).into()
    }
}

impl From<CouplingError> for CliError {
    fn from(e: CouplingError) -> Self {
        ExperimentError::from(e).into()
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout and stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    let verbose = cli.verbose;
    match &cli.command {
        Command::Simulate { common, config, full_path } => simulate(common, config, *full_path, verbose),
        Command::Couple { common, config, path, debug } => couple(common, config.as_deref(), path.as_deref(), *debug, verbose),
        Command::Wasserstein { common, a, b, debug } => wasserstein(common, a, b, *debug),
        Command::Experiment { common, id, config } => experiment(common, id, config.as_deref(), verbose),
        Command::Selftest => {
            let checks = run_selftest();
            for c in &checks {
                println!("selftest {}: {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
            }
            Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
        }
    }
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not valid JSON: {e}", path.display())))
}

fn out_dir(common: &CommonArgs, default: &str) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(default));
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn pretty<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

#[derive(Serialize)]
struct PathMetadata<'a> {
    schema_version: u32,
    config_hash: String,
    master_seed: u64,
    seed: u64,
    flow: FlowKind,
    n_particles: usize,
    dt: f64,
    steps: usize,
    horizon: f64,
    rows: usize,
    config: &'a FlowConfig,
}

fn simulate(common: &CommonArgs, config: &Path, full_path: bool, verbose: u8) -> Result<i32, CliError> {
    let file = read_json(config)?;
    let cfg = FlowConfig::resolve(Some(&file), &common.overrides)?;
    let recording = if full_path { Recording::Full } else { Recording::Endpoints };
    let path = cfg.simulate(recording)?;
    let dir = out_dir(common, "simulate")?;
    if verbose > 0 {
        eprintln!("simulated {} particles over {} steps", path.n_particles(), path.steps());
    }

    let mut csv = Vec::new();
    if full_path {
        path.write_csv(&mut csv)?;
    } else {
        path.write_final_csv(&mut csv)?;
    }
    write_file(&dir.join("path.csv"), csv)?;
    let meta = PathMetadata {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        master_seed: cfg.master_seed,
        seed: path.seed(),
        flow: path.kind(),
        n_particles: path.n_particles(),
        dt: path.dt(),
        steps: path.steps(),
        horizon: path.dt() * path.steps() as f64,
        rows: if full_path { path.n_rows() } else { 1 },
        config: &cfg,
    };
    write_file(&dir.join("path.json"), pretty(&meta))?;
    Ok(0)
}

#[derive(Serialize)]
struct CouplingOutput {
    schema_version: u32,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    summary: crate::coupling::CouplingSummary,
}

fn couple(common: &CommonArgs, config: Option<&Path>, path_file: Option<&Path>, debug: bool, verbose: u8) -> Result<i32, CliError> {
    let file = config.map(read_json).transpose()?;
    let cfg = FlowConfig::resolve(file.as_ref(), &common.overrides)?;
    let path: FlowPath<f64> = match path_file {
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            FlowPath::read_csv(f, cfg.flow, cfg.path_seed())?
        }
        None => cfg.simulate(Recording::Full)?,
    };
    let weights = cfg.coupling_weights(path.n_particles())?;
    let trace = build_coupling(path, cfg.epsilon)?;
    let summary = trace.summary(&weights)?;
    if verbose > 0 {
        eprintln!("coupling has {} stages", trace.n_stages());
    }
    let dir = out_dir(common, "couple")?;
    let out = CouplingOutput { schema_version: SCHEMA_VERSION, config_hash: cfg.hash(), seed: trace.base_path().seed(), summary };
    write_file(&dir.join("coupling.json"), pretty(&out))?;
    if debug {
        let mut w = csv::Writer::from_writer(Vec::new());
        let n = trace.n_particles();
        let mut header = vec!["stage".to_string()];
        header.extend((0..n).map(|k| format!("end{k}")));
        header.extend((0..n).map(|k| format!("sup_diff{k}")));
        w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
        let last = trace.base_path().n_rows() - 1;
        for s in 1..=trace.n_stages() {
            let mut rec = vec![s.to_string()];
            rec.extend(trace.stage_row(s, last).iter().map(|x| x.to_string()));
            match trace.stage_sup_discrepancy().get(s - 1) {
                Some(d) if s < trace.n_stages() => rec.extend(d.iter().map(|x| x.to_string())),
                _ => rec.extend(std::iter::repeat_n(String::new(), n)),
            }
            w.write_record(&rec).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&dir.join("stages.csv"), bytes)?;
    }
    Ok(0)
}

enum MeasureInput {
    Single(DiscreteMeasure<f64>),
    Ensemble(Vec<DiscreteMeasure<f64>>),
}

fn read_measures(path: &Path) -> Result<MeasureInput, CliError> {
    let value = read_json(path)?;
    let bad = |e: serde_json::Error| CliError::Usage(format!("{}: {e}", path.display()));
    if value.is_array() {
        Ok(MeasureInput::Ensemble(serde_json::from_value(value).map_err(bad)?))
    } else {
        Ok(MeasureInput::Single(serde_json::from_value(value).map_err(bad)?))
    }
}

#[derive(Serialize)]
struct WassersteinOutput {
    schema_version: u32,
    kind: &'static str,
    w1: f64,
}

fn wasserstein(common: &CommonArgs, a: &Path, b: &Path, debug: bool) -> Result<i32, CliError> {
    if !common.overrides.is_empty() {
        return Err(CliError::Usage("wasserstein takes no config overrides".into()));
    }
    let (out, matrix) = match (read_measures(a)?, read_measures(b)?) {
        (MeasureInput::Single(x), MeasureInput::Single(y)) => {
            (WassersteinOutput { schema_version: SCHEMA_VERSION, kind: "measure", w1: w1_real(&x, &y) }, None)
        }
        (MeasureInput::Ensemble(x), MeasureInput::Ensemble(y)) => {
            let x = MeasureEnsemble::new(x, Provenance::Identity)?;
            let y = MeasureEnsemble::new(y, Provenance::Identity)?;
            let cost = w1_cost_matrix(&x, &y);
            let w1 = uniform_transport(&cost, x.len(), y.len()).map_err(TransportError::from)?;
            let out = WassersteinOutput { schema_version: SCHEMA_VERSION, kind: "ensemble", w1 };
            (out, Some((cost, y.len())))
        }
        _ => return Err(CliError::Usage("both inputs must be single measures or both arrays of measures".into())),
    };
    let json = pretty(&out);
    print!("{json}");
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        write_file(&dir.join("wasserstein.json"), &json)?;
        if let (true, Some((cost, cols))) = (debug, matrix) {
            let text: String = cost
                .chunks(cols)
                .map(|r| r.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",") + "\n")
                .collect();
            write_file(&dir.join("cost_matrix.csv"), text)?;
        }
    }
    Ok(0)
}

fn experiment(common: &CommonArgs, id: &str, config: Option<&Path>, verbose: u8) -> Result<i32, CliError> {
    let exp = ExperimentId::parse(id).ok_or_else(|| {
        let ids: Vec<&str> = ExperimentId::ALL.iter().map(|e| e.as_str()).collect();
        CliError::Usage(format!("unknown experiment {id:?}; valid: {}", ids.join(", ")))
    })?;
    let file = config.map(read_json).transpose()?;
    let cfg = ExperimentConfig::resolve(exp, file.as_ref(), &common.overrides)?;
    if verbose > 0 {
        eprintln!("running {} (config {})", exp.as_str(), cfg.hash());
    }
    let report = run_experiment(&cfg)?;
    let dir = out_dir(common, exp.as_str())?;
    write_file(&dir.join("report.json"), report.to_json())?;
    let csv = report.csv_string();
    write_file(&dir.join("report.csv"), &csv)?;
    write_file(&dir.join("summary.csv"), summarize(&report.fits).to_csv())?;
    print!("{csv}");
    for note in &report.notes {
        eprintln!("note: {note}");
    }
    Ok(if report.passed() { 0 } else { 1 })
}
