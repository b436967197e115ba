//! The `scmtagg` command-line front end: CSV ingestion, JSON
//! configuration with flag overrides, and the `fit`, `frontier`,
//! `simulate`, and `placebo` subcommands.
//!
//! Input CSV is long-format with header
//! `unit,period,subperiod,outcome,treated`; periods and subperiods are
//! positive integers and `treated` is `0` or `1`. All outputs are
//! deterministic functions of the input file, the configuration, and
//! the seed.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 solver
//! non-convergence, 4 I/O error.

mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    default_nu_grid, fit, frontier, impute, placebo_in_space, EstimatorError, FitResult,
};
use crate::factor::FactorModelSpec;
use crate::mc::{monte_carlo, McError, McOptions, McReport};
use crate::objective::{ObjectiveError, ObjectiveSpec};
use crate::panel::{validate_panel, PanelData, PanelError, RawObservation};
use crate::solver::{FeasibleSet, SolveOptions, SolverError};

pub use svg::frontier_svg;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("solver did not converge (gap above tolerance after max iterations)")]
    NotConverged,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Estimator(EstimatorError),
    #[error(transparent)]
    Simulation(#[from] McError),
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Panel(p) => CliError::Panel(p),
            EstimatorError::Objective(o) => CliError::Objective(o),
            EstimatorError::Solver(s) => CliError::Solver(s),
            other => CliError::Estimator(other),
        }
    }
}

impl CliError {
    /// 2 input/validation, 3 solver non-convergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged => 3,
            CliError::Io { .. } => 4,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "scmtagg",
    about = "Synthetic control with temporal aggregation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit donor weights and write fit.json and effects.csv.
    Fit(CommonArgs),
    /// Sweep the imbalance frontier; write frontier.csv and frontier.svg.
    Frontier(CommonArgs),
    /// Run a factor-model Monte Carlo; write mc_report.json.
    Simulate(CommonArgs),
    /// Refit each donor as pseudo-treated; write placebo.csv.
    Placebo(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Fit(a) | Command::Frontier(a) | Command::Simulate(a) | Command::Placebo(a) => {
                a
            }
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Long-format panel CSV (unit,period,subperiod,outcome,treated).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of pre-treatment periods.
    #[arg(long)]
    pub t0: Option<usize>,
    /// L1 budget C of the weight polytope (C = 1 is the simplex).
    #[arg(long = "c-bound")]
    pub c_bound: Option<f64>,
    /// Weight on the aggregated objective; implies the combined
    /// objective. nu = 0 and nu = 1 reduce to the pure objectives.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Objective kind: disaggregated, aggregated, or combined.
    #[arg(long)]
    pub objective: Option<String>,
    /// Master seed for simulation commands.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON configuration file contents. Every field is optional; command
/// line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub t0: Option<usize>,
    pub treated_unit: Option<String>,
    pub c_bound: Option<f64>,
    pub objective: Option<String>,
    pub nu: Option<f64>,
    pub nu_grid: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Subset of output kinds to write: "json", "csv", "svg".
    pub formats: Option<Vec<String>>,
    pub simulation: Option<SimulationConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub replications: usize,
    #[serde(default)]
    pub delta: Option<f64>,
    pub estimators: Vec<EstimatorChoice>,
    pub panel: FactorModelSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorChoice {
    pub kind: String,
    #[serde(default)]
    pub nu: Option<f64>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub t0: Option<usize>,
    pub treated_unit: Option<String>,
    pub c_bound: f64,
    pub objective: ObjectiveSpec,
    pub nu_grid: Vec<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub formats: Option<Vec<String>>,
    pub simulation: Option<SimulationConfig>,
}

impl RunConfig {
    /// Merges defaults, the optional config file, and flag overrides.
    pub fn resolve(args: &CommonArgs) -> Result<RunConfig, CliError> {
        let file = match &args.config {
            Some(path) => {
                let text = read_file(path)?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let objective = resolve_objective(
            args.objective.as_deref().or(file.objective.as_deref()),
            args.nu.or(file.nu),
            args.nu.is_some(),
        )?;
        let c_bound = args.c_bound.or(file.c_bound).unwrap_or(1.0);
        if c_bound < 1.0 || c_bound.is_nan() {
            return Err(CliError::Solver(SolverError::CBoundTooSmall(c_bound)));
        }
        Ok(RunConfig {
            input: args.input.clone().or(file.input),
            t0: args.t0.or(file.t0),
            treated_unit: file.treated_unit,
            c_bound,
            objective,
            nu_grid: file.nu_grid.unwrap_or_else(default_nu_grid),
            tol: file.tol,
            max_iter: file.max_iter,
            seed: args.seed.or(file.seed).unwrap_or(0),
            out_dir: args
                .out
                .clone()
                .or(file.out_dir)
                .unwrap_or_else(|| PathBuf::from(".")),
            formats: file.formats,
            simulation: file.simulation,
        })
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolveOptions::default()
        }
    }

    fn wants(&self, kind: &str) -> bool {
        self.formats
            .as_ref()
            .is_none_or(|list| list.iter().any(|f| f == kind))
    }
}

/// Normalizes the objective choice: a combined objective at nu = 0 or
/// nu = 1 is reported as the equivalent pure objective, so runs
/// specified either way produce identical outputs.
fn resolve_objective(
    kind: Option<&str>,
    nu: Option<f64>,
    nu_from_flag: bool,
) -> Result<ObjectiveSpec, CliError> {
    let kind = match kind {
        Some(k) if nu_from_flag && k != "combined" => {
            return Err(CliError::Config(format!(
                "--nu only applies to the combined objective, not '{k}'"
            )))
        }
        Some(k) => k,
        None => "combined",
    };
    let spec = match kind {
        "disaggregated" => {
            if nu.is_some() && nu != Some(0.0) {
                return Err(CliError::Config(
                    "nu conflicts with objective 'disaggregated'".into(),
                ));
            }
            ObjectiveSpec::Disaggregated
        }
        "aggregated" => {
            if nu.is_some() && nu != Some(1.0) {
                return Err(CliError::Config(
                    "nu conflicts with objective 'aggregated'".into(),
                ));
            }
            ObjectiveSpec::Aggregated
        }
        "combined" => {
            let v = nu.unwrap_or(0.5);
            if v == 0.0 {
                ObjectiveSpec::Disaggregated
            } else if v == 1.0 {
                ObjectiveSpec::Aggregated
            } else {
                ObjectiveSpec::combined(v)?
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown objective '{other}' (expected disaggregated, aggregated, or combined)"
            )))
        }
    };
    Ok(spec)
}

fn estimator_from_choice(choice: &EstimatorChoice) -> Result<ObjectiveSpec, CliError> {
    match choice.kind.as_str() {
        "disaggregated" => Ok(ObjectiveSpec::Disaggregated),
        "aggregated" => Ok(ObjectiveSpec::Aggregated),
        "combined" => Ok(ObjectiveSpec::combined(choice.nu.unwrap_or(0.5))?),
        other => Err(CliError::Config(format!(
            "unknown estimator kind '{other}'"
        ))),
    }
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let config = match RunConfig::resolve(cli.command.args()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Fit(_) => cmd_fit(&config),
        Command::Frontier(_) => cmd_frontier(&config),
        Command::Simulate(_) => cmd_simulate(&config),
        Command::Placebo(_) => cmd_placebo(&config),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses a long-format panel CSV into raw observations.
///
/// Errors carry the 1-based line number of the offending row.
pub fn ingest_csv(path: &Path) -> Result<Vec<RawObservation>, CliError> {
    let text = read_file(path)?;
    let parse_err = |line: usize, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    if header.trim_end_matches('\r') != "unit,period,subperiod,outcome,treated" {
        return Err(parse_err(
            1,
            format!("expected header 'unit,period,subperiod,outcome,treated', got '{header}'"),
        ));
    }
    let mut records = Vec::new();
    for (idx, raw_line) in lines {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                line_no,
                format!("expected 5 comma-separated fields, got {}", fields.len()),
            ));
        }
        let unit = fields[0].trim().to_string();
        if unit.is_empty() {
            return Err(parse_err(line_no, "empty unit label".into()));
        }
        let period: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid period '{}'", fields[1])))?;
        let subperiod: u32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid subperiod '{}'", fields[2])))?;
        if period == 0 || subperiod == 0 {
            return Err(parse_err(
                line_no,
                "period and subperiod must be positive".into(),
            ));
        }
        let outcome: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid outcome '{}'", fields[3])))?;
        let treated = match fields[4].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    line_no,
                    format!("treated flag must be 0 or 1, got '{other}'"),
                ))
            }
        };
        records.push(RawObservation {
            unit,
            period,
            subperiod,
            outcome,
            treated,
        });
    }
    Ok(records)
}

fn load_panel(config: &RunConfig) -> Result<PanelData, CliError> {
    let input = config.input.as_ref().ok_or_else(|| {
        CliError::Config("no input CSV given (use --input or the config file)".into())
    })?;
    let t0 = config
        .t0
        .ok_or_else(|| CliError::Config("t0 is required (use --t0 or the config file)".into()))?;
    let mut records = ingest_csv(input)?;
    if let Some(label) = &config.treated_unit {
        if !records.iter().any(|r| &r.unit == label) {
            return Err(CliError::Config(format!(
                "treated unit '{label}' does not appear in {}",
                input.display()
            )));
        }
        for r in records.iter_mut() {
            r.treated = &r.unit == label;
        }
    }
    Ok(validate_panel(&records, t0)?)
}

fn feasible_set(config: &RunConfig, n_donors: usize) -> Result<FeasibleSet, CliError> {
    Ok(FeasibleSet::new(n_donors, config.c_bound)?)
}

#[derive(Serialize)]
struct FitJson<'a> {
    schema_version: u32,
    objective: &'a str,
    nu: f64,
    c_bound: f64,
    t0: usize,
    treated_unit: &'a str,
    donors: &'a [String],
    weights: &'a [f64],
    rmse_dis: f64,
    rmse_agg: f64,
    objective_value: f64,
    fw_gap: f64,
    iterations: usize,
    converged: bool,
}

fn fit_to_json(config: &RunConfig, panel: &PanelData, result: &FitResult) -> String {
    let record = FitJson {
        schema_version: 1,
        objective: result.spec.label(),
        nu: result.nu(),
        c_bound: config.c_bound,
        t0: panel.t0(),
        treated_unit: panel.treated_label(),
        donors: panel.donor_labels(),
        weights: result.weights().gamma(),
        rmse_dis: result.rmse_dis,
        rmse_agg: result.rmse_agg,
        objective_value: result.solve.objective_value,
        fw_gap: result.solve.fw_gap,
        iterations: result.solve.iterations,
        converged: result.solve.converged,
    };
    let mut text = serde_json::to_string_pretty(&record).expect("fit report serializes");
    text.push('\n');
    text
}

/// Fits the configured objective, then writes `fit.json` and
/// `effects.csv` (one row per post-treatment cell).
pub fn cmd_fit(config: &RunConfig) -> Result<(), CliError> {
    let panel = load_panel(config)?;
    let set = feasible_set(config, panel.n_donors())?;
    let result = fit(&panel, &config.objective, &set, &config.solve_options())?;
    if !result.solve.converged {
        return Err(CliError::NotConverged);
    }
    let effects = impute(&result, &panel)?;

    if config.wants("json") {
        write_output(config, "fit.json", &fit_to_json(config, &panel, &result))?;
    }
    if config.wants("csv") {
        let mut csv = String::from("t,k,observed,imputed,effect\n");
        for e in &effects {
            writeln!(
                csv,
                "{},{},{},{},{}",
                e.period, e.subperiod, e.observed, e.imputed, e.effect
            )
            .expect("string write");
        }
        write_output(config, "effects.csv", &csv)?;
    }
    Ok(())
}

/// Sweeps the `nu` grid and writes `frontier.csv` plus a static SVG of
/// the disaggregated-versus-aggregated RMSE curve.
pub fn cmd_frontier(config: &RunConfig) -> Result<(), CliError> {
    let panel = load_panel(config)?;
    let set = feasible_set(config, panel.n_donors())?;
    let points = frontier(&panel, &config.nu_grid, &set, &config.solve_options())?;
    if points.iter().any(|p| !p.converged) {
        return Err(CliError::NotConverged);
    }
    if config.wants("csv") {
        let mut csv = String::from("nu,rmse_dis,rmse_agg\n");
        for p in &points {
            writeln!(csv, "{},{},{}", p.nu, p.rmse_dis, p.rmse_agg).expect("string write");
        }
        write_output(config, "frontier.csv", &csv)?;
    }
    if config.wants("svg") {
        write_output(config, "frontier.svg", &frontier_svg(&points))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct McReportFile<'a> {
    schema_version: u32,
    #[serde(flatten)]
    report: &'a McReport,
}

/// Runs the configured Monte Carlo experiment and writes
/// `mc_report.json`. Byte-identical across runs for a fixed seed.
pub fn cmd_simulate(config: &RunConfig) -> Result<(), CliError> {
    let sim = config.simulation.as_ref().ok_or_else(|| {
        CliError::Config("simulate needs a 'simulation' block in the config file".into())
    })?;
    let estimators: Vec<ObjectiveSpec> = sim
        .estimators
        .iter()
        .map(estimator_from_choice)
        .collect::<Result<_, _>>()?;
    let set = feasible_set(config, sim.panel.n_donors())?;
    let report = monte_carlo(
        &sim.panel,
        &estimators,
        &set,
        &McOptions {
            replications: sim.replications,
            seed: config.seed,
            delta: sim.delta,
            solve: config.solve_options(),
            record_replicates: false,
        },
    )?;
    if config.wants("json") {
        let mut text = serde_json::to_string_pretty(&McReportFile {
            schema_version: 1,
            report: &report,
        })
        .expect("mc report serializes");
        text.push('\n');
        write_output(config, "mc_report.json", &text)?;
    }
    Ok(())
}

/// Refits every donor as pseudo-treated and writes `placebo.csv`
/// (unit,t,k,effect), ordered by donor then period.
pub fn cmd_placebo(config: &RunConfig) -> Result<(), CliError> {
    let panel = load_panel(config)?;
    let set = feasible_set(config, panel.n_donors())?;
    let series = placebo_in_space(&panel, &config.objective, &set, &config.solve_options())?;
    if config.wants("csv") {
        let mut csv = String::from("unit,t,k,effect\n");
        for s in &series {
            for e in &s.effects {
                writeln!(
                    csv,
                    "{},{},{},{}",
                    s.unit_label, e.period, e.subperiod, e.effect
                )
                .expect("string write");
            }
        }
        write_output(config, "placebo.csv", &csv)?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        context: format!("reading {}", path.display()),
        source,
    })
}

fn write_output(config: &RunConfig, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(&config.out_dir).map_err(|source| CliError::Io {
        context: format!("creating {}", config.out_dir.display()),
        source,
    })?;
    let path = config.out_dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}
