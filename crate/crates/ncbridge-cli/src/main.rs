//! Command line front end: estimation on CSV data, time-series workups,
//! Monte Carlo studies, summary-data adjustments and the observational
//! equivalence demo.
//!
//! Exit codes: 0 success, 1 usage, 2 statistical or identification failure,
//! 3 input/output failure.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ncbridge::{
    analyze_series, binary_nc_adjust, builtin_bridges, builtin_names, counterexample_check,
    gmm_fit_with, iv_estimate, nc_estimate, nc_tsls, ols_estimate, parameter_names,
    positive_control_adjust, read_columns, read_csv, read_summary, render_adjustment,
    render_counterexample, render_estimates, render_gmm, render_sensitivity, render_series,
    render_simulation, run_study, BridgeError, ColumnMap, DataError, DgpConfig, EstimateReport,
    EstimatorError, EstimatorKind, GmmError, GmmOptions, GmmReport, HacConfig, LaggedOptions,
    MomentConfig, MomentSpec, Scenario, SeriesError, SeriesFrame, SeriesOptions, SimError,
    SummaryError, Transform,
};

const CI_LEVEL: f64 = 0.95;

#[derive(Parser)]
#[command(
    name = "ncbridge",
    version,
    about = "Causal effect estimation with double negative controls"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the exposure effect from a CSV with negative control columns
    Estimate(EstimateArgs),
    /// Analyze a single time series with lagged negative controls
    Timeseries(TimeseriesArgs),
    /// Run a Monte Carlo study of the estimators on a built-in scenario
    Simulate(SimulateArgs),
    /// Adjust published risk differences for unmeasured confounding
    Summary(SummaryArgs),
    /// Show two opposite-effect models sharing one observed covariance
    Counterexample(CounterexampleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Aligned plain-text table
    Table,
    /// JSON that parses back losslessly
    Machine,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write the report to this file instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Scale estimates and intervals by 10^4 in tables (machine output is
    /// never scaled)
    #[arg(long)]
    scale_1e4: bool,
}

impl OutputArgs {
    fn scale(&self) -> f64 {
        if self.scale_1e4 {
            1e4
        } else {
            1.0
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Fit the requested bridge specification by GMM
    Gmm,
    /// Closed-form negative control estimate
    Nc,
    /// Closed-form instrumental variable ratio
    Iv,
    /// Outcome regression on exposure and covariates
    Ols,
    /// Two-stage least squares through the control outcome
    Tsls,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV file with one row per unit
    data: PathBuf,
    /// Exposure column name
    #[arg(long)]
    x: String,
    /// Outcome column name
    #[arg(long)]
    y: String,
    /// Negative control exposure column name
    #[arg(long)]
    z: String,
    /// Negative control outcome column name
    #[arg(long)]
    w: String,
    /// Covariate column name (repeat for several)
    #[arg(long = "v")]
    v: Vec<String>,
    #[arg(long, value_enum, default_value_t = MethodArg::Gmm)]
    method: MethodArg,
    /// Builtin bridge name or path to a JSON bridge file (gmm method)
    #[arg(long, default_value = "structural")]
    bridge: String,
    /// Exposure contrast whose mean difference is estimated (gmm method)
    #[arg(long, num_args = 2, value_names = ["X1", "X0"], allow_negative_numbers = true)]
    contrast: Option<Vec<f64>>,
    /// Newey-West bandwidth for serially correlated rows (gmm method)
    #[arg(long)]
    hac: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct TimeseriesArgs {
    /// CSV file with one row per time step, in time order
    data: PathBuf,
    /// Exposure column name
    #[arg(long)]
    x: String,
    /// Outcome column name
    #[arg(long)]
    y: String,
    /// Covariate column name (repeat for several)
    #[arg(long = "v")]
    v: Vec<String>,
    /// Negative control gap: the outcome lagged k steps becomes the control
    /// outcome and the exposure led k steps the control exposure
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    lag: u64,
    /// How many past exposures enter as controls
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    exposure_lags: u64,
    /// Add polynomial trend and this many seasonal sin/cos pairs as controls
    #[arg(long)]
    trend_harmonics: Option<usize>,
    /// Square-root transform the outcome before analysis
    #[arg(long)]
    sqrt_outcome: bool,
    /// Newey-West bandwidth; default floor(1.3 n^(1/3))
    #[arg(long)]
    hac: Option<usize>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// binary, structural or timeseries
    #[arg(long)]
    scenario: Scenario,
    /// Strength of the confounder's arrow into the exposure
    #[arg(long, allow_negative_numbers = true)]
    eta: f64,
    /// Control outcome loading, or the confounder autocorrelation in the
    /// time-series scenario
    #[arg(long, allow_negative_numbers = true)]
    xi: f64,
    /// Observations per replication
    #[arg(long)]
    n: usize,
    /// Number of replications
    #[arg(long)]
    reps: usize,
    /// Master seed; the same seed reproduces the study byte for byte
    #[arg(long)]
    seed: u64,
    /// Estimators to run, comma separated: nc, ols, ols_lagged, ipw, iv
    #[arg(long, default_value = "nc", value_delimiter = ',')]
    estimators: Vec<EstimatorKind>,
    /// Directory receiving the report, table and replicate files
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SummaryArgs {
    /// `key = value` file of published risk differences
    #[arg(long)]
    summary_file: PathBuf,
    /// Use the bridge with an exposure interaction (needs per-stratum
    /// inputs)
    #[arg(long, conflicts_with = "positive_control")]
    interaction: bool,
    /// Treat the control outcome as a positive control and bound the effect
    /// over an assumed range
    #[arg(long, requires = "ace_xw_range")]
    positive_control: bool,
    /// Lower and upper bound for the exposure's effect on the control
    /// outcome
    #[arg(long, num_args = 2, value_names = ["A", "B"], requires = "positive_control",
          allow_negative_numbers = true)]
    ace_xw_range: Option<Vec<f64>>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct CounterexampleArgs {
    /// Monte Carlo draws for the empirical check
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

enum CliError {
    Usage(String),
    Stat(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Stat(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Stat(m) | CliError::Io(m) => m,
        }
    }
}

fn from_data(e: DataError) -> CliError {
    match e {
        DataError::RankDeficient { .. }
        | DataError::SolveFailed(_)
        | DataError::NonBinaryLabels
        | DataError::SingleClassLabels
        | DataError::LogisticNoConvergence(_)
        | DataError::PerfectSeparation => CliError::Stat(e.to_string()),
        _ => CliError::Io(e.to_string()),
    }
}

fn from_bridge(e: BridgeError) -> CliError {
    CliError::Usage(e.to_string())
}

fn from_gmm(e: GmmError) -> CliError {
    match e {
        GmmError::Bridge(inner) => from_bridge(inner),
        GmmError::Data(inner) => from_data(inner),
        other => CliError::Stat(other.to_string()),
    }
}

fn from_estimator(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::Data(inner) => from_data(inner),
        EstimatorError::Gmm(inner) => from_gmm(inner),
        EstimatorError::Bridge(inner) => from_bridge(inner),
        EstimatorError::ControlIndex { .. } => CliError::Usage(e.to_string()),
        other => CliError::Stat(other.to_string()),
    }
}

fn from_series(e: SeriesError) -> CliError {
    match e {
        SeriesError::Data(inner) => from_data(inner),
        SeriesError::Estimator(inner) => from_estimator(inner),
        SeriesError::Gmm(inner) => from_gmm(inner),
        SeriesError::Bridge(inner) => from_bridge(inner),
        SeriesError::InvalidLag(_)
        | SeriesError::InvalidExposureLags(_)
        | SeriesError::InvalidAutocorrelation(_) => CliError::Usage(e.to_string()),
        other => CliError::Stat(other.to_string()),
    }
}

fn from_sim(e: SimError) -> CliError {
    match e {
        SimError::Data(inner) => from_data(inner),
        SimError::Bridge(inner) => from_bridge(inner),
        SimError::Gmm(inner) => from_gmm(inner),
        SimError::Estimator(inner) => from_estimator(inner),
        SimError::Series(inner) => from_series(inner),
        other => CliError::Usage(other.to_string()),
    }
}

fn from_summary(e: SummaryError) -> CliError {
    match e {
        SummaryError::MissingField { .. } | SummaryError::ZeroDenominator(_) => {
            CliError::Stat(e.to_string())
        }
        _ => CliError::Io(e.to_string()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing report: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_bridge_spec(
    name_or_path: &str,
    contrast: Option<(f64, f64)>,
) -> Result<MomentSpec, CliError> {
    if builtin_names().contains(&name_or_path) {
        let (bridge, instruments) = builtin_bridges(name_or_path).map_err(from_bridge)?;
        return MomentSpec::new(bridge, instruments, contrast).map_err(from_bridge);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "`{name_or_path}` is neither a builtin bridge ({}) nor an existing file",
            builtin_names().join(", ")
        )));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let mut config: MomentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bridge file {}: {e}", path.display())))?;
    if contrast.is_some() {
        config.contrast = contrast;
    }
    config.to_spec().map_err(from_bridge)
}

fn pair(values: &[f64], what: &str) -> Result<(f64, f64), CliError> {
    match values {
        [a, b] => Ok((*a, *b)),
        _ => Err(CliError::Usage(format!("{what} takes exactly two values"))),
    }
}

fn run_estimate(args: &EstimateArgs) -> Result<(), CliError> {
    if args.hac.is_some() && args.method != MethodArg::Gmm {
        return Err(CliError::Usage(
            "--hac applies to --method gmm; the closed-form methods use plain sandwich errors"
                .into(),
        ));
    }
    let map = ColumnMap {
        x: args.x.clone(),
        y: args.y.clone(),
        z: args.z.clone(),
        w: args.w.clone(),
        v: args.v.clone(),
        transforms: HashMap::new(),
    };
    let data = read_csv(&args.data, &map).map_err(from_data)?;
    let scale = args.out.scale();

    if args.method == MethodArg::Gmm {
        let contrast = match &args.contrast {
            Some(values) => Some(pair(values, "--contrast")?),
            None => None,
        };
        let spec = load_bridge_spec(&args.bridge, contrast)?;
        let options = GmmOptions {
            hac: args.hac.map(HacConfig::Fixed),
            ..GmmOptions::default()
        };
        let fit = gmm_fit_with(&spec, &data, &options).map_err(from_gmm)?;
        let report = GmmReport::from_fit(&fit, parameter_names(&spec), data.len(), CI_LEVEL);
        let text = match args.out.format {
            Format::Table => render_gmm(&report, scale),
            Format::Machine => to_json(&report)?,
        };
        return emit(&text, args.out.output.as_deref());
    }

    let estimate = match args.method {
        MethodArg::Nc => nc_estimate(&data),
        MethodArg::Iv => iv_estimate(&data),
        MethodArg::Tsls => nc_tsls(&data),
        MethodArg::Ols => {
            let controls: Vec<usize> = (0..data.covariate_count()).collect();
            ols_estimate(&data, &controls)
        }
        MethodArg::Gmm => unreachable!("handled above"),
    }
    .map_err(from_estimator)?;
    let report = EstimateReport::from_estimate(&estimate, data.len(), CI_LEVEL);
    let text = match args.out.format {
        Format::Table => render_estimates(&[&report], scale),
        Format::Machine => to_json(&report)?,
    };
    emit(&text, args.out.output.as_deref())
}

fn run_timeseries(args: &TimeseriesArgs) -> Result<(), CliError> {
    let mut transforms = HashMap::new();
    if args.sqrt_outcome {
        transforms.insert(args.y.clone(), Transform::Sqrt);
    }
    let mut names = vec![args.x.clone(), args.y.clone()];
    names.extend(args.v.iter().cloned());
    let mut columns = read_columns(&args.data, &names, &transforms).map_err(from_data)?;
    let covariates = columns.split_off(2);
    let y = columns.pop().unwrap();
    let x = columns.pop().unwrap();
    let frame =
        SeriesFrame::new(x, y, covariates, args.lag as usize).map_err(from_series)?;
    let options = SeriesOptions {
        lagged: LaggedOptions {
            exposure_lags: args.exposure_lags as usize,
            trend_harmonics: args.trend_harmonics,
        },
        hac: args.hac.map(HacConfig::Fixed).unwrap_or_default(),
    };
    let analysis = analyze_series(&frame, &options).map_err(from_series)?;
    let text = match args.out.format {
        Format::Table => render_series(&analysis, args.out.scale()),
        Format::Machine => to_json(&analysis)?,
    };
    emit(&text, args.out.output.as_deref())
}

fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let config =
        DgpConfig::new(args.scenario, args.eta, args.xi, args.n).map_err(from_sim)?;
    let study =
        run_study(&config, &args.estimators, args.reps, args.seed).map_err(from_sim)?;

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", args.out_dir.display())))?;
    let report_path = args.out_dir.join("simulation_report.json");
    let table_path = args.out_dir.join("simulation_table.txt");
    let replicates_path = args.out_dir.join("replicates.csv");

    let table = render_simulation(&study.report);
    fs::write(&report_path, to_json(&study.report)?)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", report_path.display())))?;
    fs::write(&table_path, &table)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", table_path.display())))?;
    let mut writer = csv::Writer::from_path(&replicates_path)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", replicates_path.display())))?;
    for rep in &study.replicates {
        writer
            .serialize(rep)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", replicates_path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::Io(format!("writing {}: {e}", replicates_path.display())))?;

    print!("{table}");
    eprintln!(
        "wrote {}, {} and {}",
        report_path.display(),
        table_path.display(),
        replicates_path.display()
    );
    Ok(())
}

fn run_summary(args: &SummaryArgs) -> Result<(), CliError> {
    let summary = read_summary(&args.summary_file).map_err(from_summary)?;
    let scale = args.out.scale();
    let text = if args.positive_control {
        let range = args
            .ace_xw_range
            .as_ref()
            .expect("clap enforces --ace-xw-range with --positive-control");
        let (a, b) = pair(range, "--ace-xw-range")?;
        if a > b {
            return Err(CliError::Usage(format!(
                "--ace-xw-range lower bound {a} exceeds upper bound {b}"
            )));
        }
        let result = positive_control_adjust(&summary, (a, b)).map_err(from_summary)?;
        match args.out.format {
            Format::Table => render_sensitivity(&result, scale),
            Format::Machine => to_json(&result)?,
        }
    } else {
        let adjustment =
            binary_nc_adjust(&summary, args.interaction).map_err(from_summary)?;
        match args.out.format {
            Format::Table => render_adjustment(&adjustment, scale),
            Format::Machine => to_json(&adjustment)?,
        }
    };
    emit(&text, args.out.output.as_deref())
}

fn run_counterexample(args: &CounterexampleArgs) -> Result<(), CliError> {
    let report = counterexample_check(args.seed, args.n);
    let text = match args.out.format {
        Format::Table => render_counterexample(&report),
        Format::Machine => to_json(&report)?,
    };
    emit(&text, args.out.output.as_deref())?;
    if report.consistent {
        Ok(())
    } else {
        Err(CliError::Stat(
            "the two models do not reproduce the shared covariance".into(),
        ))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::Timeseries(args) => run_timeseries(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Summary(args) => run_summary(args),
        Command::Counterexample(args) => run_counterexample(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
