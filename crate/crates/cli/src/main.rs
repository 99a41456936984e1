use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lrtnet::beta_model::{fit_mle, fit_restricted};
use lrtnet::bt_model::{bt_fit_mle, bt_fit_restricted, bt_standard_errors, PairTotals};
use lrtnet::data::parse_values;
use lrtnet::fisher_approx::{check_homogeneous_bound, check_inverse_bound, ApproxReport};
use lrtnet::lrt::{run_test, Observations, Regime, TestOptions};
use lrtnet::moments_oracle::{
    enumerate_exact_moments, inverse_variance_weights, lemma1_monte_carlo, quadratic_sum_variance, DegreeStatistic,
    ExactMoments, MomentReport, MAX_ENUMERATION_NODES,
};
use lrtnet::montecarlo::{
    build_scenario, pearson_correlation, qq_csv, qq_data, run_power, run_type1, stats_csv, McReport, Preset,
    QqReference, Scenario, ScenarioParams,
};
use lrtnet::{load_comparisons, load_edge_list, ComparisonTable, Error, Fit, FitOptions, ModelKind};
use lrtnet::{NullHypothesis, UndirectedGraph};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "lrtnet",
    version,
    about = "Likelihood ratio tests for beta-model graphs and Bradley-Terry comparisons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum likelihood fit, optionally under a null.
    Fit(FitArgs),
    /// Likelihood ratio test of a null against the full model.
    Test(TestArgs),
    /// Type I error study for a scenario whose truth satisfies the null.
    Simulate(SimArgs),
    /// Rejection rates for a scenario whose truth may violate the null.
    Power(SimArgs),
    /// Quantile pairs of replicate statistics against a reference law.
    Qq(QqArgs),
    /// Moments of the weighted quadratic degree sum.
    Oracle(OracleArgs),
    /// Diagonal approximations to the inverse information matrix.
    MatrixDiag(MatrixArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Beta,
    Bt,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Beta => ModelKind::Beta,
            Model::Bt => ModelKind::BradleyTerry,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Fixed,
    Growing,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Output {
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: Model,
    /// Edge list (`i,j` per line) or comparisons (`winner,loser,count` per line).
    #[arg(long)]
    input: PathBuf,
    /// `specified:<file>` or `homogeneous:<r>`.
    #[arg(long)]
    null: Option<String>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long)]
    input: PathBuf,
    /// `specified:<file>` or `homogeneous:<r>`.
    #[arg(long)]
    null: String,
    #[arg(long, value_enum, default_value = "fixed")]
    regime: RegimeArg,
    /// Bootstrap replicates, used only when no chi-square limit applies.
    #[arg(long, default_value_t = 999)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario JSON file, or a preset name (h01, h02, h03, h04, power-beta, power-bt, nba-small, bt-fixed-specified).
    #[arg(long)]
    scenario: String,
    /// Model for presets that allow either.
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    /// Signal size for the power presets.
    #[arg(long)]
    c: Option<f64>,
    /// `L_n = l_coef * log n` for the linear designs.
    #[arg(long)]
    l_coef: Option<f64>,
    /// Comparisons per pair (Bradley-Terry).
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Significance levels; repeat the flag for several.
    #[arg(long)]
    alpha: Vec<f64>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct QqArgs {
    /// Replicate statistics, one per line.
    #[arg(long)]
    input: PathBuf,
    /// `chi2:<df>` or `normal`.
    #[arg(long)]
    reference: String,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct OracleArgs {
    /// Parameter vector file.
    #[arg(long)]
    beta: PathBuf,
    #[arg(long)]
    r: usize,
    /// Simulated graphs for the empirical moments; 0 skips simulation.
    #[arg(long, default_value_t = 0)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long)]
    beta: PathBuf,
    #[arg(long, default_value_t = 0)]
    r: usize,
    #[command(flatten)]
    output: Output,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } => 4,
            Error::InvalidInput(_) => 2,
            Error::Nonexistent(_) => 3,
            Error::Numerical(_) => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn emit(output: &Output, body: &str) -> Outcome<()> {
    match &output.out {
        Some(path) => fs::write(path, body).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialise");
    s.push('\n');
    s
}

fn json_only(output: &Output, verb: &str) -> Outcome<()> {
    if output.format == Format::Csv {
        return Err(Failure::usage(format!("`{verb}` has no csv output")));
    }
    Ok(())
}

enum Data {
    Graph(UndirectedGraph),
    Table(ComparisonTable),
}

impl Data {
    fn load(model: Model, path: &Path) -> Outcome<Self> {
        let text = read(path)?;
        Ok(match model {
            Model::Beta => Data::Graph(load_edge_list(&text)?),
            Model::Bt => Data::Table(load_comparisons(&text)?),
        })
    }

    fn observations(&self) -> Observations<'_> {
        match self {
            Data::Graph(g) => Observations::Graph(g),
            Data::Table(t) => Observations::Comparisons(t),
        }
    }
}

/// `specified:<file>` lists the fixed values; under Bradley-Terry the
/// reference subject is pinned at zero and not listed, so `r` is one more.
fn parse_null(model: Model, spec: &str) -> Outcome<NullHypothesis> {
    let (kind, arg) = spec.split_once(':').ok_or_else(|| Failure::usage(format!("bad null `{spec}`")))?;
    match kind {
        "homogeneous" => {
            let r = arg.parse().map_err(|_| Failure::usage(format!("bad r `{arg}`")))?;
            Ok(NullHypothesis::Homogeneous { r })
        }
        "specified" => {
            let values = parse_values(&read(Path::new(arg))?)?;
            let r = match model {
                Model::Beta => values.len(),
                Model::Bt => values.len() + 1,
            };
            Ok(NullHypothesis::Specified { r, values })
        }
        _ => Err(Failure::usage(format!("null kind must be specified or homogeneous, got `{kind}`"))),
    }
}

#[derive(Serialize)]
struct FitReport {
    model: ModelKind,
    n: usize,
    exists: bool,
    converged: bool,
    iterations: usize,
    loglik: f64,
    gradient_norm: f64,
    beta_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_hat: Option<Vec<Option<f64>>>,
}

fn fit(args: &FitArgs) -> Outcome<()> {
    let data = Data::load(args.model, &args.input)?;
    let null = args.null.as_deref().map(|s| parse_null(args.model, s)).transpose()?;
    let opts = FitOptions::default();
    let (fit, n): (Fit, usize) = match (&data, &null) {
        (Data::Graph(g), None) => (fit_mle(g, &opts), g.n()),
        (Data::Graph(g), Some(h)) => (fit_restricted(g, h, &opts)?, g.n()),
        (Data::Table(t), None) => (bt_fit_mle(t, &opts), t.n()),
        (Data::Table(t), Some(h)) => (bt_fit_restricted(t, h, &opts)?, t.n()),
    };
    if !fit.exists {
        return Err(Failure { code: 3, message: "maximum likelihood estimate does not exist for this data".into() });
    }
    let sigma_hat = match &data {
        Data::Table(t) => Some(bt_standard_errors(&fit.beta_hat, t)?),
        Data::Graph(_) => None,
    };
    eprintln!(
        "fit: n = {n}, loglik = {:.6}, {} after {} iterations",
        fit.loglik,
        if fit.converged { "converged" } else { "not converged" },
        fit.iterations
    );
    let body = match args.output.format {
        Format::Json => to_json(&FitReport {
            model: fit.model,
            n,
            exists: fit.exists,
            converged: fit.converged,
            iterations: fit.iterations,
            loglik: fit.loglik,
            gradient_norm: fit.gradient_norm,
            beta_hat: fit.beta_hat.clone(),
            sigma_hat: sigma_hat.clone(),
        }),
        Format::Csv => {
            let mut s = String::from(if sigma_hat.is_some() { "id,beta_hat,sigma_hat\n" } else { "id,beta_hat\n" });
            for (i, b) in fit.beta_hat.iter().enumerate() {
                match &sigma_hat {
                    Some(se) => {
                        let se = se[i].map(|v| v.to_string()).unwrap_or_default();
                        s.push_str(&format!("{i},{b},{se}\n"));
                    }
                    None => s.push_str(&format!("{i},{b}\n")),
                }
            }
            s
        }
    };
    emit(&args.output, &body)
}

fn test(args: &TestArgs) -> Outcome<()> {
    let data = Data::load(args.model, &args.input)?;
    let null = parse_null(args.model, &args.null)?;
    let regime = match args.regime {
        RegimeArg::Fixed => Regime::Fixed,
        RegimeArg::Growing => Regime::Growing,
    };
    let opts = TestOptions { bootstrap_reps: args.reps, bootstrap_seed: args.seed, ..TestOptions::default() };
    let report = run_test(data.observations(), &null, regime, &opts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let p = report.p_value.map(|p| format!("{p:.4}")).unwrap_or_else(|| "n/a".into());
    eprintln!("test: statistic {:.4}, p-value {p}", report.stat);
    let body = match args.output.format {
        Format::Json => to_json(&report),
        Format::Csv => {
            let p = report.p_value.map(|p| p.to_string()).unwrap_or_default();
            format!("stat,p_value\n{},{p}\n", report.stat)
        }
    };
    emit(&args.output, &body)
}

/// A scenario file holds either a complete scenario or a preset with parameters.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioFile {
    Full(Scenario),
    Preset {
        preset: Preset,
        #[serde(default)]
        params: ScenarioParams,
    },
}

fn preset_named(name: &str) -> Option<Preset> {
    serde_json::from_value(serde_json::Value::String(name.replace('-', "_"))).ok()
}

fn load_scenario(args: &SimArgs) -> Outcome<Scenario> {
    let source = if Path::new(&args.scenario).is_file() {
        let text = read(Path::new(&args.scenario))?;
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", args.scenario)))?
    } else if let Some(preset) = preset_named(&args.scenario) {
        ScenarioFile::Preset { preset, params: ScenarioParams::default() }
    } else {
        return Err(Failure::usage(format!("`{}` is neither a scenario file nor a preset", args.scenario)));
    };
    let mut scenario = match source {
        ScenarioFile::Full(s) => {
            if args.model.is_some() || args.n.is_some() || args.r.is_some() || args.c.is_some() || args.l_coef.is_some()
            {
                return Err(Failure::usage("--model, --n, --r, --c and --l-coef apply to presets only"));
            }
            s
        }
        ScenarioFile::Preset { preset, mut params } => {
            if let Some(m) = args.model {
                params.model = m.into();
            }
            params.n = args.n.unwrap_or(params.n);
            params.r = args.r.or(params.r);
            params.c = args.c.unwrap_or(params.c);
            params.l_coef = args.l_coef.unwrap_or(params.l_coef);
            params.k = args.k.unwrap_or(params.k);
            build_scenario(preset, &params)?
        }
    };
    if let Some(reps) = args.reps {
        scenario.reps = reps;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(k) = args.k {
        if scenario.model == ModelKind::BradleyTerry {
            scenario.totals = Some(PairTotals::Constant(k));
        }
    }
    if !args.alpha.is_empty() {
        scenario.alphas = args.alpha.clone();
    }
    scenario.validate()?;
    Ok(scenario)
}

fn simulation(args: &SimArgs, power: bool) -> Outcome<()> {
    let scenario = load_scenario(args)?;
    let report: McReport = if power { run_power(&scenario)? } else { run_type1(&scenario)? };
    let rates: Vec<String> = report.rejection_rates.iter().map(|r| format!("{:.4} at {}", r.rate, r.alpha)).collect();
    eprintln!(
        "{}: {} of {} replicates used, nonexistence {:.4}, rejection {}",
        report.scenario,
        report.reps_used,
        report.reps,
        report.nonexist_freq,
        rates.join(", ")
    );
    let body = match args.output.format {
        Format::Json => to_json(&report),
        Format::Csv => stats_csv(&report.stats),
    };
    emit(&args.output, &body)
}

fn parse_reference(text: &str) -> Outcome<QqReference> {
    if text == "normal" {
        return Ok(QqReference::Normal);
    }
    let df = text
        .strip_prefix("chi2:")
        .and_then(|d| d.parse::<u32>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Failure::usage(format!("reference must be chi2:<df> or normal, got `{text}`")))?;
    Ok(QqReference::ChiSquare { df })
}

#[derive(Serialize)]
struct QqReport {
    reference: QqReference,
    correlation: f64,
    pairs: Vec<(f64, f64)>,
}

fn qq(args: &QqArgs) -> Outcome<()> {
    let reference = parse_reference(&args.reference)?;
    let stats = parse_values(&read(&args.input)?)?;
    let pairs = qq_data(&stats, reference).map_err(|e| Failure::data(e.to_string()))?;
    let correlation = pearson_correlation(&pairs);
    eprintln!("qq: {} points, correlation {correlation:.4}", pairs.len());
    let body = match args.output.format {
        Format::Json => to_json(&QqReport { reference, correlation, pairs }),
        Format::Csv => qq_csv(&pairs),
    };
    emit(&args.output, &body)
}

#[derive(Serialize)]
struct OracleReport {
    n: usize,
    r: usize,
    moments: MomentReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<ExactMoments>,
}

fn oracle(args: &OracleArgs) -> Outcome<()> {
    json_only(&args.output, "oracle")?;
    let beta = parse_values(&read(&args.beta)?)?;
    let n = beta.len();
    if args.r == 0 || args.r > n {
        return Err(Failure::usage(format!("need 1 <= r <= {n}")));
    }
    let moments = if args.reps > 0 {
        lemma1_monte_carlo(&beta, args.r, args.reps, args.seed)?
    } else {
        quadratic_sum_variance(&beta, args.r, &inverse_variance_weights(&beta, args.r))?
    };
    let exact = if n <= MAX_ENUMERATION_NODES {
        let f = inverse_variance_weights(&beta, args.r);
        Some(enumerate_exact_moments(&beta, &DegreeStatistic::Quadratic(f))?)
    } else {
        None
    };
    eprintln!("oracle: mean {:.6}, variance {:.6}", moments.mean_formula, moments.var_formula);
    emit(&args.output, &to_json(&OracleReport { n, r: args.r, moments, exact }))
}

#[derive(Serialize)]
struct MatrixReport {
    inverse: ApproxReport,
    /// Present when the first `r` entries are tied, so the homogeneous parameterisation applies.
    #[serde(skip_serializing_if = "Option::is_none")]
    homogeneous: Option<ApproxReport>,
}

fn matrix_diag(args: &MatrixArgs) -> Outcome<()> {
    json_only(&args.output, "matrix-diag")?;
    let beta = parse_values(&read(&args.beta)?)?;
    if args.r > beta.len() {
        return Err(Failure::usage(format!("r = {} exceeds n = {}", args.r, beta.len())));
    }
    let inverse = check_inverse_bound(&beta, args.r)?;
    let tied = beta[..args.r].iter().all(|b| (b - beta[0]).abs() <= 1e-12);
    let homogeneous = if tied { Some(check_homogeneous_bound(&beta, args.r)?) } else { None };
    eprintln!("matrix-diag: max |V^-1 - S| = {:.3e} against bound {:.3e}", inverse.max_abs_error, inverse.bound);
    emit(&args.output, &to_json(&MatrixReport { inverse, homogeneous }))
}

fn run(cli: &Cli) -> Outcome<()> {
    match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Test(a) => test(a),
        Command::Simulate(a) => simulation(a, false),
        Command::Power(a) => simulation(a, true),
        Command::Qq(a) => qq(a),
        Command::Oracle(a) => oracle(a),
        Command::MatrixDiag(a) => matrix_diag(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
