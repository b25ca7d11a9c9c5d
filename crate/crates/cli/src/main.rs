//! `designlab` command-line front end.
//!
//! Exit status: 0 on success, 1 when a run completes but one of its checks
//! fails, 2 for usage, input, or cap errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use designlab::config::RunConfig;
use designlab::io::{format_outcome, read_marginal_file, read_observed_file, read_population_file};
use designlab::oracle::{frt_exact, frt_monte_carlo, verify_residual_identity, FrtStatistic};
use designlab::scalar::format_exact;
use designlab::study::{StudyMode, Target};
use designlab::{
    draw_population, enumerate_moments, estimate, run_study, summarize, with_workers, Design,
    EstimateReport, FinitePopulation, Outcome,
};
use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "designlab", version, about = "Design-based variance calculations for randomized experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-population means, variances and the unit-effect variance.
    Summarize(PopulationArgs),
    /// Enumerate every assignment of a design and verify the moment identities.
    Enumerate(EnumerateArgs),
    /// Monte Carlo study over super-population draws.
    Study(StudyArgs),
    /// Randomization test of the sharp null of no effect.
    Frt(FrtArgs),
    /// Sharp lower bound on the unit-effect variance from two marginals.
    Bound(BoundArgs),
    /// Difference-in-means estimate, variance estimates and intervals.
    Estimate(EstimateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DesignKind {
    Complete,
    Stratified,
    MatchedPairs,
    Cluster,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest support to enumerate.
    #[arg(long)]
    cap: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long = "design", value_enum)]
    kind: Option<DesignKind>,
    /// Treated units (complete design).
    #[arg(long)]
    n1: Option<usize>,
    /// Treated clusters (cluster design).
    #[arg(long)]
    m1: Option<usize>,
    /// Treated count per stratum, as `label=count,label=count`.
    #[arg(long, value_parser = parse_treated)]
    treated: Option<BTreeMap<String, usize>>,
}

#[derive(Args)]
struct PopulationArgs {
    /// Population CSV with columns unit_id,y1,y0[,stratum][,cluster].
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    population: PopulationArgs,
    #[command(flatten)]
    design: DesignArgs,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Units per drawn population.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    /// Also write per-replication records to this CSV file.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Decomposition,
    Coverage,
    Unbiasedness,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    Tau,
    #[value(name = "tau_S", alias = "tau-s")]
    TauS,
}

#[derive(Args)]
struct ObservedArgs {
    /// Observed-data CSV with columns unit_id,z,yobs[,stratum][,cluster].
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    design: DesignArgs,
}

#[derive(Args)]
struct FrtArgs {
    #[command(flatten)]
    observed: ObservedArgs,
    /// Monte Carlo draws, used when the support exceeds the cap.
    #[arg(long, default_value_t = 10_000)]
    draws: u64,
    /// Sample assignments even when the support could be enumerated.
    #[arg(long)]
    monte_carlo: bool,
}

#[derive(Args)]
struct BoundArgs {
    /// Treated-arm marginal, one value per line.
    #[arg(long)]
    y1: PathBuf,
    /// Control-arm marginal, one value per line.
    #[arg(long)]
    y0: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    observed: ObservedArgs,
    #[arg(long)]
    alpha: Option<f64>,
}

fn parse_treated(text: &str) -> Result<BTreeMap<String, usize>, String> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (label, count) = part
            .split_once('=')
            .ok_or_else(|| format!("expected label=count, got {part:?}"))?;
        let count = count
            .trim()
            .parse()
            .map_err(|_| format!("bad treated count in {part:?}"))?;
        if out.insert(label.trim().to_string(), count).is_some() {
            return Err(format!("stratum {:?} listed twice", label.trim()));
        }
    }
    if out.is_empty() {
        return Err("no strata given".into());
    }
    Ok(out)
}

/// A run that could not complete; always exit status 2.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Input { context: String, source: designlab::Error },
    #[error(transparent)]
    Lib(#[from] designlab::Error),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn input_err(path: &Path) -> impl FnOnce(designlab::Error) -> CliError + '_ {
    move |source| CliError::Input { context: path.display().to_string(), source }
}

impl Common {
    fn resolve(&self, design: Option<&DesignArgs>) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(input_err(path))?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.run.seed = self.seed;
        }
        if self.cap.is_some() {
            cfg.run.cap = self.cap;
        }
        if self.threads.is_some() {
            cfg.run.threads = self.threads;
        }
        if let Some(d) = design {
            if let Some(design) = d.build(cfg.design.as_ref())? {
                cfg.design = Some(design);
            }
        }
        Ok(cfg)
    }

    fn emit(&self, json: &Value, csv: impl FnOnce() -> String) -> CliResult<()> {
        let text = match self.format {
            Format::Json => serde_json::to_string_pretty(json).expect("json serializes") + "\n",
            Format::Csv => csv(),
        };
        write_text(self.out.as_deref(), &text)
    }
}

fn write_text(out: Option<&Path>, text: &str) -> CliResult<()> {
    let result = match out {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    };
    result.map_err(|source| CliError::Output {
        path: out.map_or("stdout".into(), |p| p.display().to_string()),
        source,
    })
}

impl DesignArgs {
    /// The design described by the flags, layered over `base` from a config.
    fn build(&self, base: Option<&Design>) -> CliResult<Option<Design>> {
        let kind = match self.kind {
            Some(kind) => kind,
            None => match (base, self.n1, self.m1, &self.treated) {
                (_, None, None, None) => return Ok(None),
                (Some(Design::Cluster { .. }), _, _, _) | (None, None, Some(_), None) => DesignKind::Cluster,
                (Some(Design::Stratified { .. }), _, _, _) | (None, None, None, Some(_)) => DesignKind::Stratified,
                (Some(Design::MatchedPairs), ..) => DesignKind::MatchedPairs,
                _ => DesignKind::Complete,
            },
        };
        let design = match kind {
            DesignKind::Complete => Design::Complete {
                n1: self
                    .n1
                    .or(match base {
                        Some(Design::Complete { n1 }) => Some(*n1),
                        _ => None,
                    })
                    .ok_or_else(|| usage("the complete design needs --n1"))?,
            },
            DesignKind::Cluster => Design::Cluster {
                m1: self
                    .m1
                    .or(match base {
                        Some(Design::Cluster { m1 }) => Some(*m1),
                        _ => None,
                    })
                    .ok_or_else(|| usage("the cluster design needs --m1"))?,
            },
            DesignKind::Stratified => Design::Stratified {
                treated: self
                    .treated
                    .clone()
                    .or(match base {
                        Some(Design::Stratified { treated }) => Some(treated.clone()),
                        _ => None,
                    })
                    .ok_or_else(|| usage("the stratified design needs --treated label=count,..."))?,
            },
            DesignKind::MatchedPairs => Design::MatchedPairs,
        };
        Ok(Some(design))
    }
}

/// The config as it is echoed into reports. The worker count is an
/// execution setting and is left out so reports do not depend on it.
fn echoed(cfg: &RunConfig) -> Value {
    let mut cfg = cfg.clone();
    cfg.run.threads = None;
    serde_json::to_value(&cfg).expect("config serializes")
}

fn require_design(cfg: &RunConfig) -> CliResult<&Design> {
    cfg.design
        .as_ref()
        .ok_or_else(|| usage("no design: pass --design (with --n1, --m1 or --treated) or set [design] in --config"))
}

fn load_population(cfg: &mut RunConfig, input: &Option<PathBuf>) -> CliResult<FinitePopulation> {
    if let Some(path) = input {
        cfg.population.file = Some(path.clone());
        cfg.population.model = None;
    }
    if let Some(path) = &cfg.population.file {
        return read_population_file(path).map_err(input_err(path));
    }
    if let Some(model) = &cfg.population.model {
        let n = cfg
            .study
            .n
            .ok_or_else(|| usage("drawing a population from a model needs study.n"))?;
        let seed = cfg
            .run
            .seed
            .ok_or_else(|| usage("drawing a population from a model needs --seed"))?;
        return Ok(draw_population(model, n, &mut ChaCha20Rng::seed_from_u64(seed))?);
    }
    Err(usage("no population: pass --input or set [population] in --config"))
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv_writer();
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn json_scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Object(map) => map.get("exact").or(map.get("approx")).map(json_scalar).unwrap_or_default(),
        other => other.to_string(),
    }
}

fn summarize_cmd(args: &PopulationArgs) -> CliResult<bool> {
    let mut cfg = args.common.resolve(None)?;
    let pop = load_population(&mut cfg, &args.input)?;
    let summary = summarize(&pop);
    let body = summary.to_json();
    let report = json!({
        "command": "summarize",
        "config": echoed(&cfg),
        "exact": summary.exact.is_some(),
        "summary": body,
    });
    args.common.emit(&report, || {
        let fields = ["n", "ybar1", "ybar0", "tau_S", "S1sq", "S0sq", "Stausq", "S10"];
        let row = fields.iter().map(|f| json_scalar(&body[*f])).collect();
        csv_table(&fields, &[row])
    })?;
    Ok(true)
}

fn enumerate_cmd(args: &EnumerateArgs) -> CliResult<bool> {
    let common = &args.population.common;
    let mut cfg = common.resolve(Some(&args.design))?;
    let pop = load_population(&mut cfg, &args.population.input)?;
    let design = require_design(&cfg)?.clone();
    let cap = cfg.cap();
    let (enumerated, residual) = with_workers(cfg.run.threads, || -> designlab::Result<_> {
        let enumerated = enumerate_moments(&pop, &design, cap)?;
        let residual = match design {
            Design::Complete { .. } => Some(verify_residual_identity(&pop, &design, cap)?),
            _ => None,
        };
        Ok((enumerated, residual))
    })??;
    let pass = enumerated.all_hold() && residual != Some(false);
    let body = enumerated.to_json();
    let report = json!({
        "command": "enumerate",
        "config": echoed(&cfg),
        "report": body,
        "residual_identity": residual,
        "failures": enumerated.failures(),
        "pass": pass,
    });
    common.emit(&report, || {
        let mut rows = Vec::new();
        if let Value::Object(map) = &body {
            for (key, value) in map {
                if !value.is_array() && (!value.is_object() || value.get("approx").is_some()) {
                    rows.push(vec![key.clone(), json_scalar(value)]);
                }
            }
        }
        if let Some(r) = residual {
            rows.push(vec!["residual_identity".into(), r.to_string()]);
        }
        rows.push(vec!["pass".into(), pass.to_string()]);
        csv_table(&["quantity", "value"], &rows)
    })?;
    Ok(pass)
}

fn study_cmd(args: &StudyArgs) -> CliResult<bool> {
    let mut cfg = args.common.resolve(Some(&args.design))?;
    if let Some(mode) = args.mode {
        cfg.study.mode = Some(match mode {
            ModeArg::Decomposition => StudyMode::Decomposition,
            ModeArg::Coverage => StudyMode::Coverage,
            ModeArg::Unbiasedness => StudyMode::Unbiasedness,
        });
    }
    if let Some(target) = args.target {
        cfg.study.target = Some(match target {
            TargetArg::Tau => Target::Tau,
            TargetArg::TauS => Target::TauS,
        });
    }
    if args.n.is_some() {
        cfg.study.n = args.n;
    }
    if args.replications.is_some() {
        cfg.study.replications = args.replications;
    }
    if args.alpha.is_some() {
        cfg.study.alpha = args.alpha;
    }
    let study = cfg.study_config()?;
    let report = run_study(&study)?;
    let records = || -> CliResult<Vec<u8>> {
        let mut buf = Vec::new();
        report.write_records_csv(&mut buf)?;
        Ok(buf)
    };
    if let Some(path) = &args.records {
        std::fs::write(path, records()?)
            .map_err(|source| CliError::Output { path: path.display().to_string(), source })?;
    }
    let mut body = report.to_json();
    if let Value::Object(map) = &mut body {
        map.insert("command".into(), json!("study"));
        map.insert("run_config".into(), echoed(&cfg));
    }
    match args.common.format {
        Format::Json => args.common.emit(&body, String::new)?,
        Format::Csv => {
            let text = String::from_utf8(records()?).expect("utf-8");
            write_text(args.common.out.as_deref(), &text)?;
        }
    }
    Ok(report.pass)
}

fn observed_data(args: &ObservedArgs) -> CliResult<(RunConfig, designlab::ObservedData)> {
    let cfg = args.common.resolve(Some(&args.design))?;
    let rows = read_observed_file(&args.input).map_err(input_err(&args.input))?;
    let data = rows.with_design(require_design(&cfg)?)?;
    Ok((cfg, data))
}

fn frt_cmd(args: &FrtArgs) -> CliResult<bool> {
    let (cfg, data) = observed_data(&args.observed)?;
    let cap = cfg.cap();
    let enumerable = data.layout().checked_support(cap).is_ok();
    let result = if enumerable && !args.monte_carlo {
        with_workers(cfg.run.threads, || frt_exact(&data, FrtStatistic::AbsDiffMeans, cap))??.to_json()
    } else {
        let seed = cfg.run.seed.ok_or_else(|| {
            usage(format!(
                "the support exceeds the cap {cap}, so the p-value is estimated by sampling; pass --seed"
            ))
        })?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        frt_monte_carlo(&data, FrtStatistic::AbsDiffMeans, args.draws, &mut rng)?.to_json()
    };
    let report = json!({
        "command": "frt",
        "config": echoed(&cfg),
        "result": result,
    });
    args.observed.common.emit(&report, || {
        let fields = ["method", "statistic", "observed", "extreme", "support_size", "draws", "p_value", "p_value_approx", "se"];
        let row = fields.iter().map(|f| json_scalar(&result[*f])).collect();
        csv_table(&fields, &[row])
    })?;
    Ok(true)
}

fn exact_all(values: &[Outcome]) -> Option<Vec<BigRational>> {
    values.iter().map(|v| v.exact().cloned()).collect()
}

fn bound_cmd(args: &BoundArgs) -> CliResult<bool> {
    let y1 = read_marginal_file(&args.y1).map_err(input_err(&args.y1))?;
    let y0 = read_marginal_file(&args.y0).map_err(input_err(&args.y0))?;
    let bound = match (exact_all(&y1), exact_all(&y0)) {
        (Some(a), Some(b)) => {
            let q = designlab::estimator::sharp_bound_exact(&a, &b)?;
            json!({ "value": format_exact(&q), "approx": approx(&q), "exact": true })
        }
        _ => {
            let a: Vec<f64> = y1.iter().map(Outcome::to_f64).collect();
            let b: Vec<f64> = y0.iter().map(Outcome::to_f64).collect();
            let v = designlab::estimator::sharp_stau2_lower_bound(&a, &b)?;
            json!({ "value": v, "approx": v, "exact": false })
        }
    };
    let report = json!({
        "command": "bound",
        "n": y1.len(),
        "stausq_lower_bound": bound,
    });
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("json serializes") + "\n",
        Format::Csv => csv_table(
            &["n", "stausq_lower_bound", "approx"],
            &[vec![y1.len().to_string(), json_scalar(&bound["value"]), json_scalar(&bound["approx"])]],
        ),
    };
    write_text(args.out.as_deref(), &text)?;
    Ok(true)
}

fn approx(q: &BigRational) -> f64 {
    Outcome::Exact(q.clone()).to_f64()
}

fn estimate_cmd(args: &EstimateArgs) -> CliResult<bool> {
    let (mut cfg, data) = observed_data(&args.observed)?;
    if args.alpha.is_some() {
        cfg.study.alpha = args.alpha;
    }
    let alpha = cfg.study.alpha.unwrap_or(0.05);
    let est = estimate(&data, alpha)?;
    let mut body = est.to_json();
    if let (Value::Object(map), designlab::estimator::VarianceEstimate::Unavailable { reason }) =
        (&mut body, &est.variance)
    {
        map.insert("variance_unavailable".into(), json!(reason));
    }
    let report = json!({
        "command": "estimate",
        "config": echoed(&cfg),
        "n": data.yobs().len(),
        "yobs_exact": data.yobs().iter().all(|y| y.exact().is_some()),
        "yobs": data.yobs().iter().map(format_outcome).collect::<Vec<_>>(),
        "estimate": body,
    });
    args.observed.common.emit(&report, || {
        format!("{}\n{}\n", EstimateReport::csv_header(), est.csv_row())
    })?;
    Ok(true)
}

fn run(cli: &Cli) -> CliResult<bool> {
    match &cli.command {
        Command::Summarize(a) => summarize_cmd(a),
        Command::Enumerate(a) => enumerate_cmd(a),
        Command::Study(a) => study_cmd(a),
        Command::Frt(a) => frt_cmd(a),
        Command::Bound(a) => bound_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
