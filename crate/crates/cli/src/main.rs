//! `cqrf` command-line driver.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cqrf::data::format_f64;
use cqrf::experiment::{
    run_on_data, run_simulation, summarize, BenchmarkRow, BenchmarkSpec, DataBenchmarkSpec, Method, SummaryRow,
    WeightsKind,
};
use cqrf::metrics::{c_index_from_quantiles, interval_coverage, quantile_loss, MetricReport};
use cqrf::quantile::{interval_from, interval_taus};
use cqrf::simgen::DEFAULT_RATE_MULTIPLIER;
use cqrf::{
    fit, forest_weights, generate, load_csv_auto, load_features_csv, predict_batch, Dataset, Forest, ForestConfig,
    SimModel, SimSpec, SurvivalKind,
};

#[derive(Parser, Debug)]
#[command(name = "cqrf", version, about = "Censored quantile regression forests")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "CQRF_THREADS", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Generate a simulated censored dataset.
    Simulate(SimulateArgs),
    /// Fit a forest and save it as JSON.
    Train(TrainArgs),
    /// Predict conditional quantiles or prediction intervals.
    Predict(PredictArgs),
    /// Dump the estimated censoring survival curve at one point.
    Survcurve(PointArgs),
    /// Dump the forest weights at one point.
    Weights(PointArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Sweep methods, node sizes and levels over replications.
    Benchmark(BenchmarkArgs),
    /// Rerun a command from a `.meta.json` file.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SimulateArgs {
    #[arg(long)]
    model: SimModel,
    #[arg(long)]
    n: usize,
    /// Number of features; defaults to 20 (aft), 40 (hetero) or 1 (sine).
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    trees: usize,
    #[arg(long, default_value_t = 20)]
    min_node_size: usize,
    /// Features tried per split; defaults to ceil(sqrt(p)).
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    subsample: Option<f64>,
    /// Honest trees; the weights family sets the default.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    honest: Option<bool>,
    #[arg(long, default_value = "quantile")]
    weights: WeightsKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training data the model was fitted on.
    #[arg(long)]
    data: PathBuf,
    /// Query points; defaults to the rows of `--data`.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Quantile level, repeatable or comma separated.
    #[arg(long, value_parser = parse_unit_interval, value_delimiter = ',')]
    tau: Vec<f64>,
    /// Central prediction-interval level; replaces `--tau`.
    #[arg(long, value_parser = parse_unit_interval, conflicts_with = "tau")]
    level: Option<f64>,
    #[arg(long, default_value = "beran-forest")]
    survival: SurvivalKind,
    /// Ignore censoring (`G = 1`).
    #[arg(long)]
    uncorrected: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write the table as `<out>.json`.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PointArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Use row `i` of `--data` as the query point.
    #[arg(long, conflicts_with = "x")]
    row: Option<usize>,
    /// Comma-separated query point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    #[arg(long, default_value = "beran-forest")]
    survival: SurvivalKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EvaluateArgs {
    /// Dataset the predictions refer to, row for row.
    #[arg(long)]
    data: PathBuf,
    /// Output of `predict`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct BenchmarkArgs {
    /// Simulation design to sweep.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    model: Option<SimModel>,
    /// User dataset to sweep with random 80/20 splits.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training rows per replication (simulation only).
    #[arg(long)]
    n: Option<usize>,
    /// Test rows per replication (simulation only).
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    trees: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80")]
    node_sizes: Vec<usize>,
    #[arg(long, value_parser = parse_unit_interval, value_delimiter = ',', default_value = "0.3,0.5,0.7")]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long, default_value = "beran-forest")]
    survival: SurvivalKind,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_RATE_MULTIPLIER)]
    rate_multiplier: f64,
    /// Summary table.
    #[arg(long)]
    out: PathBuf,
    /// Per-replication rows.
    #[arg(long)]
    raw_out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ReplayArgs {
    #[arg(long)]
    config: PathBuf,
}

/// Written next to every primary output as `<out>.meta.json`.
#[derive(Debug, Serialize, Deserialize)]
struct RunConfig {
    cqrf_version: String,
    run: Command,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    resolved: Option<serde_json::Value>,
}

fn parse_unit_interval(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} must lie strictly between 0 and 1"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_with_threads(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run_with_threads(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => bail!("--threads must be positive"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the thread pool")?
            .install(|| run(cli.command)),
        None => run(cli.command),
    }
}

fn run(command: Command) -> Result<()> {
    match &command {
        Command::Simulate(a) => simulate(a, &command),
        Command::Train(a) => train(a, &command),
        Command::Predict(a) => predict(a, &command),
        Command::Survcurve(a) => survcurve(a, &command),
        Command::Weights(a) => weights(a, &command),
        Command::Evaluate(a) => evaluate(a, &command),
        Command::Benchmark(a) => benchmark(a, &command),
        Command::Replay(a) => {
            let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
            let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
            if matches!(cfg.run, Command::Replay(_)) {
                bail!("a replay config cannot point at another replay");
            }
            run(cfg.run)
        }
    }
}

/// Writes through a temporary file in the target directory so a failed run
/// never leaves a partial output behind.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder
        .tempfile_in(dir)
        .with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_meta(out: &Path, command: &Command, resolved: Option<serde_json::Value>) -> Result<()> {
    let meta = RunConfig {
        cqrf_version: env!("CARGO_PKG_VERSION").to_string(),
        run: command.clone(),
        resolved,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    write_atomic(&sibling(out, ".meta.json"), text.as_bytes())
}

/// A CSV table kept as strings so it can be mirrored as JSON.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<&'static str>) -> Self {
        Self { header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    fn json(&self) -> Result<String> {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.header
                    .iter()
                    .zip(r)
                    .map(|(h, v)| (h.to_string(), json_cell(v)))
                    .collect()
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows)?;
        s.push('\n');
        Ok(s)
    }

    fn write(&self, out: &Path, json: bool) -> Result<()> {
        write_atomic(out, self.csv().as_bytes())?;
        if json {
            write_atomic(&sibling(out, ".json"), self.json()?.as_bytes())?;
        }
        Ok(())
    }
}

fn json_cell(v: &str) -> serde_json::Value {
    use serde_json::Value;
    if v.is_empty() {
        return Value::Null;
    }
    if let Ok(i) = v.parse::<i64>() {
        return Value::from(i);
    }
    v.parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or_else(|| Value::String(v.to_string()), Value::Number)
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_csv_auto(path).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<Forest> {
    Forest::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn simulate(a: &SimulateArgs, command: &Command) -> Result<()> {
    let p = a.p.unwrap_or(match a.model {
        SimModel::Aft => 20,
        SimModel::Hetero => 40,
        SimModel::Sine => 1,
    });
    let spec = SimSpec::new(a.model, a.n, p, a.seed);
    let d = generate(spec)?;
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    write_atomic(&a.out, &buf)?;
    write_meta(&a.out, command, Some(serde_json::to_value(spec)?))
}

fn train_config(a: &TrainArgs) -> ForestConfig {
    let mut cfg = a.weights.config(a.trees, a.min_node_size, a.seed);
    cfg.mtry = a.mtry;
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = a.subsample {
        cfg.subsample_fraction = s;
    }
    if let Some(h) = a.honest {
        cfg.honest = h;
    }
    cfg
}

fn train(a: &TrainArgs, command: &Command) -> Result<()> {
    let d = load_data(&a.data)?;
    let forest = fit(&d, &train_config(a))?;
    write_atomic(&a.model_out, forest.to_json()?.as_bytes())?;
    write_meta(&a.model_out, command, Some(serde_json::to_value(forest.config())?))
}

fn queries_for(data: &Dataset, path: Option<&Path>) -> Result<Vec<Vec<f64>>> {
    match path {
        Some(p) => load_features_csv(p).with_context(|| format!("loading queries {}", p.display())),
        None => Ok((0..data.n()).map(|i| data.row(i).to_vec()).collect()),
    }
}

fn predict(a: &PredictArgs, command: &Command) -> Result<()> {
    let forest = load_model(&a.model)?;
    let d = load_data(&a.data)?;
    let queries = queries_for(&d, a.queries.as_deref())?;
    let survival = (!a.uncorrected).then_some(a.survival);

    let table = if let Some(level) = a.level {
        let (lo, hi) = interval_taus(level)?;
        let est = predict_batch(&forest, &d, &queries, &[lo, hi], survival)?;
        let mut t = Table::new(vec!["row", "level", "lower", "upper", "swapped", "degenerate"]);
        for (i, e) in est.iter().enumerate() {
            let iv = interval_from(e[0], e[1]);
            t.push(vec![
                i.to_string(),
                level.to_string(),
                format_f64(iv.lower),
                format_f64(iv.upper),
                flag(iv.swapped),
                flag(iv.degenerate),
            ]);
        }
        t
    } else {
        if a.tau.is_empty() {
            bail!("give at least one --tau or a --level");
        }
        let est = predict_batch(&forest, &d, &queries, &a.tau, survival)?;
        let mut t = Table::new(vec!["row", "tau", "q_hat", "score_abs", "degenerate"]);
        for (i, row) in est.iter().enumerate() {
            for (tau, e) in a.tau.iter().zip(row) {
                t.push(vec![
                    i.to_string(),
                    tau.to_string(),
                    format_f64(e.q_hat),
                    format_f64(e.score_abs),
                    flag(e.degenerate),
                ]);
            }
        }
        t
    };
    table.write(&a.out, a.json)?;
    write_meta(&a.out, command, None)
}

fn point_of(a: &PointArgs, d: &Dataset) -> Result<Vec<f64>> {
    match (&a.x, a.row) {
        (Some(x), None) => Ok(x.clone()),
        (None, Some(i)) if i < d.n() => Ok(d.row(i).to_vec()),
        (None, Some(i)) => bail!("--row {i} is out of range for {} rows", d.n()),
        _ => bail!("give either --row or --x"),
    }
}

fn survcurve(a: &PointArgs, command: &Command) -> Result<()> {
    let forest = load_model(&a.model)?;
    let d = load_data(&a.data)?;
    let x = point_of(a, &d)?;
    let w = forest_weights(&forest, &x)?;
    let curve = cqrf::quantile::survival_curve(&d, &w, a.survival)?;
    let mut t = Table::new(vec!["jump_time", "value"]);
    for (q, v) in curve.jump_times().iter().zip(curve.values()) {
        t.push(vec![format_f64(*q), format_f64(*v)]);
    }
    t.write(&a.out, a.json)?;
    write_meta(&a.out, command, None)
}

fn weights(a: &PointArgs, command: &Command) -> Result<()> {
    let forest = load_model(&a.model)?;
    let d = load_data(&a.data)?;
    let x = point_of(a, &d)?;
    let w = forest_weights(&forest, &x)?;
    let mut t = Table::new(vec!["index", "weight"]);
    for (i, wi) in w.iter() {
        t.push(vec![i.to_string(), format_f64(wi)]);
    }
    t.write(&a.out, a.json)?;
    write_meta(&a.out, command, None)
}

enum Predictions {
    Quantiles(Vec<(usize, f64, f64)>),
    Intervals(Vec<(usize, f64, f64, f64)>),
}

fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let rows: Vec<Vec<&str>> = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').collect()).collect();
    let num = |s: &str| -> Result<f64> { s.trim().parse().with_context(|| format!("bad number {s:?} in {}", path.display())) };
    let idx = |s: &str| -> Result<usize> { s.trim().parse().with_context(|| format!("bad row index {s:?} in {}", path.display())) };
    match header.trim() {
        "row,tau,q_hat,score_abs,degenerate" => rows
            .iter()
            .map(|r| Ok((idx(r[0])?, num(r[1])?, num(r[2])?)))
            .collect::<Result<_>>()
            .map(Predictions::Quantiles),
        "row,level,lower,upper,swapped,degenerate" => rows
            .iter()
            .map(|r| Ok((idx(r[0])?, num(r[1])?, num(r[2])?, num(r[3])?)))
            .collect::<Result<_>>()
            .map(Predictions::Intervals),
        other => bail!("{} is not a prediction table (header {other:?})", path.display()),
    }
}

fn metric_row(t: &mut Table, m: &MetricReport) {
    t.push(vec![
        m.name.clone(),
        format_f64(m.value),
        m.n_evaluated.to_string(),
        m.std_error.map(format_f64).unwrap_or_default(),
    ]);
}

fn evaluate(a: &EvaluateArgs, command: &Command) -> Result<()> {
    let d = load_data(&a.data)?;
    let mut t = Table::new(vec!["name", "value", "n_evaluated", "std_error"]);
    let check_rows = |rows: &mut dyn Iterator<Item = usize>| -> Result<()> {
        for (k, r) in rows.enumerate() {
            if r != k {
                bail!("prediction rows do not line up with the {} rows of {}", d.n(), a.data.display());
            }
        }
        Ok(())
    };
    match read_predictions(&a.predictions)? {
        Predictions::Quantiles(rows) => {
            let mut taus: Vec<f64> = Vec::new();
            for r in &rows {
                if !taus.contains(&r.1) {
                    taus.push(r.1);
                }
            }
            for tau in taus {
                let sel: Vec<&(usize, f64, f64)> = rows.iter().filter(|r| r.1 == tau).collect();
                check_rows(&mut sel.iter().map(|r| r.0))?;
                if sel.len() != d.n() {
                    bail!("{} predictions at tau = {tau} for {} rows", sel.len(), d.n());
                }
                let q: Vec<f64> = sel.iter().map(|r| r.2).collect();
                if let Some(lt) = d.latent_t() {
                    let loss = quantile_loss(&q, lt, tau)?;
                    metric_row(&mut t, &MetricReport::new(format!("quantile_loss@{tau}"), loss, q.len()));
                }
                match c_index_from_quantiles(d.y(), d.delta(), &q) {
                    Ok(c) => metric_row(&mut t, &MetricReport::new(format!("c_index@{tau}"), c, q.len())),
                    Err(cqrf::CqrfError::NoComparablePairs) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Predictions::Intervals(rows) => {
            check_rows(&mut rows.iter().map(|r| r.0))?;
            if rows.len() != d.n() {
                bail!("{} intervals for {} rows", rows.len(), d.n());
            }
            let Some(lt) = d.latent_t() else {
                bail!("interval coverage needs the latent t column in {}", a.data.display());
            };
            let iv: Vec<(f64, f64)> = rows.iter().map(|r| (r.2, r.3)).collect();
            let level = rows.first().map_or(0.0, |r| r.1);
            let cov = interval_coverage(&iv, lt)?;
            metric_row(&mut t, &MetricReport::new(format!("coverage@{level}"), cov, iv.len()));
        }
    }
    t.write(&a.out, a.json)?;
    write_meta(&a.out, command, None)
}

fn summary_table(rows: &[SummaryRow]) -> Table {
    let mut t = Table::new(vec!["method", "node_size", "tau", "metric", "mean", "std_error", "reps"]);
    for s in rows {
        t.push(vec![
            s.method.to_string(),
            s.node_size.to_string(),
            s.tau.to_string(),
            s.metric.clone(),
            format_f64(s.mean),
            s.std_error.map(format_f64).unwrap_or_default(),
            s.reps.to_string(),
        ]);
    }
    t
}

fn raw_table(rows: &[BenchmarkRow]) -> Table {
    let mut t = Table::new(vec!["method", "node_size", "tau", "rep", "metric", "value"]);
    for r in rows {
        t.push(vec![
            r.method.to_string(),
            r.node_size.to_string(),
            r.tau.to_string(),
            r.rep.to_string(),
            r.metric.clone(),
            format_f64(r.value),
        ]);
    }
    t
}

fn benchmark(a: &BenchmarkArgs, command: &Command) -> Result<()> {
    let methods = a.methods.clone().unwrap_or_else(|| Method::ALL.to_vec());
    let (rows, resolved) = match (&a.model, &a.data) {
        (Some(model), None) => {
            let base = BenchmarkSpec::for_model(*model);
            let spec = BenchmarkSpec {
                n_train: a.n.unwrap_or(base.n_train),
                n_test: a.n_test,
                p: a.p.unwrap_or(base.p),
                num_trees: a.trees,
                node_sizes: a.node_sizes.clone(),
                taus: a.taus.clone(),
                reps: a.reps,
                seed: a.seed,
                methods,
                survival: a.survival,
                mtry: a.mtry,
                ..base
            };
            (run_simulation(&spec)?, serde_json::to_value(&spec)?)
        }
        (None, Some(path)) => {
            let d = load_data(path)?;
            let spec = DataBenchmarkSpec {
                num_trees: a.trees,
                node_sizes: a.node_sizes.clone(),
                taus: a.taus.clone(),
                reps: a.reps,
                seed: a.seed,
                train_fraction: a.train_fraction,
                rate_multiplier: a.rate_multiplier,
                methods,
                survival: a.survival,
                mtry: a.mtry,
            };
            (run_on_data(&d, &spec)?, serde_json::to_value(&spec)?)
        }
        _ => bail!("give exactly one of --model or --data"),
    };
    summary_table(&summarize(&rows)).write(&a.out, a.json)?;
    if let Some(raw) = &a.raw_out {
        raw_table(&rows).write(raw, a.json)?;
    }
    write_meta(&a.out, command, Some(resolved))
}
