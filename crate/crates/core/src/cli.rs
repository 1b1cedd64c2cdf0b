//! Command-line front end. `main` only calls [`run`].
//!
//! Every subcommand reads an optional `key = value` config file first; flags
//! given on the command line win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::context::SourceId;
use crate::discretize::BinningKind;
use crate::error::Error;
use crate::estimate::{fit_estimator, AutoDepthSpec, CombinedEstimator, EstimatorSpec, Rule, SourceSpec};
use crate::harness::{
    self, bins_sweep, duration_split_eval, loocv_report, per_user, per_user_kde, sample_app_eval, two_fold_eval,
    user_data, SampleApp, UserAccuracy, DEFAULT_BANDWIDTH, DURATION_FRACTIONS,
};
use crate::smartcontext::{sweep_pooled, CostModel, SmartContextPolicy, SweepRow};
use crate::synth::{generate, write_synth, SynthConfig};
use crate::trace::{LabeledEvent, Trace, UsageKind, DEFAULT_VOCAB_CAP};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "smartctx", version, about = "Context-dependent usage estimation and cost-aware context selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trace and its ground-truth model.
    Synth(SynthArgs),
    /// Fit one estimator per user and write them as JSON.
    Train(CommonArgs),
    /// Evaluate estimators with LOOCV, two-fold or duration splits.
    Eval(EvalArgs),
    /// Accuracy against the number of bins of one source.
    BinsSweep(SweepArgs),
    /// Two-fold comparison of simple and supervised binning.
    Supervised(SweepArgs),
    /// Sweep SmartContext accuracy targets.
    Smartcontext(SmartArgs),
    /// Miss rates of the sample applications against their baselines.
    Apps(AppsArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub zipf: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "trace.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default, Clone)]
pub struct CommonArgs {
    /// Optional `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// web, phone or app.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub vocab_cap: Option<usize>,
    /// Comma-separated context sources, or `all`.
    #[arg(long)]
    pub sources: Option<String>,
    /// Bin count of every source without its own.
    #[arg(long)]
    pub bins: Option<usize>,
    /// `source=discretizer`, repeatable.
    #[arg(long = "discretizer", value_name = "SOURCE=KIND")]
    pub discretizers: Vec<String>,
    /// `source=n`, repeatable.
    #[arg(long = "source-bins", value_name = "SOURCE=N")]
    pub source_bins: Vec<String>,
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long, short = 'r')]
    pub responses: Option<usize>,
    /// Replace the depth-1 prior usage of `--kind` by auto-depth up to this depth.
    #[arg(long)]
    pub auto_depth: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<u64>,
    /// Use supervised binning for every source.
    #[arg(long)]
    pub supervised: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// loocv, twofold or duration.
    #[arg(long, default_value = "loocv")]
    pub protocol: String,
    /// Also write a per-user accuracy density.
    #[arg(long)]
    pub kde: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// The single source swept.
    #[arg(long)]
    pub source: Option<String>,
    /// Comma-separated bin counts.
    #[arg(long)]
    pub bins_list: Option<String>,
}

#[derive(Debug, Args)]
pub struct SmartArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated ascending targets in [0, 1].
    #[arg(long)]
    pub targets: Option<String>,
    /// `source=joules`, repeatable.
    #[arg(long = "cost", value_name = "SOURCE=J")]
    pub costs: Vec<String>,
    #[arg(long)]
    pub gps_cost: Option<f64>,
    #[arg(long)]
    pub cell_cost: Option<f64>,
    #[arg(long)]
    pub accel_cost: Option<f64>,
    /// CSV path; defaults to a file in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AppsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// One application, or all five when absent.
    #[arg(long)]
    pub app: Option<String>,
}

/// Resolved settings shared by the subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub trace: Option<PathBuf>,
    pub kind: UsageKind,
    pub vocab_cap: usize,
    pub sources: Vec<SourceSpec>,
    pub rule: Rule,
    pub responses: Option<usize>,
    pub auto_depth: Option<usize>,
    pub min_samples: u64,
    pub supervised: bool,
    pub costs: CostModel,
    pub targets: Vec<f64>,
    pub bins_list: Vec<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trace: None,
            kind: UsageKind::App,
            vocab_cap: DEFAULT_VOCAB_CAP,
            sources: EstimatorSpec::all_sources(DEFAULT_BINS).sources,
            rule: Rule::Bayes,
            responses: None,
            auto_depth: None,
            min_samples: crate::estimate::DEFAULT_MIN_SAMPLES,
            supervised: false,
            costs: CostModel::default(),
            targets: (0..=10).map(|i| i as f64 / 10.0).collect(),
            bins_list: vec![1, 2, 3, 4, 6, 8, 10, 15, 20],
            seed: 0,
            out_dir: PathBuf::from("."),
            jobs: None,
        }
    }
}

pub const DEFAULT_BINS: usize = 10;

impl RunConfig {
    pub fn r(&self) -> usize {
        self.responses.unwrap_or(1)
    }

    pub fn trace_path(&self) -> CliResult<&Path> {
        self.trace.as_deref().ok_or_else(|| usage("no trace given (--trace or `trace =` in the config)"))
    }

    pub fn estimator_spec(&self) -> EstimatorSpec {
        let auto = self.auto_depth.map(|d| AutoDepthSpec {
            min_samples: self.min_samples,
            ..AutoDepthSpec::new(self.kind, d, self.bins_of(SourceId::prior(self.kind)))
        });
        EstimatorSpec::new(self.sources.clone())
            .with_rule(self.rule)
            .with_supervised(self.supervised)
            .with_auto_depth(auto)
            .with_seed(self.seed)
    }

    fn bins_of(&self, source: SourceId) -> usize {
        self.sources
            .iter()
            .find(|s| s.source == source)
            .map_or(DEFAULT_BINS, |s| s.bins)
    }

    /// Name used in output files: the single source, `all`, or the sources
    /// joined by `+`.
    pub fn source_label(&self) -> String {
        let ids: Vec<SourceId> = self.sources.iter().map(|s| s.source).collect();
        if ids.len() == SourceId::ALL.len() && SourceId::ALL.iter().all(|s| ids.contains(s)) {
            return "all".into();
        }
        if ids.is_empty() {
            return "none".into();
        }
        ids.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("+")
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn read_config(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.trim().parse().map_err(|_| usage(format!("{key}: cannot parse {v:?}")))
}

fn parse_with<T>(key: &str, v: &str, f: impl Fn(&str) -> crate::Result<T>) -> CliResult<T> {
    f(v.trim()).map_err(|e| usage(format!("{key}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_sources(v: &str) -> CliResult<Vec<SourceId>> {
    if v.trim() == "all" {
        return Ok(SourceId::ALL.to_vec());
    }
    if v.trim() == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_with("sources", s, |x| x.parse()))
        .collect()
}

fn split_pair<'a>(key: &str, v: &'a str) -> CliResult<(&'a str, &'a str)> {
    v.split_once('=')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| usage(format!("{key}: expected SOURCE=VALUE, got {v:?}")))
}

/// Collects settings from config-file entries and then flags, so flags win.
#[derive(Default)]
struct Builder {
    trace: Option<PathBuf>,
    kind: Option<UsageKind>,
    vocab_cap: Option<usize>,
    sources: Option<Vec<SourceId>>,
    bins: Option<usize>,
    discretizers: BTreeMap<SourceId, BinningKind>,
    source_bins: BTreeMap<SourceId, usize>,
    rule: Option<Rule>,
    responses: Option<usize>,
    auto_depth: Option<usize>,
    min_samples: Option<u64>,
    supervised: Option<bool>,
    costs: BTreeMap<SourceId, f64>,
    targets: Option<Vec<f64>>,
    bins_list: Option<Vec<usize>>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
}

impl Builder {
    fn apply_file(&mut self, entries: &BTreeMap<String, String>) -> CliResult<()> {
        for (k, v) in entries {
            match k.as_str() {
                "trace" => self.trace = Some(PathBuf::from(v)),
                "kind" => self.kind = Some(parse_with(k, v, |x| x.parse())?),
                "vocab_cap" => self.vocab_cap = Some(parse(k, v)?),
                "sources" => self.sources = Some(parse_sources(v)?),
                "bins" => self.bins = Some(parse(k, v)?),
                "rule" => self.rule = Some(parse_with(k, v, |x| x.parse())?),
                "responses" | "r" => self.responses = Some(parse(k, v)?),
                "auto_depth" => self.auto_depth = Some(parse(k, v)?),
                "min_samples" => self.min_samples = Some(parse(k, v)?),
                "supervised" => self.supervised = Some(parse(k, v)?),
                "targets" => self.targets = Some(parse_list(k, v)?),
                "bins_list" => self.bins_list = Some(parse_list(k, v)?),
                "seed" => self.seed = Some(parse(k, v)?),
                "out_dir" => self.out_dir = Some(PathBuf::from(v)),
                "jobs" => self.jobs = Some(parse(k, v)?),
                other => {
                    if let Some(s) = other.strip_prefix("discretizer.") {
                        let src: SourceId = parse_with(k, s, |x| x.parse())?;
                        self.discretizers.insert(src, parse_with(k, v, |x| x.parse())?);
                    } else if let Some(s) = other.strip_prefix("bins.") {
                        let src: SourceId = parse_with(k, s, |x| x.parse())?;
                        self.source_bins.insert(src, parse(k, v)?);
                    } else if let Some(s) = other.strip_prefix("cost.") {
                        let src: SourceId = parse_with(k, s, |x| x.parse())?;
                        self.costs.insert(src, parse(k, v)?);
                    } else if !other.starts_with("synth.") {
                        return Err(usage(format!("unknown config key {other:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, a: &CommonArgs) -> CliResult<()> {
        if let Some(v) = &a.trace {
            self.trace = Some(v.clone());
        }
        if let Some(v) = &a.kind {
            self.kind = Some(parse_with("--kind", v, |x| x.parse())?);
        }
        if a.vocab_cap.is_some() {
            self.vocab_cap = a.vocab_cap;
        }
        if let Some(v) = &a.sources {
            self.sources = Some(parse_sources(v)?);
        }
        if a.bins.is_some() {
            self.bins = a.bins;
        }
        for d in &a.discretizers {
            let (s, k) = split_pair("--discretizer", d)?;
            self.discretizers.insert(
                parse_with("--discretizer", s, |x| x.parse())?,
                parse_with("--discretizer", k, |x| x.parse())?,
            );
        }
        for d in &a.source_bins {
            let (s, n) = split_pair("--source-bins", d)?;
            self.source_bins
                .insert(parse_with("--source-bins", s, |x| x.parse())?, parse("--source-bins", n)?);
        }
        if let Some(v) = &a.rule {
            self.rule = Some(parse_with("--rule", v, |x| x.parse())?);
        }
        if a.responses.is_some() {
            self.responses = a.responses;
        }
        if a.auto_depth.is_some() {
            self.auto_depth = a.auto_depth;
        }
        if a.min_samples.is_some() {
            self.min_samples = a.min_samples;
        }
        if a.supervised {
            self.supervised = Some(true);
        }
        if a.seed.is_some() {
            self.seed = a.seed;
        }
        if let Some(v) = &a.out_dir {
            self.out_dir = Some(v.clone());
        }
        if a.jobs.is_some() {
            self.jobs = a.jobs;
        }
        Ok(())
    }

    fn finish(self) -> CliResult<RunConfig> {
        let d = RunConfig::default();
        let bins = self.bins.unwrap_or(DEFAULT_BINS);
        let ids = self.sources.unwrap_or_else(|| SourceId::ALL.to_vec());
        for s in self.discretizers.keys().chain(self.source_bins.keys()) {
            if !ids.contains(s) {
                return Err(usage(format!("{s} is configured but not among the sources")));
            }
        }
        let mut sources = Vec::with_capacity(ids.len());
        for s in ids {
            let discretizer = self.discretizers.get(&s).copied().unwrap_or_else(|| BinningKind::default_for(s));
            if discretizer != BinningKind::Supervised && !discretizer.fits(s.shape()) {
                return Err(usage(format!("discretizer {} does not apply to {s}", discretizer.as_str())));
            }
            let n = self.source_bins.get(&s).copied().unwrap_or(bins);
            if n == 0 {
                return Err(usage(format!("{s}: bin count must be at least 1")));
            }
            sources.push(SourceSpec::with(s, discretizer, n));
        }
        let mut costs = CostModel::default();
        for (s, c) in self.costs {
            costs.set(s, c).map_err(|e| usage(e.to_string()))?;
        }
        costs.validate().map_err(|e| usage(e.to_string()))?;
        if self.responses == Some(0) {
            return Err(usage("responses must be at least 1"));
        }
        if self.auto_depth == Some(0) {
            return Err(usage("auto depth must be at least 1"));
        }
        let targets = self.targets.unwrap_or(d.targets);
        if targets.iter().any(|t| !(0.0..=1.0).contains(t)) || targets.windows(2).any(|w| w[1] < w[0]) {
            return Err(usage("targets must be ascending values in [0, 1]"));
        }
        let bins_list = self.bins_list.unwrap_or(d.bins_list);
        if bins_list.is_empty() || bins_list.contains(&0) {
            return Err(usage("bin counts must be positive"));
        }
        let vocab_cap = self.vocab_cap.unwrap_or(d.vocab_cap);
        if vocab_cap == 0 {
            return Err(usage("vocab cap must be at least 1"));
        }
        Ok(RunConfig {
            trace: self.trace,
            kind: self.kind.unwrap_or(d.kind),
            vocab_cap,
            sources,
            rule: self.rule.unwrap_or(d.rule),
            responses: self.responses,
            auto_depth: self.auto_depth,
            min_samples: self.min_samples.unwrap_or(d.min_samples),
            supervised: self.supervised.unwrap_or(false),
            costs,
            targets,
            bins_list,
            seed: self.seed.unwrap_or(d.seed),
            out_dir: self.out_dir.unwrap_or(d.out_dir),
            jobs: self.jobs,
        })
    }
}

/// Builds the run configuration from an optional config file and flags.
pub fn resolve(common: &CommonArgs, extra: impl FnOnce(&mut BTreeMap<String, String>)) -> CliResult<RunConfig> {
    let mut entries = match &common.config {
        Some(p) => read_config(p)?,
        None => BTreeMap::new(),
    };
    extra(&mut entries);
    let mut b = Builder::default();
    b.apply_file(&entries)?;
    b.apply_flags(common)?;
    b.finish()
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // a pool may already exist when called twice in one process
        if rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_err() {
            log::debug!("rayon pool already initialised");
        }
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(Error::Io { path: dir.into(), source: e }))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn load_trace(cfg: &RunConfig) -> CliResult<Trace> {
    Ok(Trace::read(cfg.trace_path()?)?)
}

/// Runs the binary on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("run `smartctx --help` for usage");
            }
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::BinsSweep(a) => cmd_bins_sweep(&a),
        Command::Supervised(a) => cmd_supervised(&a),
        Command::Smartcontext(a) => cmd_smartcontext(&a),
        Command::Apps(a) => cmd_apps(&a),
    }
}

/// Synthetic configuration from `synth.<field> = value` config lines and
/// flags.
pub fn synth_config(a: &SynthArgs) -> CliResult<SynthConfig> {
    let mut c = SynthConfig::default();
    if let Some(p) = &a.config {
        let entries = read_config(p)?;
        let mut obj = serde_json::to_value(&c).map_err(Error::from)?;
        for (k, v) in &entries {
            let Some(field) = k.strip_prefix("synth.") else {
                continue;
            };
            let slot = obj
                .get_mut(field)
                .ok_or_else(|| usage(format!("unknown synth setting {field:?}")))?;
            *slot = if slot.is_array() {
                serde_json::Value::Array(
                    parse_list::<f64>(k, v)?
                        .into_iter()
                        .map(|x| serde_json::json!(x as u64))
                        .collect(),
                )
            } else if slot.is_string() {
                serde_json::Value::String(v.clone())
            } else {
                serde_json::from_str(v).map_err(|_| usage(format!("{k}: cannot parse {v:?}")))?
            };
        }
        c = serde_json::from_value(obj).map_err(|e| usage(format!("synth settings: {e}")))?;
    }
    if let Some(v) = a.users {
        c.n_users = v;
    }
    if let Some(v) = a.scale {
        c.scale = v;
    }
    if let Some(v) = a.lambda {
        c.lambda = v;
    }
    if let Some(v) = a.zipf {
        c.zipf_exponent = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    Ok(c)
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let c = synth_config(a)?;
    set_jobs(a.jobs);
    let (trace, model) = generate(&c)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let model_path = write_synth(&trace, &model, &a.out)?;
    println!(
        "wrote {} events for {} users to {} (model {})",
        trace.event_count(),
        trace.users.len(),
        a.out.display(),
        model_path.display()
    );
    Ok(())
}

/// One user's fitted estimator as written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedUser {
    pub user: String,
    pub estimator: CombinedEstimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub kind: UsageKind,
    pub spec: EstimatorSpec,
    pub users: Vec<TrainedUser>,
}

fn cmd_train(a: &CommonArgs) -> CliResult<()> {
    let cfg = resolve(a, |_| {})?;
    set_jobs(cfg.jobs);
    let trace = load_trace(&cfg)?;
    let spec = cfg.estimator_spec();
    let users = user_data(&trace, cfg.kind, cfg.vocab_cap)?;
    let fitted = per_user(&users, |u| {
        let (kept, _) = u.kept();
        Ok(TrainedUser {
            user: u.user.clone(),
            estimator: fit_estimator(&spec, &kept, &u.vocab)?,
        })
    })?;
    let models = TrainedModels {
        kind: cfg.kind,
        spec,
        users: fitted,
    };
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("model_{}_{}.json", cfg.kind, cfg.source_label()));
    let json = serde_json::to_string(&models).map_err(Error::from)?;
    fs::write(&path, json).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!("trained {} {} estimators; wrote {}", models.users.len(), cfg.kind, path.display());
    Ok(())
}

/// Mean accuracy of one fraction of the duration protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationRow {
    pub fraction: f64,
    pub accuracy: f64,
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeRow {
    pub x: f64,
    pub density: f64,
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = resolve(&a.common, |_| {})?;
    set_jobs(cfg.jobs);
    let trace = load_trace(&cfg)?;
    let spec = cfg.estimator_spec();
    let r = cfg.r();
    ensure_dir(&cfg.out_dir)?;
    let label = cfg.source_label();
    let per_user_rows: Vec<UserAccuracy> = match a.protocol.as_str() {
        "loocv" => loocv_report(&trace, cfg.kind, &spec, cfg.vocab_cap, r)?.per_user,
        "twofold" => {
            let users = user_data(&trace, cfg.kind, cfg.vocab_cap)?;
            let spec = spec.clone();
            per_user(&users, |u| {
                let all = u.all();
                let tf = two_fold_eval(&all, &spec, cfg.supervised, cfg.vocab_cap, r)?;
                Ok(UserAccuracy {
                    user: u.user.clone(),
                    events: all.len(),
                    accuracy: tf.mean,
                    dropped_fraction: 0.0,
                })
            })?
        }
        "duration" => {
            let users = user_data(&trace, cfg.kind, cfg.vocab_cap)?;
            let points = per_user(&users, |u| {
                duration_split_eval(&u.all(), &DURATION_FRACTIONS, &spec, cfg.vocab_cap, r)
            })?;
            let rows: Vec<DurationRow> = DURATION_FRACTIONS
                .iter()
                .enumerate()
                .map(|(i, &f)| {
                    let accs: Vec<f64> = points.iter().filter_map(|p| p[i].accuracy).collect();
                    DurationRow {
                        fraction: f,
                        accuracy: mean(accs.iter().copied()),
                        users: accs.len(),
                    }
                })
                .collect();
            let path = cfg.out_dir.join(harness::output_name("duration", &label, r));
            harness::write_csv_file(&rows, &path)?;
            for row in &rows {
                println!("duration {} r={r} fraction={:.4} mean_accuracy={:.6}", cfg.kind, row.fraction, row.accuracy);
            }
            return Ok(());
        }
        other => return Err(usage(format!("unknown protocol {other:?}; expected loocv, twofold or duration"))),
    };
    let path = cfg.out_dir.join(harness::output_name(&a.protocol, &label, r));
    harness::write_csv_file(&per_user_rows, &path)?;
    let m = mean(per_user_rows.iter().map(|u| u.accuracy));
    println!(
        "{} {} r={r} mean_accuracy={m:.6} users={}",
        a.protocol,
        cfg.kind,
        per_user_rows.len()
    );
    if a.kde && !per_user_rows.is_empty() {
        let accs: Vec<f64> = per_user_rows.iter().map(|u| u.accuracy).collect();
        let curve = per_user_kde(&accs, DEFAULT_BANDWIDTH)?;
        let rows: Vec<KdeRow> = curve
            .grid
            .iter()
            .zip(&curve.density)
            .map(|(&x, &density)| KdeRow { x, density })
            .collect();
        harness::write_csv_file(&rows, &cfg.out_dir.join(harness::output_name("kde", &label, r)))?;
    }
    Ok(())
}

fn sweep_source(a: &SweepArgs, cfg: &RunConfig) -> CliResult<SourceSpec> {
    let src: SourceId = match &a.source {
        Some(s) => parse_with("--source", s, |x| x.parse())?,
        None => match cfg.sources.as_slice() {
            [one] => one.source,
            _ => return Err(usage("choose the swept source with --source")),
        },
    };
    let base = cfg.sources.iter().find(|s| s.source == src).copied();
    Ok(base.unwrap_or_else(|| SourceSpec::new(src, DEFAULT_BINS)))
}

fn sweep_config(a: &SweepArgs) -> CliResult<RunConfig> {
    let bins_list = a.bins_list.clone();
    resolve(&a.common, |e| {
        if let Some(b) = bins_list {
            e.insert("bins_list".into(), b);
        }
    })
}

/// Mean over users of one point of a bins sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinsRow {
    pub bins: usize,
    pub accuracy: f64,
    pub samples_per_bin: f64,
    pub flagged: bool,
    pub users: usize,
}

fn cmd_bins_sweep(a: &SweepArgs) -> CliResult<()> {
    let cfg = sweep_config(a)?;
    set_jobs(cfg.jobs);
    let src = sweep_source(a, &cfg)?;
    let trace = load_trace(&cfg)?;
    let r = cfg.r();
    let users = user_data(&trace, cfg.kind, cfg.vocab_cap)?;
    let curves = per_user(&users, |u| {
        bins_sweep(&u.all(), &u.vocab, src.source, src.discretizer, &cfg.bins_list, r, cfg.seed)
    })?;
    let rows: Vec<BinsRow> = cfg
        .bins_list
        .iter()
        .filter_map(|&n| {
            let pts: Vec<_> = curves.iter().filter_map(|c| c.iter().find(|p| p.bins == n)).collect();
            if pts.is_empty() {
                return None;
            }
            let samples = mean(pts.iter().map(|p| p.samples_per_bin));
            Some(BinsRow {
                bins: n,
                accuracy: mean(pts.iter().map(|p| p.accuracy)),
                samples_per_bin: samples,
                flagged: pts.iter().any(|p| p.flagged),
                users: pts.len(),
            })
        })
        .collect();
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(harness::output_name("bins", src.source.as_str(), r));
    harness::write_csv_file(&rows, &path)?;
    for row in &rows {
        println!(
            "bins {} {} r={r} bins={} mean_accuracy={:.6}{}",
            cfg.kind,
            src.source,
            row.bins,
            row.accuracy,
            if row.flagged { " (fewer than 10 samples per bin)" } else { "" }
        );
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedRow {
    pub bins: usize,
    pub simple: f64,
    pub supervised: f64,
    pub users: usize,
}

fn cmd_supervised(a: &SweepArgs) -> CliResult<()> {
    let cfg = sweep_config(a)?;
    set_jobs(cfg.jobs);
    let trace = load_trace(&cfg)?;
    let r = cfg.r();
    let users = user_data(&trace, cfg.kind, cfg.vocab_cap)?;
    let (label, base): (String, Vec<SourceSpec>) = match &a.source {
        Some(_) => {
            let s = sweep_source(a, &cfg)?;
            (s.source.as_str().to_string(), vec![s])
        }
        None => (cfg.source_label(), cfg.sources.clone()),
    };
    let mut rows = Vec::new();
    for &n in &cfg.bins_list {
        let sources = base.iter().map(|s| SourceSpec { bins: n, ..*s }).collect();
        let spec = EstimatorSpec::new(sources).with_rule(cfg.rule).with_seed(cfg.seed);
        let pairs = per_user(&users, |u| {
            let all = u.all();
            let simple = two_fold_eval(&all, &spec, false, cfg.vocab_cap, r);
            let sup = two_fold_eval(&all, &spec, true, cfg.vocab_cap, r);
            match (simple, sup) {
                (Ok(a), Ok(b)) => Ok(Some((a.mean, b.mean))),
                (Err(e), _) | (_, Err(e)) => match e {
                    Error::TooFewDistinct { .. } | Error::DegenerateRange(..) | Error::EmptyFold(_) => {
                        log::warn!("{}: {n} bins skipped: {e}", u.user);
                        Ok(None)
                    }
                    e => Err(e),
                },
            }
        })?;
        let pairs: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
        if pairs.is_empty() {
            continue;
        }
        let row = SupervisedRow {
            bins: n,
            simple: mean(pairs.iter().map(|p| p.0)),
            supervised: mean(pairs.iter().map(|p| p.1)),
            users: pairs.len(),
        };
        println!(
            "supervised {} {label} r={r} bins={n} simple={:.6} supervised={:.6}",
            cfg.kind, row.simple, row.supervised
        );
        rows.push(row);
    }
    ensure_dir(&cfg.out_dir)?;
    harness::write_csv_file(&rows, &cfg.out_dir.join(harness::output_name("supervised", &label, r)))?;
    Ok(())
}

fn cmd_smartcontext(a: &SmartArgs) -> CliResult<()> {
    let targets = a.targets.clone();
    let mut costs: Vec<(String, String)> = Vec::new();
    for c in &a.costs {
        let (s, j) = split_pair("--cost", c)?;
        costs.push((s.to_string(), j.to_string()));
    }
    for (name, v) in [("gps", a.gps_cost), ("cell", a.cell_cost), ("movement", a.accel_cost)] {
        if let Some(v) = v {
            costs.push((name.to_string(), v.to_string()));
        }
    }
    let cfg = resolve(&a.common, |e| {
        if let Some(t) = targets {
            e.insert("targets".into(), t);
        }
        for (s, j) in costs {
            e.insert(format!("cost.{s}"), j);
        }
    })?;
    set_jobs(cfg.jobs);
    let trace = load_trace(&cfg)?;
    let r = cfg.r();
    let spec = cfg.estimator_spec();
    let users = user_data(&trace, cfg.kind, cfg.vocab_cap)?;
    let kept: Vec<Vec<&LabeledEvent>> = users.iter().map(|u| u.kept().0).collect();
    let mut policies = Vec::new();
    for (u, events) in users.iter().zip(&kept) {
        let (train, test) = match harness::split_at_midpoint(events) {
            Ok(x) => x,
            Err(e) => {
                log::warn!("{}: skipped: {e}", u.user);
                continue;
            }
        };
        policies.push((SmartContextPolicy::train(&spec, &train, &u.vocab, cfg.costs.clone(), r)?, test));
    }
    let runs: Vec<(&SmartContextPolicy, &[&LabeledEvent])> =
        policies.iter().map(|(p, t)| (p, t.as_slice())).collect();
    let stats = sweep_pooled(&runs, &cfg.targets)?;
    let rows: Vec<SweepRow> = stats.iter().map(|s| s.row.clone()).collect();
    let path = match &a.out {
        Some(p) => p.clone(),
        None => {
            ensure_dir(&cfg.out_dir)?;
            cfg.out_dir.join(harness::output_name("smartcontext", &cfg.source_label(), r))
        }
    };
    harness::write_csv_file(&rows, &path)?;
    for row in &rows {
        println!(
            "smartcontext {} r={r} target={:.3} hit_rate={:.6} energy_j={:.3}",
            cfg.kind, row.target, row.acc_hit_rate, row.mean_energy_j
        );
    }
    Ok(())
}

fn cmd_apps(a: &AppsArgs) -> CliResult<()> {
    let cfg = resolve(&a.common, |_| {})?;
    set_jobs(cfg.jobs);
    let apps: Vec<SampleApp> = match &a.app {
        Some(s) => vec![parse_with("--app", s, |x| x.parse())?],
        None => SampleApp::ALL.to_vec(),
    };
    let explicit_sources = a.common.sources.is_some()
        || a.common
            .config
            .as_ref()
            .map(|p| read_config(p).map(|e| e.contains_key("sources")))
            .transpose()?
            .unwrap_or(false);
    let trace = load_trace(&cfg)?;
    ensure_dir(&cfg.out_dir)?;
    for app in apps {
        let r = cfg.responses.unwrap_or_else(|| app.default_r());
        let spec = if explicit_sources {
            cfg.estimator_spec()
        } else {
            let bins = a.common.bins.unwrap_or(DEFAULT_BINS);
            app.default_spec(bins).with_rule(cfg.rule).with_seed(cfg.seed)
        };
        let users = user_data(&trace, app.kind(), cfg.vocab_cap)?;
        let rates = per_user(&users, |u| {
            if u.events.len() < 2 {
                return Ok(None);
            }
            sample_app_eval(&u.all(), app, r, &spec, cfg.vocab_cap).map(Some)
        })?;
        let rates: Vec<_> = rates.into_iter().flatten().collect();
        harness::write_csv_file(&rates, &cfg.out_dir.join(harness::output_name("apps", app.as_str(), r)))?;
        println!(
            "apps {app} r={r} context_aware={:.6} static_top={:.6} recency={:.6} mru={:.6} users={}",
            mean(rates.iter().map(|x| x.context_aware)),
            mean(rates.iter().map(|x| x.static_top)),
            mean(rates.iter().map(|x| x.recency)),
            mean(rates.iter().map(|x| x.mru)),
            rates.len()
        );
    }
    Ok(())
}
