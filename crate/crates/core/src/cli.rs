//! The `naopc` command line: `limits`, `score`, `rank` and `curve`.
//!
//! Exit codes: 0 success, 1 other failure (including instances marked
//! `FAILED`), 2 unparsable input, 3 exact or beam cap exceeded, 4 model
//! server failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::attribution::{exact_shapley, occlusion1, random_attribution};
use crate::cache::EvalCache;
use crate::curve::{aopc, comprehensiveness, rank as rank_features, sufficiency, RankPolicy};
use crate::error::{Error, EvaluationFailure, ValueError};
use crate::io::{read_attributions, read_results, write_results, Flag, ResultRow, ValueTable};
use crate::limits::{
    auto_beam_size, beam_limits, exhaustive_limits_with_cap, AutoBeamConfig, BeamTrace, DEFAULT_EXACT_CAP,
};
use crate::normalize::normalize;
use crate::rank::{kendall_tau, Metric};
use crate::server::{ClientOptions, ServerClient, SERVER_ENV};
use crate::toy::{BuiltinModel, GateToyModel, LinearToyModel, RandomSetFunction};
use crate::types::{AopcLimits, AttributionVector, FeatureOrdering, Instance};
use crate::value::ValueFunction;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_CAP: i32 = 3;
pub const EXIT_SERVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "naopc", version, about = "Normalized AOPC faithfulness metrics")]
pub struct Cli {
    /// Append a timestamped record of the invocation to this file.
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lower and upper AOPC limits per instance.
    Limits(LimitsArgs),
    /// Comprehensiveness and sufficiency, optionally normalized.
    Score(ScoreArgs),
    /// Rankings and Kendall tau between results files.
    Rank(RankArgs),
    /// Per-step perturbation curve as CSV.
    Curve(CurveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    F1,
    F2,
    F3,
    F4,
    /// Precomputed value table (`--input`).
    Table,
    /// External model server (`--server` or the environment).
    Server,
    /// Seeded random set function (`--n`, `--seed`).
    Random,
    /// Seeded random gate circuit (`--n`, `--seed`).
    Gates,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Value table file for `--model table`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Feature values of the input for f1..f4 (default all ones).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Option<Vec<f64>>,
    /// Feature count of random models.
    #[arg(long, default_value_t = 6)]
    pub n: usize,
    /// Seed for every stochastic component.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Server address: tcp:HOST:PORT, unix:PATH or cmd:COMMAND.
    #[arg(long)]
    pub server: Option<String>,
    /// Instance served by the model server, as ID:N. Repeatable.
    #[arg(long = "instance", value_name = "ID:N")]
    pub instances: Vec<String>,
    /// Requests per server frame.
    #[arg(long, default_value_t = crate::server::DEFAULT_BATCH)]
    pub batch_size: usize,
    /// Name written to the `model` column (defaults to the model kind).
    #[arg(long)]
    pub model_name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Beam,
}

#[derive(Debug, Args)]
pub struct LimitsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Exact)]
    pub method: MethodArg,
    /// Beam size, or `auto` to grow it until the limits stabilize.
    #[arg(long, default_value = "auto")]
    pub beam_size: String,
    /// Largest limit change that counts as stable for `--beam-size auto`.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1024)]
    pub max_beam: usize,
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    pub exact_cap: usize,
    /// Auto beam trace as CSV; written to stderr when omitted.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttributionMethod {
    GroundTruth,
    Occlusion,
    Shapley,
    Random,
}

impl AttributionMethod {
    fn name(self) -> &'static str {
        match self {
            Self::GroundTruth => "ground-truth",
            Self::Occlusion => "occlusion",
            Self::Shapley => "shapley",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Args)]
pub struct AttributionArgs {
    /// Attribution file.
    #[arg(long, conflicts_with = "attribution_method")]
    pub attributions: Option<PathBuf>,
    /// Attribution methods computed in-process. Repeatable or comma-separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub attribution_method: Vec<AttributionMethod>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub attribution: AttributionArgs,
    /// Results file holding limits per instance.
    #[arg(long, conflicts_with = "limit_method")]
    pub limits: Option<PathBuf>,
    /// Compute limits in-process instead of reading them.
    #[arg(long, value_enum)]
    pub limit_method: Option<MethodArg>,
    /// Beam size for `--limit-method beam`.
    #[arg(long, default_value_t = 8)]
    pub beam_size: usize,
    #[arg(long, default_value_t = DEFAULT_EXACT_CAP)]
    pub exact_cap: usize,
    /// Request normalized scores; instances without limits are flagged.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupArg {
    Model,
    Fa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolingArg {
    /// One score per subject: the mean over its instances.
    Mean,
    /// One score per (subject, instance).
    Pooled,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// One or two results files.
    #[arg(long, num_args = 1..=2, required = true)]
    pub results: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = GroupArg::Model)]
    pub group: GroupArg,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    /// Most important feature first.
    Comp,
    /// Least important feature first.
    Suff,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// 1-based removal order, applied to every instance.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["attributions", "attribution_method"])]
    pub ordering: Option<Vec<usize>>,
    #[command(flatten)]
    pub attribution: AttributionArgs,
    #[arg(long, value_enum, default_value_t = DirectionArg::Comp)]
    pub direction: DirectionArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_FAILURE, message)
    }

    /// An error about one instance; the message names it.
    fn instance(id: &str, e: Error) -> Self {
        Self::new(exit_code(&e), format!("instance `{id}`: {e}"))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_FAILURE, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. }
        | Error::MissingSubsets { .. }
        | Error::LengthMismatch { .. }
        | Error::InvalidOrdering { .. }
        | Error::IndexOutOfRange { .. }
        | Error::NonFiniteScore { .. }
        | Error::InvalidFeatureCount(_) => EXIT_PARSE,
        Error::FeatureCountExceedsExactCap { .. } | Error::MaxBeamExceeded { .. } => EXIT_CAP,
        Error::Server(_) => EXIT_SERVER,
        Error::Evaluation(ev) if is_server_failure(&ev.failure) => EXIT_SERVER,
        _ => EXIT_FAILURE,
    }
}

fn is_server_failure(f: &EvaluationFailure) -> bool {
    matches!(f, EvaluationFailure::Value(ValueError::Server(_)))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_PARSE;
            }
            let _ = write!(stdout, "{}", e.render());
            return 0;
        }
    };
    let mut diagnostics = Vec::new();
    let result = match &cli.command {
        Command::Limits(a) => run_limits(a, stdout, &mut diagnostics),
        Command::Score(a) => run_score(a, stdout, &mut diagnostics),
        Command::Rank(a) => run_rank(a, stdout),
        Command::Curve(a) => run_curve(a, stdout),
    };
    for w in &diagnostics {
        let _ = writeln!(stderr, "{w}");
    }
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    };
    if let Some(path) = &cli.log {
        if let Err(e) = append_log(path, &args, code) {
            let _ = writeln!(stderr, "warning: cannot write log {}: {e}", path.display());
        }
    }
    code
}

/// Entry point for the `naopc` binary.
pub fn main() -> ! {
    let code = run(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code)
}

fn append_log(path: &Path, args: &[OsString], code: i32) -> std::io::Result<()> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{secs}\t{}\texit={code}", argv.join(" "))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::new(EXIT_PARSE, format!("cannot read {}: {e}", path.display())))
}

fn in_file(path: &Path, e: Error) -> CliError {
    CliError::new(exit_code(&e), format!("{}: {e}", path.display()))
}

/// Writes to `--out` when given, otherwise to stdout.
fn emit(out: Option<&Path>, stdout: &mut dyn Write, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display()))),
        None => Ok(stdout.write_all(bytes)?),
    }
}

struct LoadedModel {
    name: String,
    value: Box<dyn ValueFunction>,
    instances: Vec<Instance>,
    table: Option<Arc<ValueTable>>,
    linear: Option<LinearToyModel>,
}

impl LoadedModel {
    fn load(args: &ModelArgs, attribution_ids: Option<Vec<(String, usize)>>) -> CliResult<Self> {
        let mut linear = None;
        let mut table = None;
        let (name, value, instances): (String, Box<dyn ValueFunction>, Vec<Instance>) = match args.model {
            ModelKind::F1 | ModelKind::F2 | ModelKind::F3 | ModelKind::F4 => {
                let builtin = match args.model {
                    ModelKind::F1 => BuiltinModel::F1,
                    ModelKind::F2 => BuiltinModel::F2,
                    ModelKind::F3 => BuiltinModel::F3,
                    _ => BuiltinModel::F4,
                };
                let values = args.x.clone().unwrap_or_else(|| vec![1.0; 4]);
                if values.len() != 4 {
                    return Err(CliError::new(
                        EXIT_PARSE,
                        format!("--x needs 4 values for {builtin}, got {}", values.len()),
                    ));
                }
                linear = builtin.linear();
                let x = Instance::with_values("x0", &values)?;
                (builtin.name().to_string(), Box::new(builtin.model()), vec![x])
            }
            ModelKind::Random => {
                let f = RandomSetFunction::new(args.n, args.seed)?;
                let x = f.instance("x0");
                (format!("random-n{}-s{}", args.n, args.seed), Box::new(f), vec![x])
            }
            ModelKind::Gates => {
                let f = GateToyModel::random(args.n, args.seed)?;
                let x = Instance::with_values("x0", &vec![1.0; args.n])?;
                (format!("gates-n{}-s{}", args.n, args.seed), Box::new(f), vec![x])
            }
            ModelKind::Table => {
                let path = args
                    .input
                    .as_deref()
                    .ok_or_else(|| CliError::usage("--model table needs --input VALUE_TABLE"))?;
                let t = Arc::new(ValueTable::read(open(path)?).map_err(|e| in_file(path, e))?);
                let instances = t.instances();
                let stem = path.file_stem().map_or("table".into(), |s| s.to_string_lossy().into_owned());
                table = Some(Arc::clone(&t));
                (stem, Box::new(t), instances)
            }
            ModelKind::Server => {
                let address = match &args.server {
                    Some(a) => a.clone(),
                    None => std::env::var(SERVER_ENV).map_err(|_| {
                        CliError::usage(format!("--model server needs --server ADDRESS or {SERVER_ENV}"))
                    })?,
                };
                let options = ClientOptions {
                    batch_size: args.batch_size,
                    record_transcript: false,
                };
                let client = ServerClient::connect(&address, options)?;
                let specs = if !args.instances.is_empty() {
                    args.instances.iter().map(|s| parse_instance_spec(s)).collect::<CliResult<Vec<_>>>()?
                } else {
                    attribution_ids
                        .clone()
                        .ok_or_else(|| CliError::usage("--model server needs --instance ID:N"))?
                };
                let instances = specs
                    .into_iter()
                    .map(|(id, n)| Instance::new(id, n, crate::types::Payload::None))
                    .collect::<Result<Vec<_>, _>>()?;
                ("server".to_string(), Box::new(client), instances)
            }
        };
        Ok(Self {
            name: args.model_name.clone().unwrap_or(name),
            value,
            instances,
            table,
            linear,
        })
    }
}

fn parse_instance_spec(s: &str) -> CliResult<(String, usize)> {
    let bad = || CliError::new(EXIT_PARSE, format!("bad --instance `{s}`, expected ID:N"));
    let (id, n) = s.rsplit_once(':').ok_or_else(bad)?;
    let n = n.parse().map_err(|_| bad())?;
    if id.is_empty() {
        return Err(bad());
    }
    Ok((id.to_string(), n))
}

/// Instances whose evaluation failed, and whether any failure came from the server.
#[derive(Default)]
struct Failures {
    count: usize,
    server: bool,
}

impl Failures {
    fn record(&mut self, row: &mut ResultRow, e: &Error, diagnostics: &mut Vec<String>) {
        self.count += 1;
        self.server |= exit_code(e) == EXIT_SERVER;
        row.flags.push(Flag::Failed);
        diagnostics.push(format!("warning: instance `{}` failed: {e}", row.instance_id));
    }

    fn exit_code(&self) -> i32 {
        match (self.count, self.server) {
            (0, _) => 0,
            (_, true) => EXIT_SERVER,
            _ => EXIT_FAILURE,
        }
    }
}

/// Errors that fail one instance rather than the whole run.
fn is_instance_failure(e: &Error) -> bool {
    matches!(e, Error::Evaluation(_))
}

fn run_limits(args: &LimitsArgs, stdout: &mut dyn Write, diagnostics: &mut Vec<String>) -> CliResult<i32> {
    let model = LoadedModel::load(&args.model, None)?;
    let beam = match (args.method, args.beam_size.as_str()) {
        (MethodArg::Exact, _) => None,
        (MethodArg::Beam, "auto") => Some(None),
        (MethodArg::Beam, b) => Some(Some(b.parse::<usize>().map_err(|_| {
            CliError::new(EXIT_PARSE, format!("--beam-size must be a positive integer or `auto`, got `{b}`"))
        })?)),
    };
    let auto = AutoBeamConfig {
        threshold: args.threshold,
        max_beam: args.max_beam,
        ..AutoBeamConfig::default()
    };
    let cache = EvalCache::new();
    let mut rows = Vec::new();
    let mut traces: Vec<(String, BeamTrace)> = Vec::new();
    let mut failures = Failures::default();
    for x in &model.instances {
        let mut row = ResultRow::new(x.id());
        row.model = Some(model.name.clone());
        let result = match beam {
            None => {
                if let Some(t) = &model.table {
                    t.require_complete(x.id()).map_err(|e| CliError::instance(x.id(), e))?;
                }
                exhaustive_limits_with_cap(&*model.value, x, &cache, args.exact_cap)
            }
            Some(Some(b)) => beam_limits(&*model.value, x, b, &cache),
            Some(None) => auto_beam_size(&*model.value, x, auto, &cache).map(|o| {
                traces.push((x.id().to_string(), o.trace));
                o.limits
            }),
        };
        match result {
            Ok(limits) => row.set_limits(&limits),
            Err(e) if is_instance_failure(&e) => failures.record(&mut row, &e, diagnostics),
            Err(Error::MaxBeamExceeded { max_beam, trace }) => {
                traces.push((x.id().to_string(), *trace));
                write_trace(args.trace.as_deref(), &traces, diagnostics)?;
                return Err(CliError::new(
                    EXIT_CAP,
                    format!("instance `{}`: limits did not stabilize before beam size cap {max_beam}", x.id()),
                ));
            }
            Err(e) => return Err(CliError::instance(x.id(), e)),
        }
        rows.push(row);
    }
    if beam == Some(None) {
        write_trace(args.trace.as_deref(), &traces, diagnostics)?;
    }
    let mut buf = Vec::new();
    write_results(&mut buf, &rows)?;
    emit(args.out.as_deref(), stdout, &buf)?;
    Ok(failures.exit_code())
}

fn write_trace(path: Option<&Path>, traces: &[(String, BeamTrace)], diagnostics: &mut Vec<String>) -> CliResult<()> {
    match path {
        Some(path) => {
            let mut csv = String::from("instanceId,beamSize,lower,upper\n");
            for (id, trace) in traces {
                for s in trace {
                    csv.push_str(&format!("{id},{},{},{}\n", s.beam_size, s.lower, s.upper));
                }
            }
            std::fs::write(path, csv).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            for (id, trace) in traces {
                for s in trace {
                    diagnostics.push(format!(
                        "trace: instance `{id}` beam {}: lower {} upper {}",
                        s.beam_size, s.lower, s.upper
                    ));
                }
            }
            Ok(())
        }
    }
}

/// Attribution vectors per instance, in instance order, each with its method name.
fn collect_attributions(
    model: &LoadedModel,
    file: Option<&AttributionIndex>,
    methods: &[AttributionMethod],
    seed: u64,
    cache: &EvalCache,
    x: &Instance,
) -> std::result::Result<Vec<(String, AttributionVector)>, Error> {
    if let Some(file) = file {
        return file
            .get(x.id())
            .into_iter()
            .flatten()
            .map(|(method, scores)| Ok((method.clone(), AttributionVector::for_instance(scores.clone(), x)?)))
            .collect();
    }
    methods
        .iter()
        .map(|&m| {
            let e = match m {
                AttributionMethod::GroundTruth => model
                    .linear
                    .as_ref()
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!("ground-truth attributions exist only for linear models, not {}", model.name))
                    })?
                    .ground_truth_attribution(x)?,
                AttributionMethod::Occlusion => occlusion1(&*model.value, x, cache)?,
                AttributionMethod::Shapley => exact_shapley(&*model.value, x, cache)?,
                AttributionMethod::Random => random_attribution(x.feature_count(), seed)?,
            };
            Ok((m.name().to_string(), e))
        })
        .collect()
}

type AttributionIndex = BTreeMap<String, Vec<(String, Vec<f64>)>>;

fn load_attributions(args: &AttributionArgs) -> CliResult<Option<AttributionIndex>> {
    let Some(path) = &args.attributions else {
        if args.attribution_method.is_empty() {
            return Err(CliError::usage("need --attributions FILE or --attribution-method"));
        }
        return Ok(None);
    };
    let records = read_attributions(open(path)?).map_err(|e| in_file(path, e))?;
    let mut index = AttributionIndex::new();
    for r in records {
        index.entry(r.instance_id).or_default().push((r.method, r.scores));
    }
    Ok(Some(index))
}

fn check_attribution_ids(model: &LoadedModel, index: Option<&AttributionIndex>) -> CliResult<()> {
    if let Some(index) = index {
        for id in index.keys() {
            if !model.instances.iter().any(|x| x.id() == id) {
                return Err(CliError::new(
                    EXIT_PARSE,
                    format!("instance `{id}` in the attribution file is unknown to model {}", model.name),
                ));
            }
        }
    }
    Ok(())
}

fn ids_from_index(index: Option<&AttributionIndex>) -> Option<Vec<(String, usize)>> {
    index.map(|ix| {
        ix.iter()
            .map(|(id, recs)| (id.clone(), recs.first().map_or(0, |(_, s)| s.len())))
            .collect()
    })
}

fn load_limits(path: &Path) -> CliResult<BTreeMap<String, AopcLimits>> {
    let rows = read_results(open(path)?).map_err(|e| in_file(path, e))?;
    let mut out: BTreeMap<String, AopcLimits> = BTreeMap::new();
    for row in rows {
        let Some(limits) = row.limits().map_err(|e| in_file(path, e))? else {
            continue;
        };
        if let Some(prev) = out.get(&row.instance_id) {
            if prev.lower != limits.lower || prev.upper != limits.upper {
                return Err(CliError::new(
                    EXIT_PARSE,
                    format!("{}: conflicting limits for instance `{}`", path.display(), row.instance_id),
                ));
            }
            continue;
        }
        out.insert(row.instance_id.clone(), limits);
    }
    Ok(out)
}

fn run_score(args: &ScoreArgs, stdout: &mut dyn Write, diagnostics: &mut Vec<String>) -> CliResult<i32> {
    let index = load_attributions(&args.attribution)?;
    let model = LoadedModel::load(&args.model, ids_from_index(index.as_ref()))?;
    check_attribution_ids(&model, index.as_ref())?;
    let file_limits = args.limits.as_deref().map(load_limits).transpose()?;
    let wants_normalized = args.normalize || file_limits.is_some() || args.limit_method.is_some();
    let cache = EvalCache::new();
    let mut rows = Vec::new();
    let mut failures = Failures::default();

    for (i, x) in model.instances.iter().enumerate() {
        let seed = args.model.seed.wrapping_add(i as u64);
        let attributions = collect_attributions(
            &model,
            index.as_ref(),
            &args.attribution.attribution_method,
            seed,
            &cache,
            x,
        );
        let attributions = match attributions {
            Ok(a) => a,
            Err(e) if is_instance_failure(&e) => {
                let mut row = ResultRow::new(x.id());
                row.model = Some(model.name.clone());
                failures.record(&mut row, &e, diagnostics);
                rows.push(row);
                continue;
            }
            Err(e) => return Err(CliError::instance(x.id(), e)),
        };
        if attributions.is_empty() {
            continue;
        }
        let limits = match (&file_limits, args.limit_method) {
            (Some(map), _) => Ok(map.get(x.id()).cloned()),
            (None, Some(MethodArg::Exact)) => {
                if let Some(t) = &model.table {
                    t.require_complete(x.id()).map_err(|e| CliError::instance(x.id(), e))?;
                }
                exhaustive_limits_with_cap(&*model.value, x, &cache, args.exact_cap).map(Some)
            }
            (None, Some(MethodArg::Beam)) => beam_limits(&*model.value, x, args.beam_size, &cache).map(Some),
            (None, None) => Ok(None),
        };
        let scored = limits.and_then(|limits| {
            attributions
                .iter()
                .map(|(method, e)| {
                    let comp = comprehensiveness(&*model.value, x, e, &cache)?;
                    let suff = sufficiency(&*model.value, x, e, &cache)?;
                    Ok((method, comp, suff))
                })
                .collect::<Result<Vec<_>, Error>>()
                .map(|s| (limits, s))
        });
        match scored {
            Ok((limits, scores)) => {
                if wants_normalized && limits.is_none() {
                    diagnostics.push(format!("warning: no limits for instance `{}`; normalized scores omitted", x.id()));
                }
                for (method, comp, suff) in scores {
                    let mut row = ResultRow::new(x.id());
                    row.model = Some(model.name.clone());
                    row.method = Some(method.clone());
                    row.comp = Some(comp);
                    row.suff = Some(suff);
                    match &limits {
                        Some(l) => fill_normalized(&mut row, l, comp, suff),
                        None if wants_normalized => row.flags.push(Flag::MissingLimits),
                        None => {}
                    }
                    rows.push(row);
                }
            }
            Err(e) if is_instance_failure(&e) => {
                for (method, _) in &attributions {
                    let mut row = ResultRow::new(x.id());
                    row.model = Some(model.name.clone());
                    row.method = Some(method.clone());
                    row.flags.push(Flag::Failed);
                    rows.push(row);
                }
                failures.count += 1;
                failures.server |= exit_code(&e) == EXIT_SERVER;
                diagnostics.push(format!("warning: instance `{}` failed: {e}", x.id()));
            }
            Err(e) => return Err(CliError::instance(x.id(), e)),
        }
    }
    let mut buf = Vec::new();
    write_results(&mut buf, &rows)?;
    emit(args.out.as_deref(), stdout, &buf)?;
    Ok(failures.exit_code())
}

fn fill_normalized(row: &mut ResultRow, limits: &AopcLimits, comp: f64, suff: f64) {
    row.set_limits(limits);
    match (normalize(comp, limits), normalize(suff, limits)) {
        (Ok(nc), Ok(ns)) => {
            if nc.out_of_range() || ns.out_of_range() {
                row.flags.push(Flag::OutOfRange);
            }
            row.ncomp = Some(nc.value);
            row.nsuff = Some(ns.value);
        }
        _ => row.flags.push(Flag::Degenerate),
    }
}

fn run_curve(args: &CurveArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let index = if args.ordering.is_some() {
        None
    } else {
        load_attributions(&args.attribution)?
    };
    let model = LoadedModel::load(&args.model, ids_from_index(index.as_ref()))?;
    check_attribution_ids(&model, index.as_ref())?;
    let policy = match args.direction {
        DirectionArg::Comp => RankPolicy::DECREASING,
        DirectionArg::Suff => RankPolicy::INCREASING,
    };
    let cache = EvalCache::new();
    let mut csv = String::from("instanceId,method,step,feature,output,drop\n");
    for (i, x) in model.instances.iter().enumerate() {
        let orderings: Vec<(String, FeatureOrdering)> = match &args.ordering {
            Some(order) => {
                let r = FeatureOrdering::from_one_based(order).map_err(|e| CliError::instance(x.id(), e))?;
                if r.len() != x.feature_count() {
                    return Err(CliError::instance(
                        x.id(),
                        Error::LengthMismatch {
                            expected: x.feature_count(),
                            got: r.len(),
                        },
                    ));
                }
                vec![("ordering".to_string(), r)]
            }
            None => collect_attributions(
                &model,
                index.as_ref(),
                &args.attribution.attribution_method,
                args.model.seed.wrapping_add(i as u64),
                &cache,
                x,
            )
            .map_err(|e| CliError::instance(x.id(), e))?
            .into_iter()
            .map(|(m, e)| (m, rank_features(&e, policy)))
            .collect(),
        };
        for (method, r) in orderings {
            let (_, curve) = aopc(&*model.value, x, &r, &cache).map_err(|e| CliError::instance(x.id(), e))?;
            for (step, ((feature, drop), output)) in
                r.as_slice().iter().zip(&curve.drops).zip(curve.outputs()).enumerate()
            {
                csv.push_str(&format!(
                    "{},{method},{},{},{output},{drop}\n",
                    x.id(),
                    step + 1,
                    feature + 1
                ));
            }
        }
    }
    emit(args.out.as_deref(), stdout, csv.as_bytes())?;
    Ok(0)
}

/// Scores per subject and metric for one results file.
type SubjectScores = BTreeMap<String, BTreeMap<Metric, f64>>;

fn subject_scores(path: &Path, group: GroupArg, pooling: PoolingArg) -> CliResult<SubjectScores> {
    let rows = read_results(open(path)?).map_err(|e| in_file(path, e))?;
    let mut values: BTreeMap<String, BTreeMap<Metric, Vec<f64>>> = BTreeMap::new();
    for row in rows.iter().filter(|r| !r.has_flag(Flag::Failed)) {
        let subject = match group {
            GroupArg::Model => row.model.as_ref(),
            GroupArg::Fa => row.method.as_ref(),
        }
        .ok_or_else(|| {
            let field = if group == GroupArg::Model { "model" } else { "method" };
            CliError::new(
                EXIT_PARSE,
                format!("{}: row for instance `{}` has no {field}", path.display(), row.instance_id),
            )
        })?;
        let key = match pooling {
            PoolingArg::Mean => subject.clone(),
            PoolingArg::Pooled => {
                let other = match group {
                    GroupArg::Model => row.method.as_deref(),
                    GroupArg::Fa => row.model.as_deref(),
                };
                format!("{subject}@{}/{}", other.unwrap_or("-"), row.instance_id)
            }
        };
        let cells = values.entry(key).or_default();
        for (metric, v) in [
            (Metric::Comp, row.comp),
            (Metric::Suff, row.suff),
            (Metric::NComp, row.ncomp),
            (Metric::NSuff, row.nsuff),
        ] {
            if let Some(v) = v {
                cells.entry(metric).or_default().push(v);
            }
        }
    }
    Ok(values
        .into_iter()
        .map(|(s, cells)| {
            let means = cells
                .into_iter()
                .map(|(m, v)| (m, crate::curve::compensated_sum(v.iter().copied()) / v.len() as f64))
                .collect();
            (s, means)
        })
        .collect())
}

/// Paired scores of the subjects that have both metrics.
fn paired(a: &SubjectScores, ma: Metric, b: &SubjectScores, mb: Metric) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .filter_map(|(s, cells)| Some((*cells.get(&ma)?, *b.get(s)?.get(&mb)?)))
        .unzip()
}

fn describe_tau(a: &[f64], b: &[f64]) -> String {
    match kendall_tau(a, b) {
        Ok(t) => format!("{t} (n={})", a.len()),
        Err(e) => format!("undefined (n={}: {e})", a.len()),
    }
}

fn run_rank(args: &RankArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let tables = args
        .results
        .iter()
        .map(|p| subject_scores(p, args.group, args.pooling))
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = String::new();
    out.push_str(&format!(
        "grouping: {}\npooling: {}\n",
        match args.group {
            GroupArg::Model => "model",
            GroupArg::Fa => "fa",
        },
        match args.pooling {
            PoolingArg::Mean => "per-subject-mean",
            PoolingArg::Pooled => "pooled-per-example",
        }
    ));
    for ((label, path), scores) in ["A", "B"].iter().zip(&args.results).zip(&tables) {
        if scores.len() < 2 {
            return Err(CliError::usage(format!(
                "{}: need at least 2 subjects to rank, found {}",
                path.display(),
                scores.len()
            )));
        }
        out.push_str(&format!("\n[{label}] {}\n", path.display()));
        for metric in Metric::ALL {
            let mut column: Vec<(&str, f64)> = scores
                .iter()
                .filter_map(|(s, cells)| Some((s.as_str(), *cells.get(&metric)?)))
                .collect();
            if column.is_empty() {
                continue;
            }
            column.sort_by(|(sa, a), (sb, b)| {
                let by_score = if metric.higher_is_better() {
                    b.total_cmp(a)
                } else {
                    a.total_cmp(b)
                };
                by_score.then_with(|| sa.cmp(sb))
            });
            let list: Vec<String> = column.iter().map(|(s, v)| format!("{s} ({v})")).collect();
            out.push_str(&format!("{metric}: {}\n", list.join(" > ")));
        }
        for raw in [Metric::Comp, Metric::Suff] {
            let (a, b) = paired(scores, raw, scores, raw.normalized());
            if !a.is_empty() {
                out.push_str(&format!(
                    "tau {raw} vs {}: {}\n",
                    raw.normalized(),
                    describe_tau(&a, &b)
                ));
            }
        }
    }
    if let [a, b] = tables.as_slice() {
        if !a.keys().any(|s| b.contains_key(s)) {
            return Err(CliError::usage("the results files share no subjects"));
        }
        out.push_str("\n[A vs B]\n");
        for metric in Metric::ALL {
            let (x, y) = paired(a, metric, b, metric);
            if !x.is_empty() {
                out.push_str(&format!("tau {metric}: {}\n", describe_tau(&x, &y)));
            }
        }
    }
    emit(args.out.as_deref(), stdout, out.as_bytes())?;
    Ok(0)
}
