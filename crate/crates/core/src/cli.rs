//! Command-line front end.
//!
//! Every subcommand reads an optional `key = value` config file whose keys
//! are the long flag names; flags given on the command line win. Exit codes:
//! 0 on success, 1 when the input fails a semantic check, 2 on I/O or usage
//! errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibration::{self, CountDiffCurve, MistakeRow, MistakeSetup, TrendPoint};
use crate::confusion::{self, ExtendedConfusionMatrix};
use crate::corpus::{
    self, validate_statistics, CategoryId, CategoryScheme, CategoryTable, Corpus, DetectionSet,
    ExpectedCounts, ParseOptions, Split, SplitManifest,
};
use crate::error::Error;
use crate::matching::{MatchConfig, MatchMode, DEFAULT_MAX_DETECTIONS};
use crate::metrics::{self, EvalConfig, EvalSummary};
use crate::synth::{self, ClassMix, PerturbationSpec, SceneSpec, ShapeFamily};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "CYTOEVAL_OUT";
const DEFAULT_OUT: &str = "cytoeval-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or missing inputs.
    Usage(String),
    /// The run completed but the input failed a check.
    Failed(String),
    Run(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => EXIT_FAILED,
            CliError::Run(Error::Validation { .. } | Error::Capacity(_)) => EXIT_FAILED,
            CliError::Usage(_) | CliError::Run(_) => EXIT_USAGE,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "cytoeval", version, about = "Evaluate instance-segmentation predictions")]
struct Cli {
    /// key = value file with defaults for any long flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check per-class, per-split object counts against an expected table
    Validate(ValidateArgs),
    /// Per-class and global AP/AR tables
    Evaluate(EvaluateArgs),
    /// Extended, basic or difference confusion matrices
    Confusion(ConfusionArgs),
    /// Count-difference curves, optimal score thresholds and mistake counts
    Calibrate(CalibrateArgs),
    /// Fit AP@0.75 against log10 of per-class object counts
    Trend(TrendArgs),
    /// Write a synthetic corpus with perfect and perturbed detections
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
struct OutputArgs {
    /// Output directory [env: CYTOEVAL_OUT]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output formats: csv, json (comma separated)
    #[arg(long, value_delimiter = ',')]
    format: Vec<String>,
}

#[derive(Debug, Clone, Args)]
struct InputArgs {
    /// Ground-truth JSON
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Split manifest: `<image_id>,<split>` lines
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Split to evaluate: train, test, val or all
    #[arg(long)]
    split: Option<String>,
    /// Category table: `cytology` or `file` (take the ground truth's own)
    #[arg(long)]
    categories: Option<String>,
    /// Worker threads; 0 uses every core
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Expected counts CSV: category,train,test,val,total
    #[arg(long)]
    expected: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Detections as `<label>=<path>` (repeatable)
    #[arg(long)]
    dets: Vec<String>,
    /// Stored per-class results as `<label>=<path>` (repeatable)
    #[arg(long)]
    results: Vec<String>,
    /// Drop detections scoring below this [default: 0]
    #[arg(long)]
    score_thr: Option<f64>,
    /// Detections kept per image; 0 keeps all
    /// Detections kept per image; 0 keeps all [default: 100]
    #[arg(long)]
    max_dets: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Extended,
    Basic,
    Diff,
}

#[derive(Debug, Args)]
struct ConfusionArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Detections as `<label>=<path>` (repeatable)
    #[arg(long)]
    dets: Vec<String>,
    /// Stored matrices (CSV or JSON) as `<label>=<path>` (repeatable)
    #[arg(long)]
    matrix: Vec<String>,
    /// Matrix to write [default: extended]
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    /// Minimum IoU for a pair [default: 0.75]
    #[arg(long)]
    iou_thr: Option<f64>,
    /// Drop detections scoring below this [default: 0.75]
    #[arg(long)]
    score_thr: Option<f64>,
    /// Matching mode: agnostic or classwise
    #[arg(long)]
    mode: Option<String>,
    /// Classes left out of the basic matrix (comma separated)
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    #[arg(long)]
    max_dets: Option<usize>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Detections as `<label>=<path>` (repeatable)
    #[arg(long)]
    dets: Vec<String>,
    /// Stored mistakes tables as `<label>=<path>` (repeatable)
    #[arg(long)]
    mistakes: Vec<String>,
    /// Score grid step
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Debug, Args)]
struct TrendArgs {
    #[command(flatten)]
    output: OutputArgs,
    /// CSV with category,count and optionally ap75
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Stored per-class results supplying AP@0.75, as `[<label>=]<path>`
    #[arg(long)]
    results: Option<String>,
    /// Classes left out of the fit (comma separated)
    #[arg(long, value_delimiter = ',')]
    outliers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Rectangle,
    Ellipse,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory [env: CYTOEVAL_OUT]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene seed; perturbations use seed + 1 [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of images [default: 20]
    #[arg(long)]
    images: Option<usize>,
    /// Image width [default: 128]
    #[arg(long)]
    width: Option<u32>,
    /// Image height [default: 128]
    #[arg(long)]
    height: Option<u32>,
    /// Fewest objects per image [default: 3]
    #[arg(long)]
    min_objects: Option<usize>,
    /// Most objects per image [default: 8]
    #[arg(long)]
    max_objects: Option<usize>,
    /// Object outline [default: rectangle]
    #[arg(long, value_enum)]
    shape: Option<ShapeArg>,
    /// Fraction of objects with no detection [default: 0]
    #[arg(long)]
    drop_rate: Option<f64>,
    /// Expected phantom detections per object [default: 0]
    #[arg(long)]
    phantom_rate: Option<f64>,
    /// Fraction of detections given a wrong class [default: 0]
    #[arg(long)]
    flip_rate: Option<f64>,
    /// Mask jitter radius: positive dilates, negative erodes
    #[arg(long, allow_hyphen_values = true)]
    jitter: Option<i32>,
    /// Lowest score of a matched detection [default: 1]
    #[arg(long)]
    tp_score_min: Option<f64>,
    /// Highest score of a phantom or flipped detection [default: 1]
    #[arg(long)]
    fp_score_max: Option<f64>,
}

const CONFIG_KEYS: &[&str] = &[
    "gt", "splits", "split", "categories", "workers", "out", "format", "dets", "results", "matrix",
    "mistakes", "variant", "iou-thr", "score-thr", "mode", "exclude", "max-dets", "step", "expected",
    "counts", "outliers", "seed", "images", "width", "height", "min-objects", "max-objects", "shape",
    "drop-rate", "phantom-rate", "flip-rate", "jitter", "tp-score-min", "fp-score-max",
];

/// Values from a config file. Repeated keys accumulate.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, Vec<String>>,
}

impl Settings {
    pub fn parse(text: &str) -> CliResult<Settings> {
        let mut values: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return usage(format!("config line {}: expected key = value", i + 1));
            };
            let key = k.trim().replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return usage(format!("config line {}: unknown key {key:?}", i + 1));
            }
            values.entry(key).or_default().push(v.trim().to_string());
        }
        Ok(Settings { values })
    }

    pub fn read(path: &Path) -> CliResult<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Settings::parse(&text)
    }

    fn one(&self, key: &str) -> Option<&str> {
        self.values.get(key).and_then(|v| v.last()).map(String::as_str)
    }

    /// `cli` when given, else the config value.
    fn pick<T: FromStr>(&self, cli: Option<T>, key: &str) -> CliResult<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        match self.one(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {s:?}"))),
        }
    }

    /// `cli` when non-empty, else every config value, split on commas for
    /// list-valued keys.
    fn list(&self, cli: Vec<String>, key: &str, comma: bool) -> Vec<String> {
        if !cli.is_empty() {
            return cli;
        }
        let raw = self.values.get(key).cloned().unwrap_or_default();
        if comma {
            raw.iter()
                .flat_map(|v| v.split(','))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        } else {
            raw
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySource {
    Cytology,
    FromFile,
}

/// Settings shared by the data-reading subcommands after merging the config
/// file and flags.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub gt: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    /// `None` evaluates every image.
    pub split: Option<Split>,
    pub categories: CategorySource,
    /// Detection files by model label, in the order given.
    pub dets: Vec<(String, PathBuf)>,
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub mode: MatchMode,
    pub max_detections: Option<usize>,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    pub workers: usize,
}

fn labeled(items: &[String]) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for item in items {
        let (label, path) = match item.split_once('=') {
            Some((l, p)) => (l.trim().to_string(), PathBuf::from(p.trim())),
            None => {
                let p = PathBuf::from(item.trim());
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, p)
            }
        };
        if label.is_empty() || label.contains(['/', '\\']) {
            return usage(format!("bad label in {item:?}"));
        }
        if out.iter().any(|(l, _)| *l == label) {
            return usage(format!("label {label:?} given twice"));
        }
        out.push((label, path));
    }
    Ok(out)
}

fn require_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Run(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        )))
    }
}

fn parse_mode(s: &str) -> CliResult<MatchMode> {
    match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "agnostic" | "class-agnostic" => Ok(MatchMode::ClassAgnostic),
        "classwise" => Ok(MatchMode::Classwise),
        other => usage(format!("unknown matching mode {other:?}")),
    }
}

fn resolve_out(cli: Option<PathBuf>, s: &Settings) -> CliResult<PathBuf> {
    if let Some(p) = s.pick(cli, "out")? {
        return Ok(p);
    }
    Ok(std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)))
}

fn resolve_formats(cli: Vec<String>, s: &Settings) -> CliResult<Vec<Format>> {
    let raw = s.list(cli, "format", true);
    if raw.is_empty() {
        return Ok(vec![Format::Csv]);
    }
    let mut out = Vec::new();
    for f in raw {
        let f = match f.trim().to_ascii_lowercase().as_str() {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return usage(format!("unknown format {other:?}")),
        };
        if !out.contains(&f) {
            out.push(f);
        }
    }
    Ok(out)
}

struct Defaults {
    iou: f64,
    score: f64,
    mode: MatchMode,
}

impl RunConfig {
    fn resolve(
        input: &InputArgs,
        output: &OutputArgs,
        dets: Vec<String>,
        matching: (Option<f64>, Option<f64>, Option<String>, Option<usize>),
        defaults: Defaults,
        s: &Settings,
    ) -> CliResult<RunConfig> {
        let split = match s.pick(input.split.clone(), "split")? {
            None => None,
            Some(v) if v.eq_ignore_ascii_case("all") => None,
            Some(v) => Some(v.parse::<Split>().map_err(|_| CliError::Usage(format!("unknown split {v:?}")))?),
        };
        let categories = match s.pick(input.categories.clone(), "categories")?.as_deref() {
            None | Some("cytology") => CategorySource::Cytology,
            Some("file") => CategorySource::FromFile,
            Some(other) => return usage(format!("unknown category table {other:?}")),
        };
        let (iou, score, mode, max_dets) = matching;
        let mode = match s.pick(mode, "mode")? {
            Some(m) => parse_mode(&m)?,
            None => defaults.mode,
        };
        let max_detections = match s.pick(max_dets, "max-dets")? {
            None => Some(DEFAULT_MAX_DETECTIONS),
            Some(0) => None,
            Some(n) => Some(n),
        };
        let cfg = RunConfig {
            gt: s.pick(input.gt.clone(), "gt")?,
            splits: s.pick(input.splits.clone(), "splits")?,
            split,
            categories,
            dets: labeled(&s.list(dets, "dets", false))?,
            iou_threshold: s.pick(iou, "iou-thr")?.unwrap_or(defaults.iou),
            score_threshold: s.pick(score, "score-thr")?.unwrap_or(defaults.score),
            mode,
            max_detections,
            out: resolve_out(output.out.clone(), s)?,
            formats: resolve_formats(output.format.clone(), s)?,
            workers: s.pick(input.workers, "workers")?.unwrap_or(0),
        };
        cfg.match_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            iou_threshold: self.iou_threshold,
            score_threshold: self.score_threshold,
            mode: self.mode,
            max_detections: self.max_detections,
        }
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn table(&self) -> CategoryTable {
        CategoryTable::cytology()
    }

    /// Ground truth with the split manifest applied.
    fn load_corpus(&self) -> CliResult<Corpus> {
        let Some(gt) = &self.gt else {
            return usage("--gt is required");
        };
        require_exists(gt)?;
        let splits = match &self.splits {
            Some(p) => {
                require_exists(p)?;
                Some(SplitManifest::read(p)?)
            }
            None => None,
        };
        let opts = ParseOptions {
            scheme: match self.categories {
                CategorySource::Cytology => CategoryScheme::Table(self.table()),
                CategorySource::FromFile => CategoryScheme::FromFile,
            },
            splits,
            ..ParseOptions::default()
        };
        let corpus = corpus::parse_ground_truth(gt, &opts)?;
        let filtered = corpus.filtered();
        if filtered.total() > 0 {
            log::warn!("{}: {} records skipped as invalid or out of table", gt.display(), filtered.total());
        }
        Ok(corpus)
    }

    fn load_dets(&self, corpus: &Corpus) -> CliResult<Vec<(String, DetectionSet)>> {
        self.dets
            .iter()
            .map(|(label, path)| {
                require_exists(path)?;
                Ok((label.clone(), corpus::parse_detections(path, corpus)?))
            })
            .collect()
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// Parse `args` (program name first) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let settings = match &cli.config {
        Some(p) => {
            require_exists(p)?;
            Settings::read(p)?
        }
        None => Settings::default(),
    };
    match cli.command {
        Command::Validate(a) => cmd_validate(a, &settings),
        Command::Evaluate(a) => cmd_evaluate(a, &settings),
        Command::Confusion(a) => cmd_confusion(a, &settings),
        Command::Calibrate(a) => cmd_calibrate(a, &settings),
        Command::Trend(a) => cmd_trend(a, &settings),
        Command::Synth(a) => cmd_synth(a, &settings),
    }
}

fn plain_defaults() -> Defaults {
    Defaults {
        iou: 0.5,
        score: 0.0,
        mode: MatchMode::Classwise,
    }
}

fn cmd_validate(a: ValidateArgs, s: &Settings) -> CliResult<()> {
    let cfg = RunConfig::resolve(&a.input, &a.output, Vec::new(), (None, None, None, None), plain_defaults(), s)?;
    let Some(expected) = s.pick(a.expected, "expected")? else {
        return usage("--expected is required");
    };
    require_exists(&expected)?;
    let expected = ExpectedCounts::read(&expected)?;
    let corpus = cfg.load_corpus()?;
    let report = validate_statistics(&corpus, &expected);
    if cfg.wants(Format::Csv) {
        cfg.write("statistics.csv", &report.to_csv())?;
    }
    if cfg.wants(Format::Json) {
        cfg.write("statistics.json", &to_json(&report))?;
    }
    if report.passed() {
        println!("statistics match");
        return Ok(());
    }
    let lines: Vec<String> = report
        .mismatches()
        .map(|m| {
            let found = m.actual.map_or_else(|| "unknown class".to_string(), |n| n.to_string());
            format!("{} {}: expected {} found {found}", m.category, m.column, m.expected)
        })
        .collect();
    for l in &lines {
        println!("{l}");
    }
    Err(CliError::Failed(format!("{} count mismatches", lines.len())))
}

fn cmd_evaluate(a: EvaluateArgs, s: &Settings) -> CliResult<()> {
    let cfg = RunConfig::resolve(
        &a.input,
        &a.output,
        a.dets,
        (None, a.score_thr, None, a.max_dets),
        plain_defaults(),
        s,
    )?;
    let stored = labeled(&s.list(a.results, "results", false))?;
    if cfg.dets.is_empty() && stored.is_empty() {
        return usage("give at least one --dets or --results");
    }
    let mut summaries = Vec::new();
    if !cfg.dets.is_empty() {
        let corpus = cfg.load_corpus()?;
        let ecfg = EvalConfig {
            split: cfg.split,
            score_threshold: cfg.score_threshold,
            max_detections: cfg.max_detections,
            workers: cfg.workers,
        };
        for (label, dets) in cfg.load_dets(&corpus)? {
            summaries.push(metrics::evaluate(&corpus, &dets, &ecfg)?.summary(&label));
        }
    }
    for (label, path) in &stored {
        require_exists(path)?;
        summaries.push(EvalSummary::read_stored(label, path, &cfg.table())?);
    }
    if cfg.wants(Format::Csv) {
        cfg.write("evaluation.csv", &metrics::render_csv(&summaries))?;
    }
    if cfg.wants(Format::Json) {
        cfg.write("evaluation.json", &metrics::render_json(&summaries))?;
    }
    Ok(())
}

fn read_matrix(path: &Path, table: &CategoryTable, config: MatchConfig) -> CliResult<ExtendedConfusionMatrix> {
    require_exists(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    Ok(if is_json {
        ExtendedConfusionMatrix::from_json(&text)?
    } else {
        ExtendedConfusionMatrix::from_csv(&text, table, config)?
    })
}

fn resolve_classes(names: &[String], table: &CategoryTable) -> CliResult<Vec<CategoryId>> {
    names
        .iter()
        .map(|n| table.require(n).map_err(CliError::from))
        .collect()
}

fn cmd_confusion(a: ConfusionArgs, s: &Settings) -> CliResult<()> {
    let base = confusion::default_config();
    let cfg = RunConfig::resolve(
        &a.input,
        &a.output,
        a.dets,
        (a.iou_thr, a.score_thr, a.mode, a.max_dets),
        Defaults {
            iou: base.iou_threshold,
            score: base.score_threshold,
            mode: base.mode,
        },
        s,
    )?;
    let variant = match s.pick(a.variant.map(|v| format!("{v:?}")), "variant")? {
        None => Variant::Extended,
        Some(v) => Variant::from_str(&v, true).map_err(|_| CliError::Usage(format!("unknown variant {v:?}")))?,
    };
    let stored = labeled(&s.list(a.matrix, "matrix", false))?;
    let n = cfg.dets.len() + stored.len();
    if n == 0 {
        return usage("give at least one --dets or --matrix");
    }
    if variant == Variant::Diff && n != 2 {
        return usage(format!("the diff variant needs exactly two models, got {n}"));
    }

    let mut matrices = Vec::new();
    let mut table = cfg.table();
    if !cfg.dets.is_empty() {
        let corpus = cfg.load_corpus()?;
        table = corpus.categories().clone();
        for (label, dets) in cfg.load_dets(&corpus)? {
            let m = confusion::confusion_for(&corpus, &dets, cfg.match_config(), cfg.split, cfg.workers)?;
            matrices.push((label.clone(), m.with_label(&label)));
        }
    }
    for (label, path) in &stored {
        let m = read_matrix(path, &table, cfg.match_config())?;
        matrices.push((label.clone(), m.with_label(label)));
    }

    let emit = |stem: &str, csv: String, json: String| -> CliResult<()> {
        if cfg.wants(Format::Csv) {
            cfg.write(&format!("{stem}.csv"), &csv)?;
        }
        if cfg.wants(Format::Json) {
            cfg.write(&format!("{stem}.json"), &json)?;
        }
        Ok(())
    };
    match variant {
        Variant::Extended => {
            for (label, m) in &matrices {
                emit(&format!("confusion_extended_{label}"), m.to_csv(), m.to_json())?;
            }
        }
        Variant::Basic => {
            let names = s.list(a.exclude, "exclude", true);
            let excluded = if names.is_empty() {
                table.non_diagnostic()
            } else {
                resolve_classes(&names, &table)?
            };
            for (label, m) in &matrices {
                let b = m.reduce_to_basic(&excluded)?;
                emit(&format!("confusion_basic_{label}"), b.to_csv(), b.to_json())?;
            }
        }
        Variant::Diff => {
            let ((la, ma), (lb, mb)) = (&matrices[0], &matrices[1]);
            let d = confusion::diff(ma, mb)?;
            emit(&format!("confusion_diff_{la}_{lb}"), d.to_csv(), d.to_json())?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    label: &'a str,
    curves: &'a [CountDiffCurve],
    optimal_thresholds: Vec<(String, f64)>,
    mistakes: &'a [MistakeRow],
}

fn check_presets(rows: &[MistakeRow], path: &Path) -> CliResult<()> {
    let kinds: Vec<_> = rows.iter().map(|r| r.setup).collect();
    if kinds != MistakeSetup::PRESETS {
        return Err(CliError::Run(Error::validation_with(
            "mistakes table must hold the three presets in order",
            vec![path.display().to_string()],
        )));
    }
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs, s: &Settings) -> CliResult<()> {
    let cfg = RunConfig::resolve(&a.input, &a.output, a.dets, (None, None, None, None), plain_defaults(), s)?;
    let step = s.pick(a.step, "step")?.unwrap_or(calibration::DEFAULT_STEP);
    let stored = labeled(&s.list(a.mistakes, "mistakes", false))?;
    if cfg.dets.is_empty() && stored.is_empty() {
        return usage("give at least one --dets or --mistakes");
    }
    if !cfg.dets.is_empty() {
        let corpus = cfg.load_corpus()?;
        for (label, dets) in cfg.load_dets(&corpus)? {
            let curves = calibration::count_diff_curves(&corpus, &dets, step, cfg.split)?;
            let rows = calibration::mistakes_table(&corpus, &dets, cfg.split, cfg.workers)?;
            if cfg.wants(Format::Csv) {
                cfg.write(&format!("count_diff_{label}.csv"), &calibration::curves_to_csv(&curves))?;
                cfg.write(&format!("thresholds_{label}.csv"), &calibration::optima_to_csv(&curves)?)?;
                cfg.write(&format!("mistakes_{label}.csv"), &calibration::mistakes_to_csv(&rows))?;
            }
            if cfg.wants(Format::Json) {
                let optimal_thresholds = curves
                    .iter()
                    .map(|c| Ok((c.name.clone(), calibration::optimal_threshold(c)?)))
                    .collect::<CliResult<_>>()?;
                let report = CalibrationReport {
                    label: &label,
                    curves: &curves,
                    optimal_thresholds,
                    mistakes: &rows,
                };
                cfg.write(&format!("calibration_{label}.json"), &to_json(&report))?;
            }
        }
    }
    for (label, path) in &stored {
        require_exists(path)?;
        let rows = calibration::read_mistakes(path)?;
        check_presets(&rows, path)?;
        if cfg.wants(Format::Csv) {
            cfg.write(&format!("mistakes_{label}.csv"), &calibration::mistakes_to_csv(&rows))?;
        }
        if cfg.wants(Format::Json) {
            cfg.write(&format!("mistakes_{label}.json"), &to_json(&rows))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrendReport<'a> {
    points: &'a [TrendPoint],
    fit: &'a calibration::TrendFit,
}

fn cmd_trend(a: TrendArgs, s: &Settings) -> CliResult<()> {
    let out = resolve_out(a.output.out.clone(), s)?;
    let formats = resolve_formats(a.output.format.clone(), s)?;
    let Some(counts) = s.pick(a.counts, "counts")? else {
        return usage("--counts is required");
    };
    require_exists(&counts)?;
    let text = std::fs::read_to_string(&counts).map_err(|e| Error::io(&counts, e))?;
    let rows = calibration::trend_points_from_csv(&text)?;
    let table = CategoryTable::cytology();
    let stored = match s.pick(a.results, "results")? {
        Some(r) => {
            let (label, path) = labeled(&[r])?.remove(0);
            require_exists(&path)?;
            Some(EvalSummary::read_stored(&label, &path, &table)?)
        }
        None => None,
    };
    let mut points = Vec::new();
    let mut missing = Vec::new();
    for (name, count, ap75) in rows {
        let from_results = stored.as_ref().and_then(|sum| {
            let id = table.resolve(&name)?;
            sum.class(id)?.ap75
        });
        match from_results.or(ap75) {
            Some(ap) => points.push(TrendPoint { name, ap, count }),
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Run(Error::validation_with("no AP@0.75 for some classes", missing)));
    }
    let outliers = s.list(a.outliers, "outliers", true);
    let fit = calibration::trend_fit(&points, &outliers)?;
    let cfg = RunConfig {
        gt: None,
        splits: None,
        split: None,
        categories: CategorySource::Cytology,
        dets: Vec::new(),
        iou_threshold: 0.75,
        score_threshold: 0.0,
        mode: MatchMode::Classwise,
        max_detections: None,
        out,
        formats,
        workers: 0,
    };
    if cfg.wants(Format::Csv) {
        cfg.write("trend_points.csv", &calibration::trend_listing_csv(&points, &fit))?;
        cfg.write("trend_fit.csv", &calibration::trend_fit_csv(&fit))?;
    }
    if cfg.wants(Format::Json) {
        cfg.write("trend.json", &to_json(&TrendReport { points: &points, fit: &fit }))?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs, s: &Settings) -> CliResult<()> {
    let out = resolve_out(a.out, s)?;
    let seed = s.pick(a.seed, "seed")?.unwrap_or(0);
    let base = SceneSpec::default();
    let (lo, hi) = match base.mix {
        ClassMix::Weighted { min, max, .. } => (min, max),
        ClassMix::Exact(_) => unreachable!("the default mix is weighted"),
    };
    let shape = match s.pick(a.shape.map(|v| format!("{v:?}")), "shape")? {
        None => base.shape,
        Some(v) => match ShapeArg::from_str(&v, true).map_err(|_| CliError::Usage(format!("unknown shape {v:?}")))? {
            ShapeArg::Rectangle => ShapeFamily::Rectangle,
            ShapeArg::Ellipse => ShapeFamily::Ellipse,
        },
    };
    let spec = SceneSpec {
        images: s.pick(a.images, "images")?.unwrap_or(base.images),
        width: s.pick(a.width, "width")?.unwrap_or(base.width),
        height: s.pick(a.height, "height")?.unwrap_or(base.height),
        mix: ClassMix::cytology(
            s.pick(a.min_objects, "min-objects")?.unwrap_or(lo),
            s.pick(a.max_objects, "max-objects")?.unwrap_or(hi),
        ),
        shape,
        seed,
        ..base
    };
    let pd = PerturbationSpec::default();
    let p = PerturbationSpec {
        drop_rate: s.pick(a.drop_rate, "drop-rate")?.unwrap_or(pd.drop_rate),
        phantom_rate: s.pick(a.phantom_rate, "phantom-rate")?.unwrap_or(pd.phantom_rate),
        flip_rate: s.pick(a.flip_rate, "flip-rate")?.unwrap_or(pd.flip_rate),
        jitter: s.pick(a.jitter, "jitter")?.unwrap_or(pd.jitter),
        tp_score_min: s.pick(a.tp_score_min, "tp-score-min")?.unwrap_or(pd.tp_score_min),
        fp_score_max: s.pick(a.fp_score_max, "fp-score-max")?.unwrap_or(pd.fp_score_max),
        seed: seed.wrapping_add(1),
        ..pd
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let scene = synth::generate(&spec)?;
    let (perturbed, ledger) = synth::perturb(&scene.corpus, &scene.perfect, &p)?;
    synth::write_scene(
        &out,
        &scene.corpus,
        &[
            ("perfect".to_string(), scene.perfect, None),
            ("perturbed".to_string(), perturbed, Some(ledger)),
        ],
    )?;
    println!(
        "wrote {} images, {} objects to {}",
        scene.corpus.images().len(),
        scene.corpus.annotations().len(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_parse_and_pick() {
        let s = Settings::parse("# run\niou_thr = 0.6\ndets = a=x.json\ndets = b=y.json\nformat = csv,json\n").unwrap();
        assert_eq!(s.pick::<f64>(None, "iou-thr").unwrap(), Some(0.6));
        assert_eq!(s.pick(Some(0.9), "iou-thr").unwrap(), Some(0.9));
        assert_eq!(s.list(vec![], "dets", false), vec!["a=x.json", "b=y.json"]);
        assert_eq!(s.list(vec!["c=z".into()], "dets", false), vec!["c=z"]);
        assert_eq!(resolve_formats(vec![], &s).unwrap(), vec![Format::Csv, Format::Json]);
        assert!(Settings::parse("colour = red").is_err());
        assert!(Settings::parse("no equals sign").is_err());
        assert!(s.pick::<u64>(None, "iou-thr").is_err());
    }

    #[test]
    fn labels() {
        let l = labeled(&["a=x/1.json".into(), "y/model.json".into()]).unwrap();
        assert_eq!(l[0], ("a".to_string(), PathBuf::from("x/1.json")));
        assert_eq!(l[1].0, "model");
        assert!(labeled(&["a=1".into(), "a=2".into()]).is_err());
        assert!(labeled(&["=p".into()]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Failed("x".into()).exit_code(), EXIT_FAILED);
        assert_eq!(CliError::Run(Error::validation("x")).exit_code(), EXIT_FAILED);
        assert_eq!(CliError::Run(Error::Config("x".into())).exit_code(), EXIT_USAGE);
        assert_eq!(parse_mode("class-agnostic").unwrap(), MatchMode::ClassAgnostic);
    }
}
