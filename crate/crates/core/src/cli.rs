//! The `kdss` command line.
//!
//! Every subcommand is deterministic given its `--seed`. Summaries go to
//! standard output; files are written only where an `--out` or `--out-dir`
//! flag points. Exit codes: 0 success, 2 usage or input error, 1 internal
//! error. `KDSS_THREADS` caps the worker pool.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{self, KnnModel};
use crate::cloud::{validate_cloud, ClassId, FeatureSchema, PointCloud};
use crate::features::{split, SplitFractions, SplitTag};
use crate::io::batch::{BatchFile, MAGIC as BATCH_MAGIC};
use crate::io::manifest::Manifest;
use crate::io::{self, read_ply, write_ply, ArtifactError, PlyEncoding};
use crate::metrics::{self, ReportFormat};
use crate::sampling::{self, KdssConfig, RebuildPolicy, SampleError};
use crate::synth::{synthetic_plant, SyntheticPlantSpec};

pub const THREADS_ENV: &str = "KDSS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "kdss", version, about = "KD-tree sub-sampling of point clouds for fixed-size segmentation backends")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic plant (stem, leaf, panicle) as PLY.
    Synth(SynthArgs),
    /// Assign units (files or a count) to train/val/test.
    Split(SplitArgs),
    /// Partition a cloud into sub-samples and write batches plus a manifest.
    Subsample(SubsampleArgs),
    /// Fit or apply the k-NN voting baseline.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Merge per-batch predictions back onto the full-resolution cloud.
    Merge(MergeArgs),
    /// Score predictions against ground-truth labels.
    Evaluate(EvaluateArgs),
    /// Print a summary of a PLY, manifest, batch or model file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.6)]
    pub stem_height: f64,
    #[arg(long, default_value_t = 0.015)]
    pub stem_radius: f64,
    #[arg(long, default_value_t = 8)]
    pub leaf_count: usize,
    #[arg(long, default_value_t = 0.6)]
    pub leaf_length: f64,
    #[arg(long, default_value_t = 0.07)]
    pub leaf_width: f64,
    #[arg(long, default_value_t = 8000)]
    pub stem_points: usize,
    /// Points per leaf.
    #[arg(long, default_value_t = 4000)]
    pub leaf_points: usize,
    #[arg(long, default_value_t = 10000)]
    pub panicle_points: usize,
    #[arg(long, default_value_t = 0.002)]
    pub noise_sigma: f64,
    #[arg(long, value_enum, default_value_t = PlyEncoding::BinaryLe)]
    pub encoding: PlyEncoding,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// A unit count, or a comma-separated list of unit names.
    #[arg(long)]
    pub units: String,
    /// `train,test` or `train,val,test`; must sum to 1.
    #[arg(long, default_value = "0.9,0.1")]
    pub fractions: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional tab-separated `unit<TAB>split` listing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    pub input: PathBuf,
    /// Points per sub-sample.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=u32::MAX as u64))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated channels; defaults to every channel the cloud carries.
    #[arg(long)]
    pub schema: Option<FeatureSchema>,
    #[arg(long, value_enum, default_value_t = PolicyArg::OnFirstOverlap)]
    pub rebuild_policy: PolicyArg,
    #[arg(long, default_value_t = crate::kdtree::DEFAULT_LEAF_SIZE, value_parser = clap::value_parser!(usize))]
    pub leaf_size: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PolicyArg {
    OnFirstOverlap,
    AlwaysRebuild,
}

impl From<PolicyArg> for RebuildPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::OnFirstOverlap => RebuildPolicy::OnFirstOverlap,
            PolicyArg::AlwaysRebuild => RebuildPolicy::AlwaysRebuild,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Fit on the labeled batches of one or more manifests.
    Fit {
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every batch of a manifest and write prediction batches.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    pub manifest: PathBuf,
    /// Directory holding prediction-bearing batch files.
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlyEncoding::BinaryLe)]
    pub encoding: PlyEncoding,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Cloud with ground-truth labels.
    pub truth: PathBuf,
    /// Cloud with predictions (its `pred` property, else its labels).
    /// Omit when `truth` is a merged cloud carrying both.
    pub predicted: Option<PathBuf>,
    /// Number of classes; defaults to the class map, else the largest id seen plus one.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, value_enum, default_value_t = ReportFormat::HumanTable)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// A failed command: usage and bad input exit 2, internal faults exit 1.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
    /// Standard output was closed by the reader (e.g. `| head`); not a failure.
    ClosedOutput,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
            CliError::ClosedOutput => 0,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
            CliError::ClosedOutput => f.write_str("output closed"),
        }
    }
}

fn input(e: impl Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal(e: impl Display) -> CliError {
    CliError::Internal(e.to_string())
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::Partition(_) => internal(e),
            _ => input(e),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::KdTree(_) | SampleError::Merge(_) => internal(e),
            _ => input(e),
        }
    }
}

type CliResult = Result<(), CliError>;

/// Entry point for the binary: parses `std::env::args` and prints to stdout.
pub fn run() -> i32 {
    run_from(std::env::args_os(), &mut std::io::stdout().lock())
}

pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match execute(cli.command, out) {
        Ok(()) | Err(CliError::ClosedOutput) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> CliResult {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| input(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A pool may already exist when embedded in a larger process; keep it.
    if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
        log::debug!("global thread pool already initialised");
    }
    Ok(())
}

pub fn execute(command: Command, out: &mut dyn Write) -> CliResult {
    match command {
        Command::Synth(a) => cmd_synth(a, out),
        Command::Split(a) => cmd_split(a, out),
        Command::Subsample(a) => cmd_subsample(a, out),
        Command::Baseline(b) => cmd_baseline(b, out),
        Command::Merge(a) => cmd_merge(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

fn stdout_err(e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        CliError::ClosedOutput
    } else {
        internal(e)
    }
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(stdout_err)?
    };
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> CliResult {
    let spec = SyntheticPlantSpec {
        stem_height: a.stem_height,
        stem_radius: a.stem_radius,
        leaf_count: a.leaf_count,
        leaf_length: a.leaf_length,
        leaf_width: a.leaf_width,
        stem_points: a.stem_points,
        leaf_points: a.leaf_points,
        panicle_points: a.panicle_points,
        noise_sigma: a.noise_sigma,
        ..SyntheticPlantSpec::default()
    };
    let positive = [spec.stem_height, spec.stem_radius, spec.leaf_length, spec.leaf_width];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(input("plant dimensions must be positive and noise non-negative"));
    }
    if spec.total_points() == 0 {
        return Err(input("the plant would have no points"));
    }
    let cloud = synthetic_plant(&spec, a.seed);
    if let Some(v) = validate_cloud(&cloud).first() {
        return Err(internal(format!("generated cloud is invalid: {v}")));
    }
    write_ply(&cloud, &a.out, a.encoding).map_err(input)?;
    say!(out, "wrote {} points (seed {}) to {}", cloud.len(), a.seed, a.out.display());
    for (name, count) in label_histogram(&cloud) {
        say!(out, "  {name}: {count}");
    }
    Ok(())
}

fn parse_fractions(text: &str) -> Result<SplitFractions, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| input(format!("--fractions {text:?}: {e}")))?;
    let (train, val) = match parts[..] {
        [train, _test] => (train, 0.0),
        [train, val, _test] => (train, val),
        _ => return Err(input("--fractions takes two (train,test) or three (train,val,test) values")),
    };
    let sum: f64 = parts.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(input(format!("--fractions must be non-negative and sum to 1, got {text:?}")));
    }
    Ok(SplitFractions::new(train, val))
}

fn cmd_split(a: SplitArgs, out: &mut dyn Write) -> CliResult {
    let fractions = parse_fractions(&a.fractions)?;
    let units: Vec<String> = match a.units.trim().parse::<usize>() {
        Ok(n) => (0..n).map(|i| i.to_string()).collect(),
        Err(_) => a.units.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
    };
    let s = split(&units, fractions, a.seed).map_err(input)?;
    say!(
        out,
        "seed {}: train {}, val {}, test {}",
        a.seed,
        s.count(SplitTag::Train),
        s.count(SplitTag::Val),
        s.count(SplitTag::Test)
    );
    let mut listing = format!("# seed={}\n", a.seed);
    for (unit, tag) in &s.assignments {
        listing.push_str(&format!("{unit}\t{}\n", tag.name()));
    }
    match a.out {
        Some(path) => fs::write(&path, listing).map_err(|e| input(format!("{}: {e}", path.display())))?,
        None => out.write_all(listing.as_bytes()).map_err(stdout_err)?,
    }
    Ok(())
}

fn size_law_summary(sizes: &[usize]) -> String {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &s in sizes {
        match runs.last_mut() {
            Some((size, count)) if *size == s => *count += 1,
            _ => runs.push((s, 1)),
        }
    }
    runs.iter().map(|(size, count)| format!("{count}x{size}")).collect::<Vec<_>>().join(" + ")
}

fn cmd_subsample(a: SubsampleArgs, out: &mut dyn Write) -> CliResult {
    if a.leaf_size == 0 {
        return Err(input("--leaf-size must be at least 1"));
    }
    let cloud = read_ply(&a.input).map_err(input)?;
    if let Some(v) = validate_cloud(&cloud).first() {
        return Err(input(format!("{}: {v}", a.input.display())));
    }
    let mut config = KdssConfig::new(a.n as usize, a.seed).with_rebuild_policy(a.rebuild_policy.into());
    config.leaf_size = a.leaf_size;
    let (set, stats) = sampling::subsample_with_stats(&cloud, &config)?;
    let set = match a.schema {
        Some(schema) => set.with_schema(schema),
        None => set,
    };
    let manifest = io::write_batches(&cloud, &a.input, &set, &config, &a.out_dir)?;
    say!(
        out,
        "{} points -> {} sub-samples of N={} ({}), seed {}",
        cloud.len(),
        set.len(),
        config.n_per_sample,
        size_law_summary(&manifest.sizes()),
        a.seed
    );
    say!(out, "schema {} (width {})", set.schema, set.schema.total_width());
    say!(out, "tree builds {}, discarded draws {}", stats.tree_builds, stats.discarded_draws);
    say!(out, "manifest {}", a.out_dir.join(io::manifest::MANIFEST_FILE).display());
    Ok(())
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(io::manifest::MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn cmd_baseline(b: BaselineCommand, out: &mut dyn Write) -> CliResult {
    match b {
        BaselineCommand::Fit { manifests, k, out: model_path } => {
            let mut train = Vec::new();
            for m in &manifests {
                let bs = io::read_batches(&manifest_path(m))?;
                let labels = bs
                    .labels
                    .ok_or_else(|| input(format!("{}: batches carry no labels", m.display())))?;
                train.extend(bs.matrices.into_iter().zip(labels));
            }
            let model = baseline::fit(&train, k).map_err(input)?;
            model.save(&model_path).map_err(input)?;
            say!(
                out,
                "fitted k={} on {} rows from {} manifests (schema {}) -> {}",
                k,
                model.len(),
                manifests.len(),
                model.schema(),
                model_path.display()
            );
        }
        BaselineCommand::Predict { model, manifest, out_dir } => {
            let model = KnnModel::load(&model).map_err(input)?;
            let mpath = manifest_path(&manifest);
            let bs = io::read_batches(&mpath)?;
            let preds = bs
                .matrices
                .iter()
                .map(|m| model.predict(m))
                .collect::<Result<Vec<_>, _>>()
                .map_err(input)?;
            let dir = mpath.parent().unwrap_or(Path::new("."));
            io::write_predictions(dir, &bs.manifest, &preds, &out_dir)?;
            let rows: usize = preds.iter().map(Vec::len).sum();
            say!(out, "predicted {} rows in {} batches -> {}", rows, preds.len(), out_dir.display());
        }
    }
    Ok(())
}

fn cmd_merge(a: MergeArgs, out: &mut dyn Write) -> CliResult {
    let mpath = manifest_path(&a.manifest);
    let bs = io::read_batches(&mpath)?;
    let mut cloud = io::load_parent(&bs.manifest, &mpath)?;
    let preds = io::read_predictions(&a.predictions, &bs.manifest)?;
    let merged = sampling::merge(&bs.set, &preds).map_err(input)?;
    if merged.predicted.len() != cloud.len() {
        return Err(internal(format!("merged {} points, parent has {}", merged.predicted.len(), cloud.len())));
    }
    cloud.predicted = Some(merged.predicted);
    write_ply(&cloud, &a.out, a.encoding).map_err(input)?;
    say!(out, "merged {} sub-samples into {} points -> {}", bs.set.len(), cloud.len(), a.out.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> CliResult {
    let truth_cloud = read_ply(&a.truth).map_err(input)?;
    let truth = truth_cloud
        .labels
        .clone()
        .ok_or_else(|| input(format!("{}: no label property", a.truth.display())))?;
    let predicted: Vec<ClassId> = match &a.predicted {
        Some(path) => {
            let c = read_ply(path).map_err(input)?;
            c.predicted
                .or(c.labels)
                .ok_or_else(|| input(format!("{}: neither pred nor label property", path.display())))?
        }
        None => truth_cloud
            .predicted
            .clone()
            .ok_or_else(|| input(format!("{}: no pred property; pass a predictions file", a.truth.display())))?,
    };
    if predicted.len() != truth.len() {
        return Err(input(format!("point count mismatch: {} truth, {} predicted", truth.len(), predicted.len())));
    }
    let classes = a
        .classes
        .or_else(|| truth_cloud.class_map.as_ref().map(|m| m.len()))
        .unwrap_or_else(|| truth.iter().chain(&predicted).max().map_or(1, |&m| m as usize + 1));
    let cm = metrics::confusion(&truth, &predicted, classes).map_err(input)?;
    let mut rep = metrics::report(&cm).map_err(input)?;
    if let Some(map) = &truth_cloud.class_map {
        rep = rep.with_names(map);
    }
    let text = metrics::render(&rep, a.format);
    match a.out {
        Some(path) => {
            fs::write(&path, &text).map_err(|e| input(format!("{}: {e}", path.display())))?;
            say!(out, "overall accuracy {:.4}; report -> {}", rep.summary.overall_accuracy, path.display());
        }
        None => out.write_all(text.as_bytes()).map_err(stdout_err)?,
    }
    Ok(())
}

fn label_histogram(cloud: &PointCloud) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    if let Some(labels) = &cloud.labels {
        for &l in labels {
            let name = cloud
                .class_map
                .as_ref()
                .and_then(|m| m.name(l))
                .map_or_else(|| format!("class{l}"), str::to_string);
            *h.entry(name).or_insert(0) += 1;
        }
    }
    h
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write) -> CliResult {
    let path = manifest_path(&a.path);
    let bytes = fs::read(&path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"ply") {
        let (cloud, report) = io::ply::parse_ply(&bytes).map_err(input)?;
        say!(out, "PLY cloud: {} points", cloud.len());
        let channels: Vec<&str> = [
            ("color", cloud.colors.is_some()),
            ("normal", cloud.normals.is_some()),
            ("intensity", cloud.intensity.is_some()),
            ("label", cloud.labels.is_some()),
            ("pred", cloud.predicted.is_some()),
        ]
        .into_iter()
        .filter_map(|(n, on)| on.then_some(n))
        .collect();
        say!(out, "channels: position{}", channels.iter().map(|c| format!(", {c}")).collect::<String>());
        if let Some(m) = &cloud.class_map {
            say!(out, "classes: {}", m.names().join(", "));
        }
        for (name, count) in label_histogram(&cloud) {
            say!(out, "  {name}: {count}");
        }
        if cloud.unnormalized_normals {
            say!(out, "normals are not unit length");
        }
        if !report.skipped_properties.is_empty() {
            say!(out, "ignored properties: {}", report.skipped_properties.join(", "));
        }
        let issues = validate_cloud(&cloud);
        say!(out, "validation: {}", if issues.is_empty() { "ok".to_string() } else { format!("{} issues", issues.len()) });
    } else if bytes.starts_with(BATCH_MAGIC) {
        let b = BatchFile::decode(&bytes).map_err(input)?;
        say!(out, "batch ordinal {}: {} rows x width {}", b.ordinal, b.rows, b.width);
        say!(out, "labels: {}, predictions: {}", b.labels.is_some(), b.predictions.is_some());
    } else if bytes.starts_with(baseline::MODEL_MAGIC) {
        let m = KnnModel::decode(&bytes).map_err(input)?;
        say!(out, "k-NN model: k={}, {} training rows, schema {}", m.k_vote(), m.len(), m.schema());
    } else {
        let text = String::from_utf8(bytes).map_err(|_| input(format!("{}: unrecognised file", path.display())))?;
        let m = Manifest::from_toml(&text).map_err(|e| input(format!("{}: not a PLY, batch, model or manifest: {e}", path.display())))?;
        say!(out, "manifest: parent {} ({} points, digest {})", m.parent.file, m.parent.points, m.parent.digest);
        say!(out, "N {}", m.sampling.n_per_sample);
        say!(out, "seed {}", m.sampling.seed);
        say!(out, "rebuild policy {}, rng {}", m.sampling.rebuild_policy.name(), m.sampling.rng);
        say!(out, "sizes {} ({} sub-samples)", size_law_summary(&m.sizes()), m.subsamples.len());
        say!(out, "schema {} (width {})", m.features.schema, m.features.width);
        if let Some(c) = &m.classes {
            say!(out, "classes {}", c.join(", "));
        }
        let law = m.check_size_law();
        say!(out, "size law: {}", law.as_ref().map_or_else(|e| e.clone(), |_| "ok".to_string()));
    }
    Ok(())
}
