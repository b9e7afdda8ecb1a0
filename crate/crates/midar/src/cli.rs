//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numeric failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use midar_core::baselines::{perfect_detection, random_dropout, DropoutTable};
use midar_core::fusion::fuse_by_frame;
use midar_core::height::{fit_height_regression, HeightError, HeightModel};
use midar_core::labeling::{label_frame, LabelingError, MatchConfig};
use midar_core::metrics::{classification_metrics, extract_dropout_table, roc_auc, roc_curve, welch_t, MetricsError};
use midar_core::model::{forward, predict_labeled, train, Hyper, ModelError, ModelParams, TrainConfig};
use midar_core::rmlos::{build_rmlos, vehicles_in_range, RmlosError};
use midar_core::synth::{synth_scenes, SynthConfig};
use midar_core::{DetectionLabel, DetectionOutcome, LabeledFrame, SceneFrame};
use serde_json::json;

use crate::dataio::{self, DataError, GraphRecord, LabelRecord, WireLabel};
use crate::serve::{serve_loop, ModelChoice, ServeDefaults};

#[derive(Debug, Parser)]
#[command(name = "midar", version, about = "Occlusion-aware LiDAR detection models for traffic simulation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Seed for training, synthetic data and random dropout.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Half extent of the square detection range, in meters.
    #[arg(long = "range", global = true, default_value_t = midar_core::DEFAULT_HALF_EXTENT)]
    pub half_extent: f64,
    /// Miss probability at or above which a vehicle is reported FN.
    #[arg(long, global = true, default_value_t = midar_core::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump the line-of-sight graph of every frame.
    BuildGraph {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label ground-truth vehicles TP/FN by matching detector predictions.
    Label(LabelArgs),
    /// Train the graph model on labeled frames.
    Train(TrainArgs),
    /// Score a parameter file on labeled frames.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the ROC curve as `fpr,tpr` CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Run a detection model on frames and write outcomes.
    Apply {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelArg::Midar)]
        model: ModelArg,
        #[command(flatten)]
        source: ModelSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse outcomes of several AVs into one detected set per frame.
    Fuse {
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the linear height model on a `length,width,height` CSV.
    FitHeight {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-distance-bucket FN rates from outcomes or labeled frames.
    ExtractDropout(ExtractArgs),
    /// Welch's t-test on two samples (one number per line).
    Welch {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Report the two-sided p value instead of the one for mean(a) > mean(b).
        #[arg(long)]
        two_tailed: bool,
    },
    /// Generate labeled synthetic frames.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n_frames: usize,
        #[arg(long, default_value_t = 8)]
        min_vehicles: usize,
        #[arg(long, default_value_t = 40)]
        max_vehicles: usize,
        #[arg(long)]
        frames_out: PathBuf,
        #[arg(long)]
        labels_out: PathBuf,
    },
    /// Turn a trajectory CSV into one frame per (timestep, AV).
    Ingest(IngestArgs),
    /// Answer newline-delimited JSON requests on stdin/stdout or TCP.
    Serve {
        #[arg(long, value_enum, default_value_t = ModelArg::Midar)]
        model: ModelArg,
        #[command(flatten)]
        source: ModelSource,
        /// Listen on this address (e.g. 127.0.0.1:7070) instead of stdin.
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Midar,
    Perfect,
    Dropout,
}

impl From<ModelArg> for ModelChoice {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Midar => ModelChoice::Midar,
            ModelArg::Perfect => ModelChoice::Perfect,
            ModelArg::Dropout => ModelChoice::Dropout,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelSource {
    /// Parameter file for the midar model.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Dropout preset: signal-control or trajectory.
    #[arg(long, default_value = "signal-control")]
    pub preset: String,
    /// Dropout table file (JSON or CSV); overrides --preset.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Ground-truth frames.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detector predictions, one record per (scene, frame).
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Predictions scoring below this are dropped before matching.
    #[arg(long, default_value_t = 0.4)]
    pub score_threshold: f64,
    /// IoU a car match must exceed.
    #[arg(long, default_value_t = 0.7)]
    pub iou_car: f64,
    /// IoU a match of any other class must exceed.
    #[arg(long, default_value_t = 0.5)]
    pub iou_other: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-epoch loss as `epoch,loss` CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 70)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Propagation steps.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Teleport probability.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Outcomes with distances (as written by `apply`).
    #[arg(long, conflicts_with_all = ["frames", "labels"])]
    pub outcomes: Option<PathBuf>,
    /// Frames; distances come from the graph. Requires --labels.
    #[arg(long, requires = "labels")]
    pub frames: Option<PathBuf>,
    #[arg(long, requires = "frames")]
    pub labels: Option<PathBuf>,
    /// Bucket upper bounds in meters.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,54")]
    pub bounds: Vec<f64>,
    /// `.csv` for CSV, anything else for JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Column-mapping JSON; defaults to frame_id,vehicle_id,x,y,length,width,heading.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// AV vehicle ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub avs: Vec<String>,
    /// Height model JSON from `fit-height`; the built-in default otherwise.
    #[arg(long)]
    pub height_model: Option<PathBuf>,
    #[arg(long, default_value_t = 1.84)]
    pub sensor_height: f64,
    #[arg(long, default_value = "trajectory")]
    pub scene_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Hyper(_) | ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Linalg(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RmlosError> for CliError {
    fn from(e: RmlosError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonFinite(_) | MetricsError::ZeroVariance => CliError::Numeric(e.to_string()),
            MetricsError::Threshold(_) | MetricsError::Table(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<LabelingError> for CliError {
    fn from(e: LabelingError) -> Self {
        match e {
            LabelingError::InvalidThreshold { .. } => CliError::Usage(e.to_string()),
            LabelingError::NonFiniteCost { .. } => CliError::Numeric(e.to_string()),
            LabelingError::InvalidScore { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<HeightError> for CliError {
    fn from(e: HeightError) -> Self {
        match e {
            HeightError::RankDeficient => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(what: &str, e: io::Error) -> CliError {
    CliError::Data(format!("{what}: {e}"))
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.global.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    if !(g.half_extent.is_finite() && g.half_extent > 0.0) {
        return Err(CliError::Usage(format!("--range must be positive, got {}", g.half_extent)));
    }
    if !(0.0..=1.0).contains(&g.threshold) {
        return Err(CliError::Usage(format!("--threshold must lie in [0, 1], got {}", g.threshold)));
    }
    match cli.command {
        Command::BuildGraph { frames, out } => build_graph(&g, &frames, &out),
        Command::Label(a) => label(&a),
        Command::Train(a) => train_cmd(&g, &a),
        Command::Eval {
            params,
            frames,
            labels,
            out,
            roc,
        } => eval(&g, &params, &frames, &labels, out.as_deref(), roc.as_deref()),
        Command::Apply {
            frames,
            model,
            source,
            out,
        } => apply(&g, &frames, model, &source, &out),
        Command::Fuse { outcomes, out } => fuse(&outcomes, &out),
        Command::FitHeight { samples, out } => fit_height(&samples, &out),
        Command::ExtractDropout(a) => extract(&g, &a),
        Command::Welch { a, b, two_tailed } => welch(&a, &b, two_tailed),
        Command::Synth {
            n_frames,
            min_vehicles,
            max_vehicles,
            frames_out,
            labels_out,
        } => synth(&g, n_frames, min_vehicles, max_vehicles, &frames_out, &labels_out),
        Command::Ingest(a) => ingest(&a),
        Command::Serve { model, source, listen } => serve(&g, model, &source, listen.as_deref()),
    }
}

fn print_report(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn build_graph(g: &Global, frames: &Path, out: &Path) -> Result<(), CliError> {
    let frames = dataio::read_frames(frames)?;
    let mut records = Vec::with_capacity(frames.len());
    for f in &frames {
        records.push(GraphRecord::new(f, &build_rmlos(f, g.half_extent)?));
    }
    dataio::write_ndjson(out, &records)?;
    log::info!("wrote {} graphs", records.len());
    Ok(())
}

fn label(a: &LabelArgs) -> Result<(), CliError> {
    let mut cfg = MatchConfig {
        score_threshold: a.score_threshold,
        ..MatchConfig::default()
    };
    cfg.iou_thresholds = [a.iou_car, a.iou_other, a.iou_other, a.iou_other, a.iou_other, a.iou_other];
    cfg.validate()?;
    let frames = dataio::read_frames(&a.gt)?;
    let preds: BTreeMap<(String, String), Vec<_>> = dataio::read_predictions(&a.preds)?
        .into_iter()
        .map(|(s, f, boxes)| ((s, f), boxes))
        .collect();
    let mut records = Vec::new();
    let (mut tp, mut fn_, mut fp, mut unmatched_frames) = (0, 0, 0, 0);
    for f in &frames {
        let key = (f.scene_id.clone(), f.frame_id.clone());
        let boxes = match preds.get(&key) {
            Some(b) => b.as_slice(),
            None => {
                unmatched_frames += 1;
                &[]
            }
        };
        let labels = label_frame(&f.vehicles, boxes, &cfg)?;
        tp += labels.count(DetectionLabel::TruePositive);
        fn_ += labels.count(DetectionLabel::FalseNegative);
        fp += labels.false_positives.len();
        records.extend(labels.gt.into_iter().map(|(id, l)| LabelRecord {
            scene_id: f.scene_id.clone(),
            frame_id: f.frame_id.clone(),
            av_id: Some(f.ego.id.to_string()),
            vehicle_id: id.0,
            label: WireLabel(l),
        }));
    }
    if unmatched_frames > 0 {
        log::warn!("{unmatched_frames} frames have no prediction record; all their vehicles are FN");
    }
    dataio::write_ndjson(&a.out, &records)?;
    print_report(&json!({"frames": frames.len(), "tp": tp, "fn": fn_, "fp": fp}));
    Ok(())
}

fn load_labeled(frames: &Path, labels: &Path) -> Result<Vec<LabeledFrame>, CliError> {
    let frames = dataio::read_frames(frames)?;
    let labels = dataio::read_labels(labels)?;
    Ok(dataio::join_labels(frames, &labels))
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Result<(), CliError> {
    let config = TrainConfig {
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: g.seed,
        classification_threshold: g.threshold,
        hyper: Hyper {
            k: a.k,
            alpha: a.alpha,
            hidden_dim: a.hidden,
            dropout: a.dropout,
        },
        half_extent: g.half_extent,
    };
    config.validate()?;
    let data = load_labeled(&a.frames, &a.labels)?;
    let outcome = train(&data, &config)?;
    if let Some(e) = outcome.history.iter().position(|l| !l.is_finite()) {
        return Err(CliError::Numeric(format!("training loss became non-finite at epoch {}", e + 1)));
    }
    dataio::save_params(&a.out, &outcome.params)?;
    if let Some(path) = &a.history {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
        w.write_record(["epoch", "loss"]).map_err(|e| CliError::Data(e.to_string()))?;
        for (i, l) in outcome.history.iter().enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string()])
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| io_err("history", e))?;
    }
    print_report(&json!({
        "frames": data.len(),
        "epochs": outcome.history.len(),
        "final_loss": outcome.history.last(),
    }));
    Ok(())
}

fn eval(
    g: &Global,
    params: &Path,
    frames: &Path,
    labels: &Path,
    out: Option<&Path>,
    roc: Option<&Path>,
) -> Result<(), CliError> {
    let params = dataio::load_params(params)?;
    let data = load_labeled(frames, labels)?;
    let (scores, labels) = predict_labeled(&params, &data, g.half_extent)?;
    let auc = roc_auc(&scores, &labels)?;
    let m = classification_metrics(&scores, &labels, g.threshold)?;
    let c = m.confusion;
    let report = json!({
        "vehicles": scores.len(),
        "auc": auc,
        "threshold": g.threshold,
        "precision": m.precision,
        "recall": m.recall,
        "accuracy": m.accuracy,
        "f1": m.f1,
        "confusion": {
            "true_pos": c.true_pos,
            "false_pos": c.false_pos,
            "true_neg": c.true_neg,
            "false_neg": c.false_neg,
        },
    });
    if let Some(path) = roc {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
        w.write_record(["fpr", "tpr"]).map_err(|e| CliError::Data(e.to_string()))?;
        for (x, y) in roc_curve(&scores, &labels)? {
            w.write_record([x.to_string(), y.to_string()])
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| io_err("roc", e))?;
    }
    match out {
        Some(path) => dataio::write_json(path, &report)?,
        None => print_report(&report),
    }
    Ok(())
}

fn dropout_table(source: &ModelSource) -> Result<DropoutTable, CliError> {
    match &source.table {
        Some(path) => Ok(dataio::load_table(path)?),
        None => DropoutTable::preset(&source.preset).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn load_model_params(source: &ModelSource, required: bool) -> Result<Option<ModelParams>, CliError> {
    match &source.params {
        Some(p) => Ok(Some(dataio::load_params(p)?)),
        None if required => Err(CliError::Usage("--params is required for the midar model".into())),
        None => Ok(None),
    }
}

fn apply(g: &Global, frames: &Path, model: ModelArg, source: &ModelSource, out: &Path) -> Result<(), CliError> {
    let frames = dataio::read_frames(frames)?;
    let mut outcomes: Vec<DetectionOutcome> = Vec::new();
    match model {
        ModelArg::Midar => {
            let params = load_model_params(source, true)?.expect("required");
            for f in &frames {
                for p in forward(f, &params, g.half_extent)? {
                    if !p.p_fn.is_finite() {
                        return Err(CliError::Numeric(format!(
                            "{}/{}: non-finite probability for {}",
                            f.scene_id, f.frame_id, p.vehicle_id
                        )));
                    }
                    outcomes.push(DetectionOutcome {
                        scene_id: f.scene_id.clone(),
                        frame_id: f.frame_id.clone(),
                        av_id: f.ego.id.clone(),
                        label: p.label(g.threshold),
                        vehicle_id: p.vehicle_id,
                        score: p.p_fn,
                        distance: p.distance,
                    });
                }
            }
        }
        ModelArg::Perfect => {
            for f in &frames {
                outcomes.extend(perfect_detection(f, g.half_extent));
            }
        }
        ModelArg::Dropout => {
            let table = dropout_table(source)?;
            for f in &frames {
                outcomes.extend(random_dropout(f, &table, g.seed, g.half_extent));
            }
        }
    }
    dataio::write_outcomes(out, &outcomes)?;
    log::info!("wrote {} outcomes for {} frames", outcomes.len(), frames.len());
    Ok(())
}

fn fuse(outcomes: &Path, out: &Path) -> Result<(), CliError> {
    let outcomes = dataio::read_outcomes(outcomes)?;
    let records: Vec<serde_json::Value> = fuse_by_frame(&outcomes)
        .into_iter()
        .map(|((scene_id, frame_id), ids)| {
            json!({
                "scene_id": scene_id,
                "frame_id": frame_id,
                "vehicles": ids.into_iter().map(|v| v.0).collect::<Vec<_>>(),
            })
        })
        .collect();
    dataio::write_ndjson(out, &records)?;
    Ok(())
}

fn fit_height(samples: &Path, out: &Path) -> Result<(), CliError> {
    let samples = dataio::load_height_samples(samples)?;
    let model = fit_height_regression(&samples)?;
    dataio::save_height_model(out, &model)?;
    print_report(&json!({"a": model.a, "b": model.b, "c": model.c, "samples": samples.len()}));
    Ok(())
}

fn extract(g: &Global, a: &ExtractArgs) -> Result<(), CliError> {
    let observations: Vec<(f64, DetectionLabel)> = match (&a.outcomes, &a.frames, &a.labels) {
        (Some(path), _, _) => {
            let outcomes = dataio::read_outcomes(path)?;
            if let Some(o) = outcomes.iter().find(|o| !o.distance.is_finite()) {
                return Err(CliError::Data(format!(
                    "{}: outcome {}/{}/{} has no distance",
                    path.display(),
                    o.scene_id,
                    o.frame_id,
                    o.vehicle_id
                )));
            }
            outcomes.iter().map(|o| (o.distance, o.label)).collect()
        }
        (None, Some(frames), Some(labels)) => {
            let data = load_labeled(frames, labels)?;
            let mut obs = Vec::new();
            for f in &data {
                for (b, d) in vehicles_in_range(&f.frame, g.half_extent) {
                    if let Some(&l) = f.labels.get(&b.id) {
                        obs.push((d, l));
                    }
                }
            }
            obs
        }
        _ => return Err(CliError::Usage("give --outcomes, or --frames with --labels".into())),
    };
    let table = extract_dropout_table(&observations, &a.bounds)?;
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        dataio::save_table_csv(&a.out, &table)?;
    } else {
        dataio::save_table_json(&a.out, &table)?;
    }
    let buckets: Vec<_> = table
        .buckets()
        .iter()
        .map(|&(upper, p_fn)| json!({"upper": upper, "p_fn": p_fn}))
        .collect();
    print_report(&json!({"observations": observations.len(), "buckets": buckets}));
    Ok(())
}

fn read_sample(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(&path.display().to_string(), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Data(format!("{}:{}: not a number: {l:?}", path.display(), i + 1)))
        })
        .collect()
}

fn welch(a: &Path, b: &Path, two_tailed: bool) -> Result<(), CliError> {
    let r = welch_t(&read_sample(a)?, &read_sample(b)?, !two_tailed)?;
    print_report(&json!({"t": r.t, "df": r.df, "p": r.p, "one_tailed": !two_tailed}));
    Ok(())
}

fn synth(
    g: &Global,
    n_frames: usize,
    min_vehicles: usize,
    max_vehicles: usize,
    frames_out: &Path,
    labels_out: &Path,
) -> Result<(), CliError> {
    if min_vehicles > max_vehicles {
        return Err(CliError::Usage("--min-vehicles exceeds --max-vehicles".into()));
    }
    let cfg = SynthConfig {
        n_frames,
        min_vehicles,
        max_vehicles,
        half_extent: g.half_extent,
        ..SynthConfig::default()
    };
    let data = synth_scenes(g.seed, &cfg);
    let frames: Vec<SceneFrame> = data.iter().map(|f| f.frame.clone()).collect();
    dataio::write_frames(frames_out, &frames)?;
    dataio::write_ndjson(labels_out, &dataio::label_records(&data))?;
    let missed: usize = data
        .iter()
        .map(|f| f.labels.values().filter(|l| l.is_missed()).count())
        .sum();
    let total: usize = data.iter().map(|f| f.labels.len()).sum();
    print_report(&json!({"frames": data.len(), "vehicles": total, "fn": missed}));
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let mapping = match &a.mapping {
        Some(p) => dataio::read_json(p)?,
        None => dataio::ColumnMapping::default(),
    };
    let height = match &a.height_model {
        Some(p) => dataio::load_height_model(p)?,
        None => HeightModel::DEFAULT,
    };
    if !(a.sensor_height.is_finite()) {
        return Err(CliError::Usage("--sensor-height must be finite".into()));
    }
    let rows = dataio::load_trajectory_csv(&a.trajectory, &mapping)?;
    let avs: BTreeSet<String> = a.avs.iter().cloned().collect();
    let sensor = dataio::SensorConfig {
        scene_id: a.scene_id.clone(),
        sensor_height: a.sensor_height,
    };
    let (frames, report) = dataio::trajectory_to_frames(&rows, &avs, &sensor, &height);
    if report.skipped_pairs > 0 {
        log::warn!("{} (timestep, AV) pairs skipped: AV not present", report.skipped_pairs);
    }
    for f in &frames {
        f.validate().map_err(|e| CliError::Data(e.to_string()))?;
    }
    dataio::write_frames(&a.out, &frames)?;
    print_report(&json!({
        "rows": rows.len(),
        "frames": report.frames,
        "skipped_pairs": report.skipped_pairs,
        "filled_heights": report.filled_heights,
    }));
    Ok(())
}

fn serve(g: &Global, model: ModelArg, source: &ModelSource, listen: Option<&str>) -> Result<(), CliError> {
    let params = load_model_params(source, false)?;
    if model == ModelArg::Midar && params.is_none() {
        log::warn!("no --params given; midar requests will get missing_params errors");
    }
    let defaults = ServeDefaults {
        model: model.into(),
        table: dropout_table(source)?,
        seed: g.seed,
        threshold: g.threshold,
        half_extent: g.half_extent,
    };
    match listen {
        None => {
            let stdin = io::stdin();
            let stdout = io::stdout();
            let stats = serve_loop(stdin.lock(), stdout.lock(), params.as_ref(), &defaults)
                .map_err(|e| io_err("serve", e))?;
            log::info!("served {} requests ({} errors)", stats.requests, stats.errors);
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
            log::info!("listening on {}", listener.local_addr().map_err(|e| io_err("listen", e))?);
            // One client at a time keeps the ordering contract simple.
            for stream in listener.incoming() {
                let stream = match stream {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        continue;
                    }
                };
                let reader = match stream.try_clone() {
                    Ok(r) => BufReader::new(r),
                    Err(e) => {
                        log::warn!("cannot clone connection: {e}");
                        continue;
                    }
                };
                match serve_loop(reader, stream, params.as_ref(), &defaults) {
                    Ok(stats) => log::info!("client done: {} requests ({} errors)", stats.requests, stats.errors),
                    Err(e) => log::warn!("client dropped: {e}"),
                }
            }
        }
    }
    Ok(())
}
