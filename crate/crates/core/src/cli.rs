//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 failed check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ModelConfig, PredictionLayerKind};
use crate::data::{load_dataset, save_dataset, training_instances, PipelineConfig};
use crate::error::Error;
use crate::gradcheck::{grad_check, random_instance, GradCheckOptions};
use crate::inference::{
    calibrate_thresholds, candidate_accuracy, nq_f1, predict_page, read_predictions, write_predictions,
    CandidateAccuracy, NqMetrics, PagePrediction, PredictionRecord, Thresholds,
};
use crate::autodiff::BackwardFault;
use crate::model::Model;
use crate::synthetic::{count_by_type, generate_synthetic_corpus, SyntheticConfig};
use crate::train::{train, write_metrics};

#[derive(Parser, Debug)]
#[command(name = "cascade-qa", version, about = "Long-document reading comprehension at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a per-step metrics log.
    Train(TrainArgs),
    /// Predict page answers with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold pages, optionally calibrating thresholds.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON file with settings; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Main output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub pages: Option<usize>,
    #[arg(long)]
    pub paragraphs: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub null_fraction: Option<f64>,
    #[arg(long)]
    pub long_only_fraction: Option<f64>,
    #[arg(long)]
    pub yes_no_fraction: Option<f64>,
    /// Manifest path; defaults to the dataset path with `.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Model settings that may override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub negative_keep_prob: Option<f64>,
    #[arg(long)]
    pub max_span_len: Option<usize>,
    #[arg(long, value_enum)]
    pub prediction_layer: Option<LayerArg>,
    #[arg(long)]
    pub no_dual_attention: bool,
    #[arg(long)]
    pub no_question_self_attention: bool,
    #[arg(long)]
    pub no_paragraph_self_attention: bool,
    #[arg(long)]
    pub no_paragraph_mask: bool,
    #[arg(long)]
    pub no_dynamic_mask: bool,
    #[arg(long)]
    pub no_multilevel: bool,
    #[arg(long)]
    pub no_cascade: bool,
    #[arg(long)]
    pub s2l_cascade: bool,
    #[arg(long)]
    pub no_question_embedding: bool,
    #[arg(long)]
    pub cross_span_short: bool,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
pub enum LayerArg {
    Tanh,
    Gelu,
    Linear,
    Transformer,
    Recurrent,
}

impl From<LayerArg> for PredictionLayerKind {
    fn from(a: LayerArg) -> Self {
        match a {
            LayerArg::Tanh => Self::Tanh,
            LayerArg::Gelu => Self::Gelu,
            LayerArg::Linear => Self::Linear,
            LayerArg::Transformer => Self::Transformer,
            LayerArg::Recurrent => Self::Recurrent,
        }
    }
}

impl ModelArgs {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            hidden,
            blocks,
            top_k,
            heads,
            encoder_layers,
            vocab_size,
            window,
            stride,
            learning_rate,
            batch_size,
            epochs,
            negative_keep_prob,
            max_span_len
        );
        if self.max_steps.is_some() {
            cfg.max_steps = self.max_steps;
        }
        if let Some(kind) = self.prediction_layer {
            cfg.prediction_layer = kind.into();
        }
        macro_rules! flag {
            ($($field:ident),*) => {$(
                cfg.$field |= self.$field;
            )*};
        }
        flag!(
            no_dual_attention,
            no_question_self_attention,
            no_paragraph_self_attention,
            no_paragraph_mask,
            no_dynamic_mask,
            no_multilevel,
            no_cascade,
            s2l_cascade,
            no_question_embedding,
            cross_span_short
        );
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training dataset (one page per line).
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics log; defaults to the checkpoint path with `.metrics.jsonl`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Thresholds file written by `evaluate --calibrate`; without it every
    /// candidate is emitted.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Gold dataset aligned with the predictions.
    #[arg(long)]
    pub data: PathBuf,
    /// Choose thresholds on these pages and re-score with them.
    #[arg(long)]
    pub calibrate: bool,
    /// Where to write calibrated thresholds.
    #[arg(long)]
    pub thresholds_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 8)]
    pub question_len: usize,
    /// Paragraph lengths of the random document span.
    #[arg(long, value_delimiter = ',', default_value = "8,8,8")]
    pub paragraphs: Vec<usize>,
    /// Test hook: corrupt activation gradients during backward.
    #[arg(long)]
    pub perturb_gradient: bool,
}

/// Failure of a command, mapped onto an exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn required(path: &Option<PathBuf>, what: &str) -> std::result::Result<PathBuf, Failure> {
    path.clone()
        .ok_or_else(|| Failure::Usage(format!("--out is required for {what}")))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(Error::from)?;
    Ok(())
}

fn model_config(common: &CommonArgs, args: &ModelArgs, base: ModelConfig) -> std::result::Result<ModelConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ModelConfig::from_json_file(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => base,
    };
    args.apply(&mut cfg);
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Manifest {
    pages: usize,
    seed: u64,
    null: usize,
    short: usize,
    long: usize,
    yes: usize,
    no: usize,
    generator: SyntheticConfig,
}

fn gen_data(args: GenDataArgs) -> CmdResult {
    let out = required(&args.common.out, "gen-data")?;
    let mut cfg = match &args.common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => SyntheticConfig::default(),
    };
    macro_rules! set {
        ($($arg:ident => $field:ident),*) => {$(
            if let Some(v) = args.$arg {
                cfg.$field = v;
            }
        )*};
    }
    set!(pages => pages, paragraphs => paragraphs_per_page, tokens => tokens_per_paragraph,
         vocab_size => vocab_size, null_fraction => null_fraction,
         long_only_fraction => long_only_fraction, yes_no_fraction => yes_no_fraction);
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    let pages = generate_synthetic_corpus(&cfg)?;
    save_dataset(&pages, &out)?;
    let [null, short, long, yes, no] = count_by_type(&pages);
    let manifest = Manifest {
        pages: pages.len(),
        seed: cfg.seed,
        null,
        short,
        long,
        yes,
        no,
        generator: cfg,
    };
    let manifest_path = args.manifest.unwrap_or_else(|| with_suffix(&out, ".manifest.json"));
    write_json(&manifest_path, &manifest)?;
    eprintln!("wrote {} pages to {}", pages.len(), out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> CmdResult {
    let out = required(&args.common.out, "train")?;
    let cfg = model_config(&args.common, &args.model, ModelConfig::default())?;
    let pages = load_dataset(&args.data)?;
    let instances = training_instances(&pages, &PipelineConfig::from(&cfg))?;
    eprintln!("{} pages, {} training instances", pages.len(), instances.len());
    let mut model = Model::new(cfg)?;
    let (adam, records) = train(&mut model, &instances, |r| {
        if r.step % 50 == 0 {
            eprintln!("step {:>5}  loss {:.4}", r.step, r.loss.total);
        }
    })?;
    save_checkpoint(&out, &model, Some(&adam))?;
    let metrics = args.metrics.unwrap_or_else(|| with_suffix(&out, ".metrics.jsonl"));
    write_metrics(&metrics, &records)?;
    eprintln!("wrote checkpoint {} after {} steps", out.display(), records.len());
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> CmdResult {
    let out = required(&args.common.out, "predict")?;
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let thresholds = match &args.thresholds {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => Thresholds::OPEN,
    };
    let pages = load_dataset(&args.data)?;
    let records = pages
        .iter()
        .map(|page| {
            Ok(PredictionRecord {
                page_id: page.page_id.clone(),
                prediction: predict_page(&model, page, &thresholds)?,
            })
        })
        .collect::<crate::error::Result<Vec<_>>>()?;
    write_predictions(&out, &records)?;
    eprintln!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    metrics: NqMetrics,
    candidates: CandidateAccuracy,
    #[serde(skip_serializing_if = "Option::is_none")]
    thresholds: Option<Thresholds>,
}

fn evaluate_cmd(args: EvaluateArgs) -> CmdResult {
    let mut records = read_predictions(&args.predictions)?;
    let gold = load_dataset(&args.data)?;
    nq_f1(&records, &gold)?;
    let thresholds = if args.calibrate {
        let dev: Vec<_> = records.iter().zip(&gold).map(|(r, g)| (r.prediction, g.gold)).collect();
        let th = calibrate_thresholds(&dev)?;
        for r in &mut records {
            let p = &r.prediction;
            let candidate = crate::inference::PageCandidate {
                long_pid: p.candidate_long,
                long_score: p.long_score,
                short: p.candidate_short,
                short_score: p.short_score,
                answer_type: p.answer_type,
            };
            r.prediction = PagePrediction::gate(&candidate, &th);
        }
        if let Some(path) = &args.thresholds_out {
            write_json(path, &th)?;
        }
        Some(th)
    } else {
        None
    };
    let report = EvaluationReport {
        metrics: nq_f1(&records, &gold)?,
        candidates: candidate_accuracy(&records, &gold)?,
        thresholds,
    };
    let m = &report.metrics;
    println!(
        "long  P {:.4} R {:.4} F1 {:.4}\nshort P {:.4} R {:.4} F1 {:.4}",
        m.long.precision, m.long.recall, m.long.f1, m.short.precision, m.short.recall, m.short.f1
    );
    if let Some(th) = thresholds {
        println!("theta_long {}  theta_short {}", th.long, th.short);
    }
    if let Some(path) = &args.common.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn grad_check_cmd(args: GradCheckArgs) -> CmdResult {
    let cfg = model_config(&args.common, &args.model, ModelConfig::tiny())?;
    let inst = random_instance(&cfg, args.question_len, &args.paragraphs, cfg.seed)?;
    let model = Model::new(cfg)?;
    let opts = GradCheckOptions {
        fault: args.perturb_gradient.then_some(BackwardFault::ScaleActivation(1.01)),
        ..GradCheckOptions::default()
    };
    let report = grad_check(&model, &inst, &opts)?;
    for g in &report.groups {
        println!("{:<48} {:>6} scalars  max rel {:.3e}", g.name, g.scalars, g.max_rel_error);
    }
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    println!("{verdict}: max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error, report.tolerance);
    if let Some(path) = &args.common.out {
        write_json(path, &report)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Check(format!("max relative error {:.3e}", report.max_rel_error)))
    }
}

pub fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

/// Parses `std::env::args`, runs the command and reports failures on stderr.
pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Data(m) | Failure::Check(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.exit_code())
        }
    }
}
