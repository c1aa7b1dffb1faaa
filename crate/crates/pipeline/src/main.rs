use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use wmsync::core::dataset::SyntheticImages;
use wmsync::core::geometry::{apply_attack, sample_attack, AttackSpec};
use wmsync::core::metrics::ber;
use wmsync::core::{Payload, RstParams};
use wmsync::eval::{self, ExperimentManifest, ImageSet, RecoveryMode, SuiteSpec};
use wmsync::io::{load_image, save_image, write_atomic, ImageDir};
use wmsync::nets::train::{pretrain_generator, pretrain_target, train_model};
use wmsync::nets::TemplateModel32;
use wmsync::{Error, PipelineConfig, Recovery, Result, Watermarker};

#[derive(Parser)]
#[command(name = "wmsync", version, about = "Template-synchronized curvelet watermarking")]
struct Cli {
    /// TOML configuration (codec, network and training settings).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Also write the JSON result record to this file.
    #[arg(long, global = true)]
    record: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a payload and the template into an image.
    Embed(EmbedArgs),
    /// Recover geometry and read the payload.
    Decode(DecodeArgs),
    /// Create a model and pre-train its generator.
    Pretrain(PretrainArgs),
    /// Warm-ups and end-to-end training.
    Train(TrainArgs),
    /// Apply an RST / noise / JPEG attack.
    Attack(AttackArgs),
    /// Robustness and quality tables.
    Eval(EvalArgs),
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Payload file: hex, or a string of 0/1 characters.
    #[arg(long, conflicts_with = "hex")]
    bits: Option<PathBuf>,
    #[arg(long)]
    hex: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeRecovery {
    Template,
    None,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Layout key; the model's own when omitted.
    #[arg(long)]
    key: Option<u64>,
    /// True payload (hex string or file) for a BER figure.
    #[arg(long)]
    truth: Option<String>,
    #[arg(long, value_enum, default_value_t = DecodeRecovery::Template)]
    recovery: DecodeRecovery,
    #[arg(long)]
    refine: Option<usize>,
    /// Save the recovered canvas image.
    #[arg(long)]
    recovered: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    key: Option<u64>,
    /// Step budget.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint (pre-training is skipped if it already ran).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Training images; synthetic ones otherwise.
    #[arg(long, conflicts_with = "synthetic")]
    images: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    synthetic: usize,
    #[arg(long)]
    heldout_images: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    heldout_synthetic: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    key: Option<u64>,
    /// Write the loss curve as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Draw the attack from the training ranges using `--seed`.
    #[arg(long, conflicts_with_all = ["rotation", "scale", "sx", "sy", "tx", "ty", "noise", "jpeg"])]
    random: bool,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    rotation: f64,
    #[arg(long, conflicts_with_all = ["sx", "sy"])]
    scale: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sx: f64,
    #[arg(long, default_value_t = 1.0)]
    sy: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    tx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    ty: f64,
    /// Gaussian noise variance.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    jpeg: Option<u8>,
    /// Resize by this factor after the attack (bicubic).
    #[arg(long)]
    resize: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Needed for template recovery.
    #[arg(long)]
    model: Option<PathBuf>,
    /// TOML experiment manifest; flags below override it.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `rst` (all six tables), a table such as `rotation-jpeg`, or `quality`.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long, conflicts_with = "synthetic")]
    images: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<usize>,
    /// Comma-separated recovery modes: template, gt, none.
    #[arg(long, value_delimiter = ',')]
    recovery: Option<Vec<String>>,
    #[arg(long)]
    refine: Option<usize>,
    /// Directory for results.csv and results.md.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_payload(arg: &str) -> Result<Payload> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        std::fs::read_to_string(path)?
    } else {
        arg.to_string()
    };
    let t = text.trim();
    if !t.is_empty() && t.chars().all(|c| c == '0' || c == '1') && t.len() % 4 == 0 && t.len() > 64 {
        Ok(Payload::from_bit_text(t)?)
    } else {
        Ok(Payload::from_hex(t)?)
    }
}

fn load_model(path: &Path) -> Result<TemplateModel32> {
    Ok(TemplateModel32::load(path)?)
}

fn progress(line: &str) {
    eprintln!("{line}");
}

fn cmd_embed(cli: &Cli, cfg: &PipelineConfig, a: &EmbedArgs) -> Result<Value> {
    let model = load_model(&a.model)?;
    let wm = Watermarker::new(&model, &cfg.qim)?;
    let payload = match (&a.bits, &a.hex) {
        (Some(p), _) => read_payload(&p.to_string_lossy())?,
        (None, Some(h)) => Payload::from_hex(h)?,
        (None, None) => Payload::random(wm.capacity(), &mut ChaCha8Rng::seed_from_u64(cli.seed)),
    };
    let src = load_image(&a.input)?;
    let luma = src.luma.convert::<f32>();
    let res = wm.embed(&luma, &payload)?;
    save_image(&a.out, &res.stego_image, Some(&src))?;
    Ok(json!({
        "command": "embed",
        "output": a.out,
        "width": luma.width(),
        "height": luma.height(),
        "key": res.layout_key,
        "payload": payload.to_hex(),
        "bits": payload.len(),
        "psnr": round6(res.psnr),
        "ssim": round6(res.ssim),
    }))
}

fn cmd_decode(cfg: &PipelineConfig, a: &DecodeArgs) -> Result<Value> {
    let model = load_model(&a.model)?;
    let key = a.key.unwrap_or(model.layout_key);
    let wm = Watermarker::with_key(&model, key, &cfg.qim)?;
    let img = load_image(&a.input)?.luma.convert::<f32>();
    let recovery = match a.recovery {
        DecodeRecovery::Template => Recovery::Template {
            refine: a.refine.unwrap_or(cfg.refine),
        },
        DecodeRecovery::None => Recovery::None,
    };
    let rep = wm.decode(&img, &recovery)?;
    if let Some(p) = &a.recovered {
        save_image(p, &rep.recovered_image, None)?;
    }
    let ber_value = match &a.truth {
        Some(t) => Some(round6(ber(rep.payload.bits(), read_payload(t)?.bits())?)),
        None => None,
    };
    Ok(json!({
        "command": "decode",
        "key": key,
        "est_rst": rst_json(&rep.est_rst),
        "payload": rep.payload.to_hex(),
        "mean_confidence": round6(rep.mean_confidence()),
        "ber": ber_value,
    }))
}

fn cmd_pretrain(cli: &Cli, cfg: &PipelineConfig, a: &PretrainArgs) -> Result<Value> {
    let key = a.key.unwrap_or(cfg.key);
    let mut model = TemplateModel32::new(cfg.net.clone(), key, cli.seed)?;
    model.lambda = cfg.train.lambda;
    let mut pc = cfg.train.pretrain.clone();
    if let Some(s) = a.steps {
        pc.steps = s;
    }
    let target = pretrain_target::<f32>(cfg.net.canvas, pc.target_seed, cfg.net.template_amplitude)?;
    let report = pretrain_generator(&mut model, &target, &pc, &mut progress)?;
    if !report.converged {
        eprintln!("warning: budget of {} steps ran out at mse {:.4}", pc.steps, report.final_mse);
    }
    model.save(&a.out)?;
    Ok(json!({
        "command": "pretrain",
        "output": a.out,
        "key": key,
        "parameters": model.parameter_count(),
        "steps": report.steps,
        "final_mse": round6(report.final_mse),
        "converged": report.converged,
        "threshold": pc.threshold,
    }))
}

fn cmd_train(cli: &Cli, cfg: &PipelineConfig, a: &TrainArgs) -> Result<Value> {
    let mut tc = cfg.train.clone();
    tc.seed = cli.seed;
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    let mut model = match &a.model {
        Some(p) => load_model(p)?,
        None => TemplateModel32::new(cfg.net.clone(), a.key.unwrap_or(cfg.key), cli.seed)?,
    };
    if model.meta.pretrain.as_ref().is_some_and(|p| p.converged) {
        tc.pretrain.steps = 0;
    }
    let train: Box<dyn wmsync::core::dataset::ImageSource> = match &a.images {
        Some(d) => Box::new(ImageDir::open(d)?),
        None => Box::new(SyntheticImages::new(cli.seed.wrapping_add(100), a.synthetic, cfg.net.canvas)),
    };
    let held: Box<dyn wmsync::core::dataset::ImageSource> = match &a.heldout_images {
        Some(d) => Box::new(ImageDir::open(d)?),
        None => Box::new(SyntheticImages::new(
            cli.seed.wrapping_add(200),
            a.heldout_synthetic,
            cfg.net.canvas,
        )),
    };
    let report = if tc.pretrain.steps == 0 {
        let pre = model.meta.pretrain.clone().unwrap_or_default();
        let mut r = train_model(&mut model, &*train, &*held, &tc, &mut progress)?;
        r.pretrain = pre;
        r
    } else {
        train_model(&mut model, &*train, &*held, &tc, &mut progress)?
    };
    model.save(&a.out)?;
    if let Some(c) = &a.curve {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "loss", "loss_g", "loss_d", "heldout_loss_d"])?;
        for e in &report.curve {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.8}", e.loss),
                format!("{:.8}", e.loss_g),
                format!("{:.8}", e.loss_d),
                e.heldout_loss_d.map_or(String::new(), |v| format!("{v:.8}")),
            ])?;
        }
        write_atomic(c, &w.into_inner().map_err(|e| Error::Config(e.to_string()))?)?;
    }
    Ok(json!({
        "command": "train",
        "output": a.out,
        "key": model.layout_key,
        "pretrain": report.pretrain,
        "extractor_warmup_loss": report.extractor_warmup_loss,
        "matcher_warmup_loss": report.matcher_warmup_loss,
        "curve": report.curve,
        "optimizer_steps": model.meta.optimizer_steps,
    }))
}

fn cmd_attack(cli: &Cli, a: &AttackArgs) -> Result<Value> {
    let spec = if a.random {
        sample_attack(cli.seed)
    } else {
        let (sx, sy) = a.scale.map_or((a.sx, a.sy), |s| (s, s));
        AttackSpec {
            rst: RstParams::new(a.rotation, sx, sy, a.tx, a.ty),
            noise_var: a.noise,
            jpeg_quality: a.jpeg,
            noise_seed: cli.seed,
        }
    };
    let src = load_image(&a.input)?;
    let mut out = apply_attack(&src.luma, &spec)?;
    if let Some(f) = a.resize {
        if !(f > 0.0) {
            return Err(Error::Config("resize factor must be positive".into()));
        }
        let w = ((out.width() as f64) * f).round().max(1.0) as usize;
        let h = ((out.height() as f64) * f).round().max(1.0) as usize;
        out = out.resize_bicubic(w, h).clamp(0.0, 255.0);
    }
    save_image(&a.out, &out, None)?;
    Ok(json!({
        "command": "attack",
        "output": a.out,
        "attack": spec,
        "resize": a.resize,
        "width": out.width(),
        "height": out.height(),
    }))
}

fn cmd_eval(cli: &Cli, cfg: &PipelineConfig, a: &EvalArgs) -> Result<Value> {
    let mut m = match &a.manifest {
        Some(p) => ExperimentManifest::from_toml(&std::fs::read_to_string(p)?)?,
        None => ExperimentManifest {
            refine: cfg.refine,
            ..ExperimentManifest::default()
        },
    };
    if a.manifest.is_none() || cli.seed != 0 {
        m.seed = cli.seed;
    }
    match a.suite.as_deref() {
        None | Some("rst") | Some("all") => {}
        Some("quality") => {
            m.suites.clear();
            m.quality = true;
        }
        Some(name) => {
            m.suites = vec![SuiteSpec::by_name(name).ok_or_else(|| Error::Config(format!("unknown suite {name}")))?]
        }
    }
    if let Some(d) = &a.images {
        m.images = ImageSet::Dir { path: d.clone() };
    } else if let Some(n) = a.synthetic {
        m.images = ImageSet::Synthetic { seed: 1000, count: n };
    }
    if let Some(r) = &a.recovery {
        m.recovery = r
            .iter()
            .map(|s| match s.as_str() {
                "template" => Ok(RecoveryMode::Template),
                "gt" => Ok(RecoveryMode::Gt),
                "none" => Ok(RecoveryMode::None),
                other => Err(Error::Config(format!("unknown recovery mode {other}"))),
            })
            .collect::<Result<_>>()?;
    }
    if let Some(r) = a.refine {
        m.refine = r;
    }
    if let Some(o) = &a.out {
        m.output = Some(o.clone());
    }
    let model = a.model.as_deref().map(load_model).transpose()?;
    let report = eval::run_robustness_suite(&m, model.as_ref(), &cfg.qim, &mut progress)?;
    let csv = eval::to_csv(&report)?;
    let md = eval::to_markdown(&report);
    if let Some(dir) = &m.output {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("results.csv"), csv.as_bytes())?;
        write_atomic(&dir.join("results.md"), md.as_bytes())?;
    } else {
        eprint!("{md}");
    }
    Ok(json!({
        "command": "eval",
        "manifest": m,
        "quality": report.quality,
        "random_guess": report.random_guess,
        "cells": report.cells,
    }))
}

fn round6(v: f64) -> Value {
    if v.is_finite() {
        json!((v * 1e6).round() / 1e6)
    } else {
        json!(if v > 0.0 { "inf" } else { "nan" })
    }
}

fn rst_json(p: &RstParams) -> Value {
    json!({
        "rotation": round6(p.rotation),
        "scale_x": round6(p.scale_x),
        "scale_y": round6(p.scale_y),
        "translate_x": round6(p.translate_x),
        "translate_y": round6(p.translate_y),
    })
}

fn emit<S: Serialize>(record: &S, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(record)? + "\n";
    print!("{text}");
    if let Some(p) = path {
        write_atomic(p, text.as_bytes())?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    let record = match &cli.command {
        Command::Embed(a) => cmd_embed(cli, &cfg, a)?,
        Command::Decode(a) => cmd_decode(&cfg, a)?,
        Command::Pretrain(a) => cmd_pretrain(cli, &cfg, a)?,
        Command::Train(a) => cmd_train(cli, &cfg, a)?,
        Command::Attack(a) => cmd_attack(cli, a)?,
        Command::Eval(a) => cmd_eval(cli, &cfg, a)?,
    };
    emit(&record, cli.record.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.to_string(), "kind": e.kind()}));
            ExitCode::FAILURE
        }
    }
}
