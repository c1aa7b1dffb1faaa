//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The desk model is trained once and cached under the cargo target tmpdir;
//! set `WMSYNC_ACCEPTANCE_MODEL` to use another checkpoint, or
//! `WMSYNC_ACCEPTANCE_RETRAIN=1` to ignore the cache.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmsync::core::curvelet::CurveletTransform;
use wmsync::core::dataset::{synthetic_image, ImageSource, SyntheticImages};
use wmsync::core::geometry::{apply_attack, grid_point_error, AttackSpec};
use wmsync::core::metrics::ber;
use wmsync::core::qim::{level_parity, quantize_band};
use wmsync::core::{Grid, Payload, QimConfig, RstParams};
use wmsync::eval::{self, ExperimentManifest, Geometric, RecoveryMode, Signal, SuiteSpec};
use wmsync::nets::train::{loss_and_grad, mild_ranges, train_model, Objective, Sample, TrainConfig};
use wmsync::nets::{NetConfig, TemplateModel32, TemplateModel64};
use wmsync::pipeline::DEFAULT_REFINE;
use wmsync::{Recovery, Watermarker};

type Outcome = Result<(bool, String), String>;

const TRAIN_SEED: u64 = 1;
const MODEL_SEED: u64 = 1;
const KEY: u64 = 7;

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn c1_curvelet() -> Outcome {
    let t = Instant::now();
    let tr = CurveletTransform::<f64>::new(64).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let block = Grid::from_fn(64, 64, |_, _| rng.random_range(0.0..255.0));
        let back = tr.inverse(&tr.forward(&block).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let num: f64 = block.data().iter().zip(back.data()).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = block.data().iter().map(|a| a * a).sum();
        worst = worst.max((num / den).sqrt());
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    Ok((worst < 1e-8 && fast, format!("max relative error {worst:.2e}, {time}")))
}

fn c2_qim() -> Outcome {
    let t = Instant::now();
    let mut failures = 0usize;
    let mut cases = 0usize;
    for q in [1.0, 2.0, 3.0, 5.0] {
        for i in 0..=3000 {
            let a = i as f64 * 0.01;
            for b in [0u8, 1] {
                let qa = quantize_band(a, q, b);
                if level_parity(qa, q) != b || (qa - a).abs() > q {
                    failures += 1;
                }
                cases += 1;
            }
        }
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    Ok((failures == 0 && fast, format!("{failures} of {cases} cases wrong, {time}")))
}

fn c3_clean_round_trip(model: &TemplateModel32) -> Outcome {
    let t = Instant::now();
    let wm = Watermarker::new(model, &QimConfig::default()).map_err(|e| e.to_string())?;
    if wm.capacity() != 256 {
        return Ok((false, format!("capacity {} bits, expected 256", wm.capacity())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut errors = 0.0;
    for i in 0..100 {
        let image = synthetic_image(512, 512, 3000 + i).convert::<f32>();
        let payload = Payload::random(256, &mut rng);
        let stego = wm.embed(&image, &payload).map_err(|e| e.to_string())?;
        let rep = wm.decode(&stego.stego_image, &Recovery::None).map_err(|e| e.to_string())?;
        errors += ber(rep.payload.bits(), payload.bits()).map_err(|e| e.to_string())?;
    }
    let mean = errors / 100.0;
    let (fast, time) = within(t, Duration::from_secs(300));
    Ok((mean == 0.0 && fast, format!("mean BER {mean} over 100 payloads, {time}")))
}

/// Variance of the masked template noise over template-block pixels.
fn template_variance(model: &TemplateModel32) -> f64 {
    let noise = model.generate_noise();
    let mask = model.layout_for(model.layout_key).resize(model.config.canvas).expect("canvas tiles");
    let vals: Vec<f64> = noise
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m == 1)
        .map(|(&v, _)| v as f64)
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn c4_quality(model: &TemplateModel32, report: &eval::EvalReport) -> Outcome {
    let q = report.quality.as_ref().ok_or("no quality figures")?;
    let var = template_variance(model);
    let pass = q.psnr.n >= 50 && q.psnr.mean >= 40.0 && q.ssim.mean >= 0.97 && var < 10.0;
    Ok((
        pass,
        format!(
            "PSNR {:.2} dB, SSIM {:.4} over {} images, template variance {var:.2}",
            q.psnr.mean, q.ssim.mean, q.psnr.n
        ),
    ))
}

fn robustness_report(model: &TemplateModel32) -> Result<(eval::EvalReport, Duration), String> {
    let t = Instant::now();
    let manifest = ExperimentManifest {
        images: eval::ImageSet::Synthetic { seed: 1000, count: 50 },
        suites: vec![
            SuiteSpec::table(Geometric::Scaling, Signal::Jpeg),
            SuiteSpec::table(Geometric::Scaling, Signal::Noise),
            SuiteSpec::table(Geometric::Rotation, Signal::Jpeg),
            SuiteSpec::table(Geometric::Rotation, Signal::Noise),
        ],
        recovery: vec![RecoveryMode::Gt, RecoveryMode::None],
        seed: 5,
        quality: true,
        ..ExperimentManifest::default()
    };
    let report = eval::run_on_source(
        &manifest,
        &*manifest.images.open().map_err(|e| e.to_string())?,
        Some(model),
        &QimConfig::default(),
        &mut |_| {},
    )
    .map_err(|e| e.to_string())?;
    Ok((report, t.elapsed()))
}

fn mean_ber(r: &eval::EvalReport, suite: &str, value: f64, level: f64, mode: RecoveryMode) -> Result<f64, String> {
    r.cell(suite, value, level, mode)
        .map(|c| c.ber.mean)
        .ok_or_else(|| format!("missing cell {suite} {value} {level}"))
}

fn c5_gt_robustness(r: &eval::EvalReport, elapsed: Duration) -> Outcome {
    let mut pass = elapsed < Duration::from_secs(1800);
    let mut parts = Vec::new();
    for s in [0.9, 1.2, 1.5] {
        let b = mean_ber(r, "scaling-jpeg", s, 100.0, RecoveryMode::Gt)?;
        pass &= b <= 0.10;
        parts.push(format!("scale {s}: {b:.3}"));
    }
    let b = mean_ber(r, "rotation-jpeg", 90.0, 100.0, RecoveryMode::Gt)?;
    pass &= b <= 0.10;
    parts.push(format!("rotation 90: {b:.3}"));
    let n = r.cells.first().map_or(0, |c| c.ber.n);
    pass &= n >= 50;
    Ok((pass, format!("{} ({n} images, {:.0}s)", parts.join(", "), elapsed.as_secs_f64())))
}

fn c6_monotonicity(r: &eval::EvalReport) -> Outcome {
    let mut violations = Vec::new();
    let mut checks = 0;
    for (geometric, values) in [
        ("rotation", vec![10.0, 30.0, 50.0, 70.0, 90.0]),
        ("scaling", vec![0.9, 1.2, 1.5]),
    ] {
        for &v in &values {
            for (signal, levels) in [("noise", vec![25.0, 50.0, 100.0, 200.0]), ("jpeg", vec![100.0, 70.0, 30.0])] {
                let suite = format!("{geometric}-{signal}");
                // without recovery the rotated cells sit at chance level, where order is noise
                let bers = levels
                    .iter()
                    .map(|&l| mean_ber(r, &suite, v, l, RecoveryMode::Gt))
                    .collect::<Result<Vec<_>, _>>()?;
                checks += 1;
                if bers.windows(2).any(|w| w[1] < w[0]) {
                    violations.push(format!("{suite} {v} GT: {bers:.3?}"));
                }
            }
        }
    }
    for v in [10.0, 30.0, 50.0, 70.0] {
        let gt = mean_ber(r, "rotation-jpeg", v, 100.0, RecoveryMode::Gt)?;
        let none = mean_ber(r, "rotation-jpeg", v, 100.0, RecoveryMode::None)?;
        checks += 1;
        if gt > none {
            violations.push(format!("rotation {v}: GT {gt:.3} > none {none:.3}"));
        }
    }
    let detail = if violations.is_empty() {
        format!("{checks} sequences ordered")
    } else {
        format!("{} of {checks} violated: {}", violations.len(), violations.join("; "))
    };
    Ok((violations.is_empty(), detail))
}

fn gradcheck(objective: Objective) -> Result<f64, String> {
    let mut model = TemplateModel64::new(NetConfig::tiny(), 5, 9).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lambda: 0.3,
        ..TrainConfig::default()
    };
    let side = model.config.canvas;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<Sample<f64>> = [
        RstParams::new(12.0, 1.1, 0.9, 0.05, 0.02),
        RstParams::new(-7.0, 0.95, 1.05, -0.03, 0.04),
    ]
    .iter()
    .enumerate()
    .map(|(i, &rst)| Sample {
        image: Grid::from_fn(side, side, |_, _| rng.random_range(20.0..235.0)),
        attack: AttackSpec {
            rst,
            noise_var: 4.0,
            jpeg_quality: None,
            noise_seed: i as u64,
        },
    })
    .collect();
    loss_and_grad(&mut model, &batch, objective, &cfg).map_err(|e| e.to_string())?;
    let grad: Vec<f64> = model.params().iter().flat_map(|p| p.grad.iter().copied()).collect();
    let shifted = |dir: &[f64], eps: f64| {
        let mut m = model.clone();
        for (v, d) in m.params_mut().into_iter().flat_map(|p| p.value.iter_mut()).zip(dir) {
            *v += eps * d;
        }
        m
    };
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let dir: Vec<f64> = (0..grad.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let lp = loss_and_grad(&mut shifted(&dir, eps), &batch, objective, &cfg).map_err(|e| e.to_string())?;
        let lm = loss_and_grad(&mut shifted(&dir, -eps), &batch, objective, &cfg).map_err(|e| e.to_string())?;
        let numeric = (lp.total - lm.total) / (2.0 * eps);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    Ok(worst)
}

fn c7_gradients() -> Outcome {
    let params = TemplateModel64::new(NetConfig::tiny(), 5, 9).map_err(|e| e.to_string())?.parameter_count();
    let mut pass = params <= 10_000;
    let mut parts = vec![format!("{params} parameters")];
    for (name, o) in [("L_g", Objective::Energy), ("L_e", Objective::Extraction), ("end-to-end", Objective::EndToEnd)] {
        let worst = gradcheck(o)?;
        pass &= worst < 1e-4;
        parts.push(format!("{name} {worst:.1e}"));
    }
    Ok((pass, parts.join(", ")))
}

fn c8_pretrain(model: &TemplateModel32, cfg: &TrainConfig) -> Outcome {
    let p = model.meta.pretrain.as_ref().ok_or("model has no pre-training record")?;
    Ok((
        p.converged && p.final_mse < cfg.pretrain.threshold && p.steps <= cfg.pretrain.steps,
        format!(
            "MSE {:.4} after {} steps (budget {}, seed {:#x})",
            p.final_mse, p.steps, cfg.pretrain.steps, cfg.pretrain.target_seed
        ),
    ))
}

fn c9_training(model: &TemplateModel32, train_images: usize) -> Outcome {
    let epochs = model.meta.epochs;
    let noise = model.generate_noise();
    let held = SyntheticImages::new(5000, 100, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ranges = mild_ranges();
    let (mut est_err, mut id_err) = (0.0, 0.0);
    for i in 0..held.len() {
        let image = held.load(i).map_err(|e| e.to_string())?.convert::<f32>();
        let attack = ranges.sample(&mut rng);
        let stego = image.zip_map(&noise, |a, n| a + n).map_err(|e| e.to_string())?;
        let attacked = apply_attack(&stego, &attack).map_err(|e| e.to_string())?;
        let est = model.estimate_rst_refined(&attacked, DEFAULT_REFINE).map_err(|e| e.to_string())?;
        est_err += grid_point_error(&est, &attack.rst, 10);
        id_err += grid_point_error(&RstParams::IDENTITY, &attack.rst, 10);
    }
    let ratio = est_err / id_err;

    let manifest = ExperimentManifest {
        images: eval::ImageSet::Synthetic { seed: 6000, count: 50 },
        suites: vec![SuiteSpec {
            geometric: Geometric::Rotation,
            values: vec![30.0],
            signal: Signal::Noise,
            levels: vec![0.0],
        }],
        recovery: vec![RecoveryMode::Template, RecoveryMode::Gt],
        seed: 9,
        refine: DEFAULT_REFINE,
        quality: false,
        ..ExperimentManifest::default()
    };
    let r = eval::run_on_source(
        &manifest,
        &*manifest.images.open().map_err(|e| e.to_string())?,
        Some(model),
        &QimConfig::default(),
        &mut |_| {},
    )
    .map_err(|e| e.to_string())?;
    let suite = manifest.suites[0].name();
    let tpl = mean_ber(&r, &suite, 30.0, 0.0, RecoveryMode::Template)?;
    let gt = mean_ber(&r, &suite, 30.0, 0.0, RecoveryMode::Gt)?;
    let pass = train_images >= 200 && epochs >= 5 && ratio <= 0.5 && tpl <= 2.0 * gt;
    Ok((
        pass,
        format!(
            "{train_images} images x {epochs} epochs; mild grid error {:.5} vs identity {:.5} (ratio {ratio:.3}); \
             rotation 30 BER template {tpl:.3} vs GT {gt:.3} (ratio {:.2})",
            est_err / 100.0,
            id_err / 100.0,
            tpl / gt.max(1e-12)
        ),
    ))
}

fn c10_size_adaptation(model: &TemplateModel32) -> Outcome {
    let wm = Watermarker::new(model, &QimConfig::default()).map_err(|e| e.to_string())?;
    let image = synthetic_image(1024, 768, 4242).convert::<f32>();
    let payload = Payload::random(wm.capacity(), &mut ChaCha8Rng::seed_from_u64(10));
    let res = wm.embed(&image, &payload).map_err(|e| e.to_string())?;
    let base = image.resize_bicubic(512, 512);
    let stego512 = wm.embed_canvas(&base, &payload).map_err(|e| e.to_string())?;
    let expected = stego512
        .zip_map(&base, |s, o| s - o)
        .map_err(|e| e.to_string())?
        .resize_bilinear(1024, 768);
    let signal_exact = res.signal == expected;
    let rebuilt_exact = res.unclipped == image.zip_map(&expected, |o, s| o + s).map_err(|e| e.to_string())?;
    let delta_err = res
        .unclipped
        .data()
        .iter()
        .zip(image.data())
        .zip(expected.data())
        .map(|((u, o), s)| ((u - o) - s).abs())
        .fold(0.0f32, f32::max);
    let rep = wm.decode(&res.stego_image, &Recovery::None).map_err(|e| e.to_string())?;
    let b = ber(rep.payload.bits(), payload.bits()).map_err(|e| e.to_string())?;
    Ok((
        signal_exact && rebuilt_exact && b <= 0.05,
        format!(
            "signal identical: {signal_exact}, original + signal identical: {rebuilt_exact} \
             (max float residue of the difference {delta_err:.1e}), BER {b:.4}"
        ),
    ))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wmsync"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("wmsync {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn c11_determinism(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let config = p("tiny.toml");
    std::fs::write(
        &config,
        "[net]\ncanvas = 128\ntemplate_side = 16\nblocks = 4\ngen_widths = [2, 2, 2]\next_widths = [2, 2, 2]\n\
         feature_side = 4\nhead_channels = 2\ntemplate_amplitude = 2.0\n\
         [train]\nbatch = 2\nepochs = 1\n[train.pretrain]\nsteps = 20\n\
         [train.extractor_warmup]\nsteps = 2\n\
         [train.matcher_warmup]\nsynthetic_steps = 4\nreal_samples = 4\nreal_epochs = 1\n",
    )
    .map_err(|e| e.to_string())?;
    let cover = p("cover.png");
    let img = synthetic_image(96, 80, 77);
    image::GrayImage::from_raw(96, 80, img.to_u8())
        .ok_or("cover buffer")?
        .save(&cover)
        .map_err(|e| e.to_string())?;
    let (pre, model, stego, attacked, evald) = (p("pre.json"), p("model.json"), p("stego.png"), p("attacked.png"), p("eval"));
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("pretrain", vec!["--config", &config, "--seed", "3", "pretrain", "--out", &pre]),
        (
            "train",
            vec![
                "--config", &config, "--seed", "3", "train", "--model", &pre, "--out", &model, "--synthetic", "4",
                "--heldout-synthetic", "2",
            ],
        ),
        ("embed", vec!["--config", &config, "--seed", "3", "embed", "--in", &cover, "--out", &stego, "--model", &model]),
        ("attack", vec!["--seed", "3", "attack", "--in", &stego, "--out", &attacked, "--random"]),
        ("decode", vec!["--config", &config, "--seed", "3", "decode", "--in", &attacked, "--model", &model]),
        (
            "eval",
            vec![
                "--config", &config, "--seed", "3", "eval", "--model", &model, "--suite", "rotation-jpeg",
                "--synthetic", "2", "--recovery", "template,gt,none", "--out", &evald,
            ],
        ),
    ];
    let mut differing = Vec::new();
    for (name, args) in &commands {
        let first = run_cli(args)?;
        let second = run_cli(args)?;
        if first != second || first.is_empty() {
            differing.push(*name);
        }
    }
    let detail = if differing.is_empty() {
        format!("{} commands, identical records on repeat", commands.len())
    } else {
        format!("records differ for {}", differing.join(", "))
    };
    Ok((differing.is_empty(), detail))
}

fn cache_path() -> PathBuf {
    std::env::var_os("WMSYNC_ACCEPTANCE_MODEL")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk-model.json"))
}

fn desk_model(cfg: &TrainConfig) -> Result<(TemplateModel32, usize), String> {
    let train = SyntheticImages::new(100, 200, 512);
    let path = cache_path();
    let retrain = std::env::var_os("WMSYNC_ACCEPTANCE_RETRAIN").is_some();
    if !retrain && path.exists() {
        let model = TemplateModel32::load(&path).map_err(|e| e.to_string())?;
        if model.meta.seed == MODEL_SEED && model.meta.epochs >= cfg.epochs {
            println!("using trained model {}", path.display());
            return Ok((model, train.len()));
        }
    }
    let t = Instant::now();
    println!("training the desk model (cache: {})", path.display());
    let mut model = TemplateModel32::new(NetConfig::default(), KEY, MODEL_SEED).map_err(|e| e.to_string())?;
    let held = SyntheticImages::new(200, 20, 512);
    let mut progress = |s: &str| println!("  [{:>5.0}s] {s}", t.elapsed().as_secs_f64());
    train_model(&mut model, &train, &held, cfg, &mut progress).map_err(|e| e.to_string())?;
    model.save(&path).map_err(|e| e.to_string())?;
    Ok((model, train.len()))
}

fn main() {
    let start = Instant::now();
    let cfg = TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::desk()
    };
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "curvelet round trip", c1_curvelet()));
    results.push((2, "QIM exhaustive", c2_qim()));
    results.push((7, "gradient check", c7_gradients()));
    match desk_model(&cfg) {
        Ok((model, n_train)) => {
            results.push((3, "clean round trip", c3_clean_round_trip(&model)));
            results.push((10, "size adaptation", c10_size_adaptation(&model)));
            results.push((8, "pre-training", c8_pretrain(&model, &cfg)));
            match robustness_report(&model) {
                Ok((report, elapsed)) => {
                    results.push((4, "quality", c4_quality(&model, &report)));
                    results.push((5, "GT-recovery robustness", c5_gt_robustness(&report, elapsed)));
                    results.push((6, "monotonicity", c6_monotonicity(&report)));
                }
                Err(e) => {
                    for (n, name) in [(4, "quality"), (5, "GT-recovery robustness"), (6, "monotonicity")] {
                        results.push((n, name, Err(e.clone())));
                    }
                }
            }
            results.push((9, "desk-scale training", c9_training(&model, n_train)));
        }
        Err(e) => {
            for (n, name) in [
                (3, "clean round trip"),
                (4, "quality"),
                (5, "GT-recovery robustness"),
                (6, "monotonicity"),
                (8, "pre-training"),
                (9, "desk-scale training"),
                (10, "size adaptation"),
            ] {
                results.push((n, name, Err(format!("no model: {e}"))));
            }
        }
    }
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cli");
    results.push((11, "CLI determinism", c11_determinism(&dir)));
    results.sort_by_key(|r| r.0);

    println!();
    let mut failed = 0;
    for (n, name, outcome) in &results {
        let (ok, detail) = match outcome {
            Ok((ok, d)) => (*ok, d.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!("criterion {n:>2} {}  {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!(
        "\n{} passed, {failed} failed in {:.0}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
