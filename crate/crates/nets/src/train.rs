//! Pre-training, warm-ups and end-to-end optimization.
//!
//! Attacks in the training graph: the warp is backpropagated through its
//! exact adjoint; additive noise has unit Jacobian; JPEG and the final
//! clipping are treated as identity in the backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use wmsync_core::dataset::ImageSource;
use wmsync_core::dct::midband_noise;
use wmsync_core::geometry::{apply_attack, warp_affine_adjoint, AttackRanges, AttackSpec, Interp};
use wmsync_core::{Grid, Real, RstParams};

use crate::error::{Error, Result};
use crate::layers::Tensor;
use crate::loss::{loss_d_with_grad, loss_e_with_grad, loss_g, loss_g_grad, warped_template};
use crate::model::{normalize, EpochStats, PretrainReport, TemplateModel};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Step budget.
    pub steps: usize,
    pub lr: f64,
    /// Stop once `mean (T_n^o - T_m)^2` falls below this.
    pub threshold: f64,
    pub target_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.01,
            threshold: 0.1,
            target_seed: 0x5EED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmupConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch: 8,
            lr: 2e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherWarmupConfig {
    /// Steps on synthetically warped and degraded template maps.
    pub synthetic_steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Extractor outputs on attacked training images reused for fine-tuning.
    pub real_samples: usize,
    pub real_epochs: usize,
}

impl Default for MatcherWarmupConfig {
    fn default() -> Self {
        Self {
            synthetic_steps: 3000,
            batch: 16,
            lr: 1e-3,
            real_samples: 0,
            real_epochs: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Multiplier on the grid-point loss inside the end-to-end objective;
    /// `None` means canvas^2, i.e. squared pixel displacement.
    pub ld_scale: Option<f64>,
    pub train_generator: bool,
    pub attacks: AttackRanges,
    /// Fraction of attacks drawn from `mild_attacks` instead of `attacks`.
    pub mild_fraction: f64,
    pub mild_attacks: AttackRanges,
    pub pretrain: PretrainConfig,
    /// L_e warm-up of the extractor; zero steps disables it.
    pub extractor_warmup: WarmupConfig,
    pub matcher_warmup: MatcherWarmupConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            lambda: 0.2,
            lr: 1e-3,
            batch: 32,
            epochs: 5,
            ld_scale: None,
            train_generator: true,
            attacks: AttackRanges::default(),
            mild_fraction: 0.0,
            mild_attacks: mild_ranges(),
            pretrain: PretrainConfig::default(),
            extractor_warmup: WarmupConfig {
                steps: 0,
                ..WarmupConfig::default()
            },
            matcher_warmup: MatcherWarmupConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            batch: 8,
            mild_fraction: 0.5,
            extractor_warmup: WarmupConfig::default(),
            matcher_warmup: MatcherWarmupConfig {
                real_samples: 3000,
                real_epochs: 8,
                ..MatcherWarmupConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.lr > 0.0) || self.batch == 0 {
            return bad("learning rate and batch size must be positive");
        }
        if !(0.0..=1.0).contains(&self.mild_fraction) {
            return bad("mild_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    fn ld_scale(&self, canvas: usize) -> f64 {
        self.ld_scale.unwrap_or((canvas * canvas) as f64)
    }

    pub fn sample_attack(&self, rng: &mut impl Rng) -> AttackSpec {
        if self.mild_fraction > 0.0 && rng.random::<f64>() < self.mild_fraction {
            self.mild_attacks.sample(rng)
        } else {
            self.attacks.sample(rng)
        }
    }
}

/// Small geometric distortions: R <= 10 degrees, S in [0.9, 1.1], T <= 5%.
pub fn mild_ranges() -> AttackRanges {
    AttackRanges::geometric((0.0, 10.0), (0.9, 1.1), (0.0, 0.05))
}

/// Status line sink for long-running stages.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

/// Mid-band target `T_m`, scaled by the configured amplitude.
pub fn pretrain_target<T: Real>(canvas: usize, seed: u64, amplitude: f64) -> Result<Grid<T>> {
    let t = midband_noise::<T>(canvas, seed)?;
    let a = T::lit(amplitude);
    Ok(t.map(|v| v * a))
}

fn k_tensor<T: Real>(model: &TemplateModel<T>) -> Tensor<T> {
    let k = model.template_map();
    Tensor::from_vec(1, k.height(), k.width(), k.into_vec())
}

fn check_finite(loss: f64, stage: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{stage} loss became {loss}")))
    }
}

/// Fits the raw generator output to `target` until the mean squared error
/// drops below the threshold or the step budget runs out.
pub fn pretrain_generator<T: Real>(
    model: &mut TemplateModel<T>,
    target: &Grid<T>,
    cfg: &PretrainConfig,
    progress: Progress,
) -> Result<PretrainReport> {
    let c = model.config.canvas;
    if target.dims() != (c, c) {
        return Err(wmsync_core::Error::Shape("pre-training target must cover the canvas".into()).into());
    }
    let k = k_tensor(model);
    let mut opt = Adam::new(cfg.lr);
    let n = target.len() as f64;
    let mut report = PretrainReport::default();
    for step in 0..=cfg.steps {
        let (y, cache) = model.generator.forward(&k);
        let mse = y
            .data
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a.f64() - b.f64()).powi(2))
            .sum::<f64>()
            / n;
        check_finite(mse, "pre-training")?;
        report = PretrainReport {
            steps: step,
            final_mse: mse,
            converged: mse < cfg.threshold,
        };
        if report.converged || step == cfg.steps {
            break;
        }
        if step % 100 == 0 {
            progress(&format!("pretrain step {step}: mse {mse:.4}"));
        }
        let s = T::lit(2.0 / n);
        let dy = Tensor::from_vec(
            1,
            y.h,
            y.w,
            y.data.iter().zip(target.data()).map(|(&a, &b)| (a - b) * s).collect(),
        );
        for p in model.generator.params_mut() {
            p.zero_grad();
        }
        model.generator.backward(&cache, &dy);
        opt.step(&mut model.generator.params_mut());
    }
    model.meta.optimizer_steps += opt.steps();
    model.meta.pretrain = Some(report.clone());
    Ok(report)
}

/// One training example: a canvas-sized cover image and its attack.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub image: Grid<T>,
    pub attack: AttackSpec,
}

/// Which networks receive gradients in [`loss_and_grad`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `L_g` of the raw generator output.
    Energy,
    /// `L_e` of the extracted map (extractor and, through the image, generator).
    Extraction,
    /// `lambda L_g + (1 - lambda) s L_d` through all three networks.
    EndToEnd,
}

/// Loss parts averaged over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub loss_g: f64,
    pub loss_e: f64,
    pub loss_d: f64,
}

/// Differentiable stand-in for [`apply_attack`]'s backward pass.
fn attack_backward<T: Real>(grad: &Grid<T>, attack: &AttackSpec) -> Grid<T> {
    if attack.rst == RstParams::IDENTITY {
        grad.clone()
    } else {
        warp_affine_adjoint(grad, &attack.rst.to_affine(), Interp::Bicubic)
    }
}

/// Forward and backward pass over a batch. Gradients are zeroed first and
/// left in `Param::grad`; `train_generator` controls whether image-path
/// gradients reach the generator.
pub fn loss_and_grad<T: Real>(
    model: &mut TemplateModel<T>,
    samples: &[Sample<T>],
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    model.zero_grad();
    let k = k_tensor(model);
    let k_grid = model.template_map();
    let mask = model.canvas_mask();
    let (t_raw, gcache) = model.generator.forward(&k);
    let t_raw_grid = Grid::from_vec(t_raw.w, t_raw.h, t_raw.data.clone())?;
    let lg = loss_g(&t_raw_grid);
    let mut out = BatchLoss {
        loss_g: lg,
        ..BatchLoss::default()
    };
    if objective == Objective::Energy {
        out.total = lg;
        let d = loss_g_grad(&t_raw_grid);
        model.generator.backward(&gcache, &Tensor::from_vec(1, d.height(), d.width(), d.into_vec()));
        return Ok(out);
    }
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let noise = t_raw_grid.zip_map(&mask, |t, m| t * m)?;
    let b = samples.len() as f64;
    let ld_scale = cfg.ld_scale(model.config.canvas);
    let to_gen = cfg.train_generator;
    let mut d_noise = Grid::<T>::zeros(noise.width(), noise.height());
    for s in samples {
        let stego = s.image.zip_map(&noise, |a, n| a + n)?;
        let attacked = apply_attack(&stego, &s.attack)?;
        let (k_ext, ecache) = model.extractor.forward(&normalize(&attacked));
        let k_ext_grid = Grid::from_vec(k_ext.w, k_ext.h, k_ext.data.clone())?;
        let dk: Vec<T> = match objective {
            Objective::Extraction => {
                let (le, g) = loss_e_with_grad(&k_ext_grid, &k_grid, &s.attack.rst);
                out.loss_e += le / b;
                let w = T::lit(1.0 / b);
                g.data().iter().map(|&v| v * w).collect()
            }
            Objective::EndToEnd => {
                let (est, mcache) = model.matcher.forward(&k_ext.data, k_grid.data());
                let (ld, g) = loss_d_with_grad(&est, &s.attack.rst);
                out.loss_d += ld / b;
                let w = (1.0 - cfg.lambda) * ld_scale / b;
                model.matcher.backward(&mcache, g.map(|v| v * w))
            }
            Objective::Energy => unreachable!("handled above"),
        };
        let dk = Tensor::from_vec(1, k_ext.h, k_ext.w, dk);
        if let Some(dx) = model.extractor.backward(&ecache, &dk, to_gen) {
            let s255 = T::lit(1.0 / 255.0);
            let dx = Grid::from_vec(dx.w, dx.h, dx.data.into_iter().map(|v| v * s255).collect())?;
            let dn = attack_backward(&dx, &s.attack);
            for (acc, &v) in d_noise.data_mut().iter_mut().zip(dn.data()) {
                *acc += v;
            }
        }
    }
    out.total = match objective {
        Objective::Extraction => out.loss_e,
        _ => cfg.lambda * lg + (1.0 - cfg.lambda) * ld_scale * out.loss_d,
    };
    if to_gen {
        let lam = if objective == Objective::EndToEnd { cfg.lambda } else { 0.0 };
        let dg = loss_g_grad(&t_raw_grid);
        let l = T::lit(lam);
        let d_raw: Vec<T> = dg
            .data()
            .iter()
            .zip(d_noise.data())
            .zip(mask.data())
            .map(|((&g, &dn), &m)| g * l + dn * m)
            .collect();
        model.generator.backward(&gcache, &Tensor::from_vec(1, t_raw.h, t_raw.w, d_raw));
    }
    Ok(out)
}

fn load_all<T: Real>(source: &dyn ImageSource, canvas: usize) -> Result<Vec<Grid<T>>> {
    (0..source.len())
        .map(|i| {
            let g = source.load(i)?;
            let g = if g.dims() == (canvas, canvas) {
                g
            } else {
                g.resize_bicubic(canvas, canvas)
            };
            Ok(g.convert::<T>())
        })
        .collect()
}

/// Fixed evaluation pairs for held-out losses.
pub fn heldout_samples<T: Real>(
    source: &dyn ImageSource,
    canvas: usize,
    ranges: &AttackRanges,
    seed: u64,
) -> Result<Vec<Sample<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(load_all::<T>(source, canvas)?
        .into_iter()
        .map(|image| Sample {
            image,
            attack: ranges.sample(&mut rng),
        })
        .collect())
}

/// Mean grid-point loss of the current model on fixed samples (no updates).
pub fn mean_loss_d<T: Real>(model: &TemplateModel<T>, samples: &[Sample<T>], refine: usize) -> Result<f64> {
    let noise = model.generate_noise();
    let mut total = 0.0;
    for s in samples {
        let stego = s.image.zip_map(&noise, |a, n| a + n)?;
        let attacked = apply_attack(&stego, &s.attack)?;
        let est = model.estimate_rst_refined(&attacked, refine)?;
        total += crate::loss::loss_d(&est, &s.attack.rst);
    }
    Ok(total / samples.len().max(1) as f64)
}

/// L_e warm-up of the extractor with the generator frozen.
pub fn warmup_extractor<T: Real>(
    model: &mut TemplateModel<T>,
    images: &[Grid<T>],
    cfg: &TrainConfig,
    progress: Progress,
) -> Result<f64> {
    let w = &cfg.extractor_warmup;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE87);
    let mut opt = Adam::new(w.lr);
    let local = TrainConfig {
        train_generator: false,
        ..cfg.clone()
    };
    let mut last = f64::NAN;
    for step in 0..w.steps {
        let batch: Vec<Sample<T>> = (0..w.batch.max(1))
            .map(|_| Sample {
                image: images[rng.random_range(0..images.len())].clone(),
                attack: cfg.sample_attack(&mut rng),
            })
            .collect();
        let l = loss_and_grad(model, &batch, Objective::Extraction, &local)?;
        check_finite(l.total, "extractor warm-up")?;
        opt.step(&mut model.extractor.params_mut());
        last = if last.is_nan() { l.loss_e } else { 0.9 * last + 0.1 * l.loss_e };
        if step % 25 == 0 {
            progress(&format!("extractor warm-up step {step}: L_e {last:.4}"));
        }
    }
    model.meta.extractor_warmup_steps += w.steps;
    model.meta.optimizer_steps += opt.steps();
    Ok(last)
}

/// Separable [1 2 1] / 4 smoothing, edges clamped.
fn smooth<T: Real>(k: &Grid<T>) -> Grid<T> {
    let (w, h) = k.dims();
    let tap = |g: &Grid<T>, x: usize, y: usize, dx: bool| {
        let at = |i: isize| {
            if dx {
                g.get(i.clamp(0, w as isize - 1) as usize, y).f64()
            } else {
                g.get(x, i.clamp(0, h as isize - 1) as usize).f64()
            }
        };
        let c = if dx { x } else { y } as isize;
        T::lit((at(c - 1) + 2.0 * at(c) + at(c + 1)) / 4.0)
    };
    let horiz = Grid::from_fn(w, h, |x, y| tap(k, x, y, true));
    Grid::from_fn(w, h, |x, y| tap(&horiz, x, y, false))
}

fn degrade<T: Real>(k: &Grid<T>, rng: &mut impl Rng) -> Grid<T> {
    let mut k = k.clone();
    for _ in 0..rng.random_range(0..4) {
        k = smooth(&k);
    }
    let k = &k;
    let a: f64 = rng.random_range(0.4..1.0);
    let b: f64 = rng.random_range(0.0..(1.0 - a));
    let sigma: f64 = rng.random_range(0.0..0.2);
    let n = Normal::new(0.0, sigma.max(1e-12)).expect("finite sigma");
    let mut out = k.clone();
    for v in out.data_mut() {
        *v = T::lit((v.f64() * a + b + n.sample(rng)).clamp(0.0, 1.0));
    }
    out
}

fn matcher_step<T: Real>(
    model: &mut TemplateModel<T>,
    pairs: &[(Grid<T>, RstParams)],
    opt: &mut Adam,
) -> Result<f64> {
    let k_orig = model.template_map();
    for p in model.matcher.params_mut() {
        p.zero_grad();
    }
    let b = pairs.len() as f64;
    let mut total = 0.0;
    for (k_ext, gt) in pairs {
        let (est, cache) = model.matcher.forward(k_ext.data(), k_orig.data());
        let (ld, g) = loss_d_with_grad(&est, gt);
        total += ld / b;
        model.matcher.backward(&cache, g.map(|v| v / b));
    }
    check_finite(total, "matcher warm-up")?;
    opt.step(&mut model.matcher.params_mut());
    Ok(total)
}

/// Matcher warm-up on warped template maps: synthetic degradations first,
/// then (optionally) real extractor outputs on attacked training images.
pub fn warmup_matcher<T: Real>(
    model: &mut TemplateModel<T>,
    images: &[Grid<T>],
    cfg: &TrainConfig,
    progress: Progress,
) -> Result<f64> {
    let w = &cfg.matcher_warmup;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3A7C);
    let mut opt = Adam::new(w.lr);
    let k = model.template_map();
    let mut last = f64::NAN;
    for step in 0..w.synthetic_steps {
        let pairs: Vec<(Grid<T>, RstParams)> = (0..w.batch.max(1))
            .map(|_| {
                let gt = cfg.sample_attack(&mut rng).rst;
                (degrade(&warped_template(&k, &gt), &mut rng), gt)
            })
            .collect();
        let l = matcher_step(model, &pairs, &mut opt)?;
        last = if last.is_nan() { l } else { 0.98 * last + 0.02 * l };
        if step % 500 == 0 {
            progress(&format!("matcher warm-up step {step}: L_d {last:.5}"));
        }
    }
    let mut steps = w.synthetic_steps;
    if w.real_samples > 0 && w.real_epochs > 0 && !images.is_empty() {
        let noise = model.generate_noise();
        let mut pool = Vec::with_capacity(w.real_samples);
        for _ in 0..w.real_samples {
            let image = &images[rng.random_range(0..images.len())];
            let attack = cfg.sample_attack(&mut rng);
            let attacked = apply_attack(&image.zip_map(&noise, |a, n| a + n)?, &attack)?;
            pool.push((model.extract_template(&attacked)?, attack.rst));
        }
        let bs = w.batch.max(1);
        for epoch in 0..w.real_epochs {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let mut sum = 0.0;
            let mut count = 0;
            for chunk in order.chunks(bs) {
                let pairs: Vec<(Grid<T>, RstParams)> = chunk.iter().map(|&i| pool[i].clone()).collect();
                sum += matcher_step(model, &pairs, &mut opt)?;
                count += 1;
                steps += 1;
            }
            last = sum / count as f64;
            progress(&format!("matcher fine-tune epoch {epoch}: L_d {last:.5}"));
        }
    }
    model.meta.matcher_warmup_steps += steps;
    model.meta.optimizer_steps += opt.steps();
    Ok(last)
}

/// End-to-end epochs over `images` with freshly sampled attacks.
pub fn train_end_to_end<T: Real>(
    model: &mut TemplateModel<T>,
    images: &[Grid<T>],
    heldout: &[Sample<T>],
    cfg: &TrainConfig,
    progress: Progress,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    model.lambda = cfg.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xE2E);
    let mut opt = Adam::new(cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let start = model.meta.epochs;
    if !heldout.is_empty() {
        curve.push(EpochStats {
            epoch: start,
            heldout_loss_d: Some(mean_loss_d(model, heldout, 0)?),
            ..EpochStats::default()
        });
    }
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut acc = BatchLoss::default();
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<Sample<T>> = chunk
                .iter()
                .map(|&i| Sample {
                    image: images[i].clone(),
                    attack: cfg.sample_attack(&mut rng),
                })
                .collect();
            let l = loss_and_grad(model, &batch, Objective::EndToEnd, cfg)?;
            check_finite(l.total, "end-to-end")?;
            let mut params = model.extractor.params_mut();
            params.extend(model.matcher.params_mut());
            if cfg.train_generator {
                params.extend(model.generator.params_mut());
            }
            opt.step(&mut params);
            acc.total += l.total;
            acc.loss_g += l.loss_g;
            acc.loss_d += l.loss_d;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let stats = EpochStats {
            epoch: start + epoch + 1,
            loss: acc.total / n,
            loss_g: acc.loss_g / n,
            loss_d: acc.loss_d / n,
            heldout_loss_d: if heldout.is_empty() {
                None
            } else {
                Some(mean_loss_d(model, heldout, 0)?)
            },
        };
        progress(&format!(
            "epoch {}: loss {:.4} L_g {:.4} L_d {:.5} held-out L_d {}",
            stats.epoch,
            stats.loss,
            stats.loss_g,
            stats.loss_d,
            stats.heldout_loss_d.map_or("-".into(), |v| format!("{v:.5}"))
        ));
        curve.push(stats);
    }
    model.meta.epochs = start + cfg.epochs;
    model.meta.optimizer_steps += opt.steps();
    model.meta.loss_curve.extend(curve.iter().cloned());
    Ok(curve)
}

/// Everything after model creation: pre-training, warm-ups, end-to-end.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub pretrain: PretrainReport,
    pub extractor_warmup_loss: Option<f64>,
    pub matcher_warmup_loss: Option<f64>,
    pub curve: Vec<EpochStats>,
}

pub fn train_model<T: Real>(
    model: &mut TemplateModel<T>,
    train: &dyn ImageSource,
    heldout: &dyn ImageSource,
    cfg: &TrainConfig,
    progress: Progress,
) -> Result<TrainReport> {
    cfg.validate()?;
    let canvas = model.config.canvas;
    let target = pretrain_target::<T>(canvas, cfg.pretrain.target_seed, model.config.template_amplitude)?;
    let pretrain = pretrain_generator(model, &target, &cfg.pretrain, progress)?;
    if !pretrain.converged {
        progress(&format!(
            "warning: pre-training stopped at mse {:.4} after {} steps",
            pretrain.final_mse, pretrain.steps
        ));
    }
    let images = load_all::<T>(train, canvas)?;
    let mut report = TrainReport {
        pretrain,
        ..TrainReport::default()
    };
    if cfg.extractor_warmup.steps > 0 {
        report.extractor_warmup_loss = Some(warmup_extractor(model, &images, cfg, progress)?);
    }
    if cfg.matcher_warmup.synthetic_steps > 0 || cfg.matcher_warmup.real_samples > 0 {
        report.matcher_warmup_loss = Some(warmup_matcher(model, &images, cfg, progress)?);
    }
    let held = heldout_samples::<T>(heldout, canvas, &cfg.attacks, cfg.seed ^ 0x4E1D)?;
    report.curve = train_end_to_end(model, &images, &held, cfg, progress)?;
    Ok(report)
}
