//! Robustness and quality experiments laid out like the usual BER tables:
//! one geometric attack per row group, one signal attack level per column,
//! one row per recovery mode.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wmsync_core::dataset::{ImageSource, SyntheticImages};
use wmsync_core::geometry::{add_gaussian_noise, apply_rst, jpeg_round_trip};
use wmsync_core::metrics::ber;
use wmsync_core::{Grid, Payload, QimConfig, Real, RstParams, CANVAS};
use wmsync_nets::TemplateModel;

use crate::error::{Error, Result};
use crate::io::ImageDir;
use crate::pipeline::{to_canvas, Recovery, Watermarker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometric {
    Rotation,
    Scaling,
    /// Equal fractional shift in x and y.
    Translation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    /// Additive Gaussian noise; levels are variances.
    Noise,
    /// JPEG; levels are qualities.
    Jpeg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryMode {
    Template,
    Gt,
    None,
}

impl RecoveryMode {
    pub fn label(self) -> &'static str {
        match self {
            RecoveryMode::Template => "With template",
            RecoveryMode::Gt => "With GT",
            RecoveryMode::None => "No recovery",
        }
    }

    fn tag(self) -> &'static str {
        match self {
            RecoveryMode::Template => "template",
            RecoveryMode::Gt => "gt",
            RecoveryMode::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub geometric: Geometric,
    /// Degrees, scale factors, or translation fractions.
    pub values: Vec<f64>,
    pub signal: Signal,
    pub levels: Vec<f64>,
}

impl SuiteSpec {
    pub fn name(&self) -> String {
        format!("{}-{}", tag_geometric(self.geometric), tag_signal(self.signal))
    }

    /// Row and column labels of the published tables.
    pub fn table(geometric: Geometric, signal: Signal) -> Self {
        let values = match geometric {
            Geometric::Rotation => vec![10.0, 30.0, 50.0, 70.0, 90.0],
            Geometric::Scaling => vec![0.7, 0.9, 1.2, 1.5],
            Geometric::Translation => vec![0.03, 0.09, 0.15, 0.21, 0.27],
        };
        let levels = match signal {
            Signal::Noise => vec![25.0, 50.0, 100.0, 200.0],
            Signal::Jpeg => vec![100.0, 70.0, 30.0],
        };
        Self {
            geometric,
            values,
            signal,
            levels,
        }
    }

    /// Parses `rotation-noise`, `scaling-jpeg`, ... into the full table.
    pub fn by_name(name: &str) -> Option<Self> {
        let (g, s) = name.split_once('-')?;
        let g = match g {
            "rotation" => Geometric::Rotation,
            "scaling" => Geometric::Scaling,
            "translation" => Geometric::Translation,
            _ => return None,
        };
        let s = match s {
            "noise" => Signal::Noise,
            "jpeg" => Signal::Jpeg,
            _ => return None,
        };
        Some(Self::table(g, s))
    }

    /// All six tables.
    pub fn all_tables() -> Vec<Self> {
        let mut v = Vec::new();
        for s in [Signal::Noise, Signal::Jpeg] {
            for g in [Geometric::Rotation, Geometric::Scaling, Geometric::Translation] {
                v.push(Self::table(g, s));
            }
        }
        v
    }
}

fn tag_geometric(g: Geometric) -> &'static str {
    match g {
        Geometric::Rotation => "rotation",
        Geometric::Scaling => "scaling",
        Geometric::Translation => "translation",
    }
}

fn tag_signal(s: Signal) -> &'static str {
    match s {
        Signal::Noise => "noise",
        Signal::Jpeg => "jpeg",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ImageSet {
    Dir { path: PathBuf },
    Synthetic { seed: u64, count: usize },
}

impl Default for ImageSet {
    fn default() -> Self {
        ImageSet::Synthetic { seed: 1000, count: 50 }
    }
}

impl ImageSet {
    pub fn open(&self) -> Result<Box<dyn ImageSource>> {
        Ok(match self {
            ImageSet::Dir { path } => Box::new(ImageDir::open(path)?),
            ImageSet::Synthetic { seed, count } => Box::new(SyntheticImages::new(*seed, *count, CANVAS)),
        })
    }
}

/// Everything that determines an evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentManifest {
    pub images: ImageSet,
    pub suites: Vec<SuiteSpec>,
    pub recovery: Vec<RecoveryMode>,
    pub seed: u64,
    /// Layout key; the model's own when absent.
    pub key: Option<u64>,
    pub refine: usize,
    /// Also report PSNR/SSIM of the stego images.
    pub quality: bool,
    /// Directory for `results.csv` and `results.md`.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            images: ImageSet::default(),
            suites: SuiteSpec::all_tables(),
            recovery: vec![RecoveryMode::Template, RecoveryMode::Gt],
            seed: 0,
            key: None,
            refine: crate::pipeline::DEFAULT_REFINE,
            quality: true,
            output: None,
        }
    }
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            n: xs.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub suite: String,
    pub value: f64,
    pub level: f64,
    pub recovery: RecoveryMode,
    pub ber: Stat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr: Stat,
    pub ssim: Stat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<Cell>,
    pub quality: Option<Quality>,
    /// BER of uniformly random guesses against the true payloads.
    pub random_guess: Stat,
}

impl EvalReport {
    pub fn cell(&self, suite: &str, value: f64, level: f64, recovery: RecoveryMode) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.suite == suite && c.value == value && c.level == level && c.recovery == recovery)
    }
}

/// One geometric plus one signal attack, with the ground truth in canvas
/// terms. Scaling resizes the image (bicubic), so once the decoder resizes
/// back the ground truth is the identity.
pub fn attack_cell<T: Real>(
    stego: &Grid<T>,
    geometric: Geometric,
    value: f64,
    signal: Signal,
    level: f64,
    noise_seed: u64,
) -> Result<(Grid<T>, RstParams)> {
    let (w, h) = stego.dims();
    let (mut out, gt) = match geometric {
        Geometric::Rotation => {
            let p = RstParams::rotation(value);
            (apply_rst(stego, &p), p)
        }
        Geometric::Translation => {
            let p = RstParams::translation(value, value);
            (apply_rst(stego, &p), p)
        }
        Geometric::Scaling => {
            if !(value > 0.0) {
                return Err(Error::Config(format!("scale {value} must be positive")));
            }
            let nw = ((w as f64) * value).round().max(1.0) as usize;
            let nh = ((h as f64) * value).round().max(1.0) as usize;
            (stego.resize_bicubic(nw, nh), RstParams::IDENTITY)
        }
    };
    out = match signal {
        Signal::Noise => add_gaussian_noise(&out, level, noise_seed),
        Signal::Jpeg => {
            if !(1.0..=100.0).contains(&level) {
                return Err(Error::Config(format!("JPEG quality {level} out of range")));
            }
            jpeg_round_trip(&out.clamp(T::zero(), T::lit(255.0)), level.round() as u8)?
        }
    };
    Ok((out.clamp(T::zero(), T::lit(255.0)), gt))
}

fn stream_seed(seed: u64, tag: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407)
}

/// Runs every cell of the manifest. `model` may be `None` when no template
/// recovery is requested; the template is then left out of the stego images.
pub fn run_robustness_suite<T: Real>(
    manifest: &ExperimentManifest,
    model: Option<&TemplateModel<T>>,
    qim: &QimConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<EvalReport> {
    let source = manifest.images.open()?;
    run_on_source(manifest, &*source, model, qim, progress)
}

pub fn run_on_source<T: Real>(
    manifest: &ExperimentManifest,
    source: &dyn ImageSource,
    model: Option<&TemplateModel<T>>,
    qim: &QimConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<EvalReport> {
    let wm = match model {
        Some(m) => Watermarker::with_key(m, manifest.key.unwrap_or(m.layout_key), qim)?,
        None => {
            if manifest.recovery.contains(&RecoveryMode::Template) {
                return Err(Error::Config("template recovery needs a model".into()));
            }
            Watermarker::watermark_only(manifest.key.unwrap_or(7), CANVAS, 8, qim)?
        }
    };
    if source.is_empty() {
        return Err(Error::Config("empty image set".into()));
    }
    let canvas = wm.canvas();
    let mut per_cell: Vec<(Cell, Vec<f64>)> = Vec::new();
    for suite in &manifest.suites {
        for &value in &suite.values {
            for &level in &suite.levels {
                for &recovery in &manifest.recovery {
                    per_cell.push((
                        Cell {
                            suite: suite.name(),
                            value,
                            level,
                            recovery,
                            ber: Stat::default(),
                        },
                        Vec::with_capacity(source.len()),
                    ));
                }
            }
        }
    }
    let (mut psnrs, mut ssims, mut guesses) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..source.len() {
        let image = to_canvas(&source.load(i)?.convert::<T>(), canvas);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(manifest.seed, 1, i));
        let payload = Payload::random(wm.capacity(), &mut rng);
        let stego = wm.embed(&image, &payload)?;
        psnrs.push(stego.psnr);
        ssims.push(stego.ssim);
        let mut guess_rng = ChaCha8Rng::seed_from_u64(stream_seed(manifest.seed, 2, i));
        guesses.push(ber(Payload::random(wm.capacity(), &mut guess_rng).bits(), payload.bits())?);
        // Same noise realization for every cell of this image.
        let noise_seed = stream_seed(manifest.seed, 3, i);
        let mut k = 0;
        for suite in &manifest.suites {
            for &value in &suite.values {
                for &level in &suite.levels {
                    let (attacked, gt) =
                        attack_cell(&stego.stego_image, suite.geometric, value, suite.signal, level, noise_seed)?;
                    for &mode in &manifest.recovery {
                        let recovery = match mode {
                            RecoveryMode::Template => Recovery::Template {
                                refine: manifest.refine,
                            },
                            RecoveryMode::Gt => Recovery::GroundTruth(gt),
                            RecoveryMode::None => Recovery::None,
                        };
                        let report = wm.decode(&attacked, &recovery)?;
                        per_cell[k].1.push(ber(report.payload.bits(), payload.bits())?);
                        k += 1;
                    }
                }
            }
        }
        progress(&format!("image {}/{}", i + 1, source.len()));
    }
    Ok(EvalReport {
        cells: per_cell
            .into_iter()
            .map(|(mut c, v)| {
                c.ber = Stat::of(&v);
                c
            })
            .collect(),
        quality: manifest.quality.then(|| Quality {
            psnr: Stat::of(&psnrs),
            ssim: Stat::of(&ssims),
        }),
        random_guess: Stat::of(&guesses),
    })
}

fn value_label(suite: &str, v: f64) -> String {
    if suite.starts_with("rotation") {
        format!("{v}°")
    } else if suite.starts_with("translation") {
        format!("{}%", (v * 100.0).round())
    } else {
        format!("{v}")
    }
}

/// One row per cell, fixed float formatting.
pub fn to_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["suite", "value", "level", "recovery", "mean_ber", "std_ber", "images"])?;
    for c in &report.cells {
        w.write_record([
            c.suite.clone(),
            format!("{}", c.value),
            format!("{}", c.level),
            c.recovery.tag().to_string(),
            format!("{:.6}", c.ber.mean),
            format!("{:.6}", c.ber.std),
            c.ber.n.to_string(),
        ])?;
    }
    let g = &report.random_guess;
    w.write_record([
        "sanity".to_string(),
        String::new(),
        String::new(),
        "random".to_string(),
        format!("{:.6}", g.mean),
        format!("{:.6}", g.std),
        g.n.to_string(),
    ])?;
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Markdown tables, one per suite, rows grouped by geometric value.
pub fn to_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    if let Some(q) = &report.quality {
        let _ = writeln!(out, "## Quality\n\n| Images | PSNR (dB) | SSIM |\n|---|---|---|");
        let _ = writeln!(
            out,
            "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} |\n",
            q.psnr.n, q.psnr.mean, q.psnr.std, q.ssim.mean, q.ssim.std
        );
    }
    let mut suites: Vec<&str> = Vec::new();
    for c in &report.cells {
        if !suites.contains(&c.suite.as_str()) {
            suites.push(&c.suite);
        }
    }
    for suite in suites {
        let cells: Vec<&Cell> = report.cells.iter().filter(|c| c.suite == suite).collect();
        let mut levels: Vec<f64> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut modes: Vec<RecoveryMode> = Vec::new();
        for c in &cells {
            if !levels.contains(&c.level) {
                levels.push(c.level);
            }
            if !values.contains(&c.value) {
                values.push(c.value);
            }
            if !modes.contains(&c.recovery) {
                modes.push(c.recovery);
            }
        }
        let _ = writeln!(out, "## {suite}\n");
        let head: Vec<String> = levels.iter().map(|l| format!("{l}")).collect();
        let _ = writeln!(out, "| Attack | Recover | {} |", head.join(" | "));
        let _ = writeln!(out, "|---|---|{}", "---|".repeat(levels.len()));
        for &v in &values {
            for &m in &modes {
                let row: Vec<String> = levels
                    .iter()
                    .map(|&l| {
                        cells
                            .iter()
                            .find(|c| c.value == v && c.level == l && c.recovery == m)
                            .map_or("-".into(), |c| format!("{:.3}", c.ber.mean))
                    })
                    .collect();
                let _ = writeln!(out, "| {} | {} | {} |", value_label(suite, v), m.label(), row.join(" | "));
            }
        }
        let _ = writeln!(out);
    }
    let g = &report.random_guess;
    let _ = writeln!(out, "Random-guess BER: {:.3} ± {:.3} over {} images", g.mean, g.std, g.n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for s in SuiteSpec::all_tables() {
            assert_eq!(SuiteSpec::by_name(&s.name()), Some(s));
        }
        assert!(SuiteSpec::by_name("shear-noise").is_none());
    }

    #[test]
    fn stat_of_known_values() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
        assert_eq!(Stat::of(&[]).n, 0);
    }

    #[test]
    fn scaling_changes_size_and_reports_identity() {
        let g = wmsync_core::dataset::synthetic_image(100, 100, 1);
        let (a, gt) = attack_cell(&g, Geometric::Scaling, 1.5, Signal::Jpeg, 100.0, 0).unwrap();
        assert_eq!(a.dims(), (150, 150));
        assert_eq!(gt, RstParams::IDENTITY);
        let (a, gt) = attack_cell(&g, Geometric::Translation, 0.09, Signal::Noise, 25.0, 0).unwrap();
        assert_eq!(a.dims(), (100, 100));
        assert_eq!(gt, RstParams::translation(0.09, 0.09));
    }

    #[test]
    fn manifest_toml_defaults() {
        let m = ExperimentManifest::from_toml(
            "seed = 3\nrecovery = [\"gt\"]\n[images]\nkind = \"synthetic\"\nseed = 1\ncount = 2\n",
        )
        .unwrap();
        assert_eq!(m.seed, 3);
        assert_eq!(m.recovery, vec![RecoveryMode::Gt]);
        assert_eq!(m.suites.len(), 6);
    }

    #[test]
    fn gt_clean_cells_are_error_free_and_output_is_stable() {
        let manifest = ExperimentManifest {
            images: ImageSet::Synthetic { seed: 4, count: 2 },
            suites: vec![SuiteSpec {
                geometric: Geometric::Rotation,
                values: vec![0.0],
                signal: Signal::Noise,
                levels: vec![0.0],
            }],
            recovery: vec![RecoveryMode::Gt, RecoveryMode::None],
            ..ExperimentManifest::default()
        };
        let run = || run_robustness_suite::<f64>(&manifest, None, &QimConfig::default(), &mut |_| {}).unwrap();
        let r = run();
        assert!(r.cells.iter().all(|c| c.ber.mean == 0.0));
        assert!((r.random_guess.mean - 0.5).abs() < 0.1);
        assert_eq!(to_csv(&r).unwrap(), to_csv(&run()).unwrap());
        assert!(to_markdown(&r).contains("| 0° | With GT | 0.000 |"));
    }
}
