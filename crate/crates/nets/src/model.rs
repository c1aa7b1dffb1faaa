//! The trained object: three networks, the layout key and training metadata.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wmsync_core::geometry::{warp_affine, Interp};
use wmsync_core::{BlockLayout, Grid, Real, RstParams};

use crate::error::{Error, Result};
use crate::layers::{Param, Tensor};
use crate::networks::{Extractor, Generator, Matcher};

/// Network sizes. The defaults are the desk-scale preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub canvas: usize,
    pub template_side: usize,
    /// Blocks per side of the layout matrix.
    pub blocks: usize,
    /// Channels after each generator upsampling stage.
    pub gen_widths: Vec<usize>,
    /// Channels after each extractor downsampling stage.
    pub ext_widths: Vec<usize>,
    /// Side of the per-branch feature map (features = side^2).
    pub feature_side: usize,
    pub head_channels: usize,
    pub pixel_bias: bool,
    /// Standard-deviation multiplier of the pre-training target.
    pub template_amplitude: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            canvas: 512,
            template_side: 64,
            blocks: 8,
            gen_widths: vec![32, 16, 8],
            ext_widths: vec![16, 32, 64],
            feature_side: 16,
            head_channels: 16,
            pixel_bias: true,
            template_amplitude: 3.2,
        }
    }
}

impl NetConfig {
    /// Channel depths 128-64-32 / 32-64-128.
    pub fn full() -> Self {
        Self {
            gen_widths: vec![128, 64, 32],
            ext_widths: vec![32, 64, 128],
            ..Self::default()
        }
    }

    /// A model small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            canvas: 64,
            template_side: 8,
            blocks: 4,
            gen_widths: vec![2, 2, 2],
            ext_widths: vec![2, 2, 2],
            feature_side: 4,
            head_channels: 2,
            pixel_bias: true,
            template_amplitude: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.gen_widths.len();
        let ratio = self.canvas / self.template_side.max(1);
        if self.template_side == 0 || self.canvas % self.template_side != 0 || ratio != 1 << stages {
            return Err(Error::Config(format!(
                "canvas {} must be template side {} times 2^{stages}",
                self.canvas, self.template_side
            )));
        }
        if self.ext_widths.len() != stages {
            return Err(Error::Config("extractor and generator need the same stage count".into()));
        }
        if self.gen_widths.iter().chain(&self.ext_widths).any(|&w| w == 0) {
            return Err(Error::Config("zero channel width".into()));
        }
        if self.blocks < 2 || self.template_side % self.blocks != 0 || self.canvas % self.blocks != 0 {
            return Err(Error::Config(format!("{} blocks do not tile the template", self.blocks)));
        }
        if self.feature_side == 0 || self.head_channels == 0 {
            return Err(Error::Config("empty matcher".into()));
        }
        if !(self.template_amplitude > 0.0) {
            return Err(Error::Config("template amplitude must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of generator pre-training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub final_mse: f64,
    pub converged: bool,
}

/// Per-epoch means of the end-to-end objective and its parts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub heldout_loss_d: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub pretrain: Option<PretrainReport>,
    pub extractor_warmup_steps: usize,
    pub matcher_warmup_steps: usize,
    pub epochs: usize,
    /// Optimizer steps taken by each stage's Adam instance, summed.
    pub optimizer_steps: usize,
    pub loss_curve: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateModel<T> {
    pub config: NetConfig,
    pub layout_key: u64,
    pub lambda: f64,
    pub generator: Generator<T>,
    pub extractor: Extractor<T>,
    pub matcher: Matcher<T>,
    pub meta: TrainMeta,
}

pub const DEFAULT_LAMBDA: f64 = 0.2;

impl<T: Real> TemplateModel<T> {
    /// Fresh Xavier-initialized networks.
    pub fn new(config: NetConfig, layout_key: u64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = Generator::new(&config.gen_widths, config.canvas, config.pixel_bias, &mut rng);
        let extractor = Extractor::new(&config.ext_widths, &mut rng);
        let matcher = Matcher::new(config.template_side, config.feature_side, config.head_channels, &mut rng);
        Ok(Self {
            config,
            layout_key,
            lambda: DEFAULT_LAMBDA,
            generator,
            extractor,
            matcher,
            meta: TrainMeta {
                seed,
                ..TrainMeta::default()
            },
        })
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout_for(self.layout_key)
    }

    /// Layout matrix of an arbitrary key at this model's block count.
    pub fn layout_for(&self, key: u64) -> BlockLayout {
        BlockLayout::generate(key, self.config.blocks, self.config.blocks).expect("validated block count")
    }

    /// `K_r` at template resolution, values in {0, 1}.
    pub fn template_map(&self) -> Grid<T> {
        self.template_map_for(self.layout_key)
    }

    pub fn template_map_for(&self, key: u64) -> Grid<T> {
        self.layout_map(key, self.config.template_side)
    }

    /// `K_r` at canvas resolution: the template mask.
    pub fn canvas_mask(&self) -> Grid<T> {
        self.layout_map(self.layout_key, self.config.canvas)
    }

    fn layout_map(&self, key: u64, side: usize) -> Grid<T> {
        self.layout_for(key)
            .resize(side)
            .expect("validated sizes")
            .to_grid::<T>()
    }

    /// Raw generator output `T_n^o` on the canvas.
    pub fn generate_raw(&self) -> Grid<T> {
        self.generate_raw_for(self.layout_key)
    }

    fn generate_raw_for(&self, key: u64) -> Grid<T> {
        let k = self.template_map_for(key);
        let (y, _) = self.generator.forward(&Tensor::from_vec(1, k.height(), k.width(), k.into_vec()));
        Grid::from_vec(y.w, y.h, y.data).expect("generator shape")
    }

    /// Template noise `T_n = T_n^o * K_canvas`, zero on watermark blocks.
    pub fn generate_noise(&self) -> Grid<T> {
        self.generate_noise_for(self.layout_key)
    }

    /// Template noise for another key's layout, generated from that key's map.
    pub fn generate_noise_for(&self, key: u64) -> Grid<T> {
        let mask = self.layout_map(key, self.config.canvas);
        self.generate_raw_for(key).zip_map(&mask, |t, m| t * m).expect("same canvas")
    }

    /// Extracted template map for a canvas-sized image in 8-bit pixel units.
    pub fn extract_template(&self, image: &Grid<T>) -> Result<Grid<T>> {
        let c = self.config.canvas;
        if image.dims() != (c, c) {
            return Err(wmsync_core::Error::Shape(format!(
                "extractor expects {c}x{c}, got {}x{}",
                image.width(),
                image.height()
            ))
            .into());
        }
        let x = normalize(image);
        let (k, _) = self.extractor.forward(&x);
        Ok(Grid::from_vec(k.w, k.h, k.data)?)
    }

    pub fn match_templates(&self, k_ext: &Grid<T>, k_orig: &Grid<T>) -> Result<RstParams> {
        let s = self.config.template_side;
        for k in [k_ext, k_orig] {
            if k.dims() != (s, s) {
                return Err(wmsync_core::Error::Shape(format!("templates must be {s}x{s}")).into());
            }
        }
        Ok(self.matcher.forward(k_ext.data(), k_orig.data()).0)
    }

    /// Extract, then match against this model's own template map.
    pub fn estimate_rst(&self, image: &Grid<T>) -> Result<RstParams> {
        self.estimate_rst_refined(image, 0)
    }

    /// Same as [`Self::estimate_rst`], then `refine` rounds of undoing the
    /// current estimate on the image and matching what is left.
    pub fn estimate_rst_refined(&self, image: &Grid<T>, refine: usize) -> Result<RstParams> {
        self.estimate_rst_for(image, self.layout_key, refine)
    }

    /// Matching against the template map of `key`.
    pub fn estimate_rst_for(&self, image: &Grid<T>, key: u64, refine: usize) -> Result<RstParams> {
        let orig = self.template_map_for(key);
        let mut est = self.match_templates(&self.extract_template(image)?, &orig)?.to_affine();
        for _ in 0..refine {
            // recovered(q) = image(est^-1 q) = cover(A est^-1 q), so A = residual after est
            let undone = warp_affine(image, &est.inverse()?, T::zero(), Interp::Bicubic);
            let residual = self.match_templates(&self.extract_template(&undone)?, &orig)?.to_affine();
            est = residual.compose(&est);
        }
        Ok(est.to_rst())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.generator.params();
        v.extend(self.extractor.params());
        v.extend(self.matcher.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.generator.params_mut();
        v.extend(self.extractor.params_mut());
        v.extend(self.matcher.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Same weights in another precision.
    pub fn convert<U: Real>(&self) -> TemplateModel<U> {
        let mut out = TemplateModel::<U>::new(self.config.clone(), self.layout_key, self.meta.seed)
            .expect("valid config");
        out.lambda = self.lambda;
        out.meta = self.meta.clone();
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.value.iter_mut().zip(&src.value) {
                *d = U::lit(s.f64());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint")
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Pixels divided by 255, as a one-channel tensor.
pub fn normalize<T: Real>(image: &Grid<T>) -> Tensor<T> {
    let s = T::lit(1.0 / 255.0);
    Tensor::from_vec(1, image.height(), image.width(), image.data().iter().map(|&v| v * s).collect())
}

const MAGIC: &[u8; 8] = b"WMSYNCK\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    layout_key: u64,
    lambda: f64,
    meta: TrainMeta,
    tensors: Vec<TensorEntry>,
}

impl<T: Real> TemplateModel<T> {
    /// Magic, version, JSON header length and header, then every tensor as
    /// little-endian `f64`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for p in self.params() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                offset,
            });
            offset += p.len();
        }
        let header = Header {
            config: self.config.clone(),
            layout_key: self.layout_key,
            lambda: self.lambda,
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params() {
            for v in &p.value {
                out.extend_from_slice(&v.f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut model = Self::new(header.config, header.layout_key, header.meta.seed)?;
        model.lambda = header.lambda;
        model.meta = header.meta;
        let data = &bytes[body..];
        let params = model.params_mut();
        if params.len() != header.tensors.len() {
            return Err(bad("tensor count does not match the configuration"));
        }
        for (p, entry) in params.into_iter().zip(&header.tensors) {
            if p.name != entry.name || p.shape != entry.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match {} {:?}",
                    entry.name, entry.shape, p.name, p.shape
                )));
            }
            let start = entry.offset * 8;
            let end = start + p.len() * 8;
            if end > data.len() {
                return Err(bad("truncated tensor data"));
            }
            for (v, chunk) in p.value.iter_mut().zip(data[start..end].chunks_exact(8)) {
                *v = T::lit(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
        }
        Ok(model)
    }
}
