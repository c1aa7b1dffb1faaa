//! Embedding and blind decoding on images of any size.
//!
//! Everything watermark-related happens on the square canvas. The cover is
//! resized to the canvas (bicubic), marked, and only the difference ("stego
//! signal") is resized back (bilinear) and added to the untouched original,
//! so arbitrary sizes lose nothing beyond the signal itself.

use serde::{Deserialize, Serialize};
use wmsync_core::geometry::{warp_affine, Interp};
use wmsync_core::metrics::{psnr, ssim};
use wmsync_core::qim::QimCodec;
use wmsync_core::{BlockLayout, Grid, Payload, QimConfig, Real, RstParams};
use wmsync_nets::TemplateModel;

use crate::error::{Error, Result};

/// Residual matching rounds used by template recovery unless configured.
pub const DEFAULT_REFINE: usize = 0;

#[derive(Clone, Debug)]
pub struct StegoResult<T> {
    /// Clipped to `[0, 255]`, same dims as the input.
    pub stego_image: Grid<T>,
    /// `original + signal` before clipping.
    pub unclipped: Grid<T>,
    /// Stego signal resized to the input dims.
    pub signal: Grid<T>,
    pub payload: Payload,
    pub layout_key: u64,
    pub psnr: f64,
    pub ssim: f64,
}

/// How the geometric distortion is undone before bit decoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    /// Extract and match the template.
    Template { refine: usize },
    /// Ground truth supplied by the caller (evaluation only).
    GroundTruth(RstParams),
    /// Decode the canvas as is.
    None,
}

#[derive(Clone, Debug)]
pub struct DecodeReport<T> {
    pub est_rst: RstParams,
    /// Canvas-sized image after undoing `est_rst`.
    pub recovered_image: Grid<T>,
    pub payload: Payload,
    /// Per watermark block, per wedge pair: distance of the band mean to its
    /// quantization level, in `[0, q/2]`.
    pub per_block_confidence: Vec<Vec<f64>>,
}

impl<T> DecodeReport<T> {
    /// Average confidence over all bits.
    pub fn mean_confidence(&self) -> f64 {
        let n: usize = self.per_block_confidence.iter().map(Vec::len).sum();
        let s: f64 = self.per_block_confidence.iter().flatten().sum();
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

/// Canvas-sized copy: unchanged if already square at the canvas size.
pub fn to_canvas<T: Real>(image: &Grid<T>, canvas: usize) -> Grid<T> {
    if image.dims() == (canvas, canvas) {
        image.clone()
    } else {
        image.resize_bicubic(canvas, canvas)
    }
}

/// Undoes `est` on a canvas image: samples at the inverse affine map.
pub fn recover_image<T: Real>(image: &Grid<T>, est: &RstParams) -> Result<Grid<T>> {
    est.validate()?;
    if *est == RstParams::IDENTITY {
        return Ok(image.clone());
    }
    let inv = est.to_affine().inverse()?;
    Ok(warp_affine(image, &inv, T::zero(), Interp::Bicubic))
}

/// A model bound to one key and codec, with the template noise and the
/// reference template map precomputed.
pub struct Watermarker<'m, T: Real> {
    model: Option<&'m TemplateModel<T>>,
    codec: QimCodec<T>,
    layout: BlockLayout,
    key: u64,
    canvas: usize,
    noise: Grid<T>,
}

impl<'m, T: Real> Watermarker<'m, T> {
    /// Uses the model's own layout key.
    pub fn new(model: &'m TemplateModel<T>, qim: &QimConfig) -> Result<Self> {
        Self::with_key(model, model.layout_key, qim)
    }

    pub fn with_key(model: &'m TemplateModel<T>, key: u64, qim: &QimConfig) -> Result<Self> {
        let canvas = model.config.canvas;
        let layout = model.layout_for(key);
        let codec = QimCodec::new(canvas / layout.cols(), *qim)?;
        Ok(Self {
            model: Some(model),
            codec,
            noise: model.generate_noise_for(key),
            layout,
            key,
            canvas,
        })
    }

    /// Payload only, no template: template recovery is unavailable.
    pub fn watermark_only(key: u64, canvas: usize, blocks: usize, qim: &QimConfig) -> Result<Self> {
        let layout = BlockLayout::generate(key, blocks, blocks)?;
        if blocks == 0 || canvas % blocks != 0 {
            return Err(Error::Config(format!("{blocks} blocks do not tile a {canvas} canvas")));
        }
        let codec = QimCodec::new(canvas / blocks, *qim)?;
        Ok(Self {
            model: None,
            codec,
            layout,
            key,
            canvas,
            noise: Grid::zeros(canvas, canvas),
        })
    }

    pub fn has_template(&self) -> bool {
        self.model.is_some()
    }

    pub fn canvas(&self) -> usize {
        self.canvas
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Payload bits carried per image.
    pub fn capacity(&self) -> usize {
        self.layout.watermark_count() * self.codec.config().pairs
    }

    pub fn noise(&self) -> &Grid<T> {
        &self.noise
    }

    /// Watermark, then template, on a canvas image; no clipping.
    pub fn embed_canvas(&self, canvas_image: &Grid<T>, payload: &Payload) -> Result<Grid<T>> {
        let marked = self.codec.embed_payload(canvas_image, &self.layout, payload)?;
        Ok(marked.zip_map(&self.noise, |a, n| a + n)?)
    }

    pub fn embed(&self, image: &Grid<T>, payload: &Payload) -> Result<StegoResult<T>> {
        if image.is_empty() {
            return Err(Error::Config("empty image".into()));
        }
        if payload.len() != self.capacity() {
            return Err(wmsync_core::Error::Payload(format!(
                "payload has {} bits, capacity is {}",
                payload.len(),
                self.capacity()
            ))
            .into());
        }
        let c = self.canvas();
        let (w, h) = image.dims();
        let (signal, unclipped) = if (w, h) == (c, c) {
            let stego = self.embed_canvas(image, payload)?;
            (stego.zip_map(image, |s, o| s - o)?, stego)
        } else {
            let base = to_canvas(image, c);
            let stego = self.embed_canvas(&base, payload)?;
            let signal = stego.zip_map(&base, |s, o| s - o)?.resize_bilinear(w, h);
            let unclipped = image.zip_map(&signal, |o, s| o + s)?;
            (signal, unclipped)
        };
        let stego_image = unclipped.clamp(T::zero(), T::lit(255.0));
        Ok(StegoResult {
            psnr: psnr(&stego_image, image)?,
            ssim: ssim(&stego_image, image)?,
            stego_image,
            unclipped,
            signal,
            payload: payload.clone(),
            layout_key: self.key,
        })
    }

    /// Blind decode: never sees the original.
    pub fn decode(&self, image: &Grid<T>, recovery: &Recovery) -> Result<DecodeReport<T>> {
        if image.is_empty() {
            return Err(Error::Config("empty image".into()));
        }
        let canvas = to_canvas(image, self.canvas());
        let est_rst = match *recovery {
            Recovery::Template { refine } => self.estimate(&canvas, refine)?,
            Recovery::GroundTruth(p) => p,
            Recovery::None => RstParams::IDENTITY,
        };
        let recovered_image = recover_image(&canvas, &est_rst)?;
        let (payload, per_block_confidence) = self.codec.decode_payload_detailed(&recovered_image, &self.layout)?;
        Ok(DecodeReport {
            est_rst,
            recovered_image,
            payload,
            per_block_confidence,
        })
    }

    /// Template-based RST estimate for a canvas image.
    pub fn estimate(&self, canvas_image: &Grid<T>, refine: usize) -> Result<RstParams> {
        let model = self
            .model
            .ok_or_else(|| Error::Config("template recovery needs a model".into()))?;
        Ok(model.estimate_rst_for(canvas_image, self.key, refine)?)
    }
}

pub fn embed_image<T: Real>(
    image: &Grid<T>,
    payload: &Payload,
    model: &TemplateModel<T>,
    qim: &QimConfig,
) -> Result<StegoResult<T>> {
    Watermarker::new(model, qim)?.embed(image, payload)
}

pub fn decode_image<T: Real>(
    image: &Grid<T>,
    model: &TemplateModel<T>,
    key: u64,
    qim: &QimConfig,
    recovery: &Recovery,
) -> Result<DecodeReport<T>> {
    Watermarker::with_key(model, key, qim)?.decode(image, recovery)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use wmsync_core::dataset::synthetic_image;
    use wmsync_core::geometry::apply_rst;
    use wmsync_nets::NetConfig;

    fn model() -> TemplateModel<f64> {
        TemplateModel::new(NetConfig::default(), 7, 1).unwrap()
    }

    #[test]
    fn identity_recovery_is_a_copy() {
        let g = synthetic_image(32, 32, 1);
        assert_eq!(recover_image(&g, &RstParams::IDENTITY).unwrap(), g);
    }

    #[test]
    fn recovery_undoes_an_attack_in_the_interior() {
        let g = synthetic_image(128, 128, 2);
        let p = RstParams::new(20.0, 1.1, 0.95, 0.03, -0.02);
        let back = recover_image(&apply_rst(&g, &p), &p).unwrap();
        let (mut err, mut n) = (0.0, 0);
        for y in 40..88 {
            for x in 40..88 {
                err += (back.get(x, y) - g.get(x, y)).abs();
                n += 1;
            }
        }
        assert!(err / (n as f64) < 2.0, "mean abs {}", err / n as f64);
    }

    #[test]
    fn clean_round_trip_on_canvas() {
        let m = model();
        let wm = Watermarker::new(&m, &QimConfig::default()).unwrap();
        assert_eq!(wm.capacity(), 256);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = synthetic_image(512, 512, 3);
        let p = Payload::random(256, &mut rng);
        let s = wm.embed(&img, &p).unwrap();
        let d = wm.decode(&s.stego_image, &Recovery::None).unwrap();
        assert_eq!(d.payload, p);
        let q = QimConfig::default().step;
        assert!(d.per_block_confidence.iter().flatten().all(|&c| (0.0..=q / 2.0).contains(&c)));
    }

    #[test]
    fn canvas_inputs_skip_the_resize() {
        let m = model();
        let wm = Watermarker::new(&m, &QimConfig::default()).unwrap();
        let img = synthetic_image(512, 512, 4);
        let p = Payload::zeros(256);
        let s = wm.embed(&img, &p).unwrap();
        assert_eq!(s.unclipped, wm.embed_canvas(&img, &p).unwrap());
    }

    #[test]
    fn rejects_wrong_payload_size() {
        let m = model();
        let img = synthetic_image(512, 512, 4);
        assert!(embed_image(&img, &Payload::zeros(255), &m, &QimConfig::default()).is_err());
    }
}
