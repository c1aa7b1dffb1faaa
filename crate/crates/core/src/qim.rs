//! Quantization index modulation on curvelet band means.
//!
//! Each watermark block carries one bit per symmetric wedge pair at the
//! embedding scale. A bit is written by snapping the pair's mean absolute
//! coefficient to the nearest quantization level of matching parity and
//! rescaling every coefficient of both wedges by `Q(A) / A`; it is read back
//! from the parity of `round(A / q)` on the lower-index wedge.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::curvelet::{CurveletPyramid, CurveletTransform};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::layout::BlockLayout;
use crate::payload::{Payload, BITS_PER_BLOCK};
use crate::scalar::Real;

/// Band means below this are treated as an empty band.
const EMPTY_BAND: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QimConfig {
    /// Quantization step `q`.
    pub step: f64,
    /// Curvelet scale carrying the payload (1 = coarsest).
    pub embed_scale: usize,
    /// Number of wedge pairs `(l, l + pairs)`; one bit each.
    pub pairs: usize,
}

impl Default for QimConfig {
    fn default() -> Self {
        Self {
            step: 3.0,
            embed_scale: 3,
            pairs: BITS_PER_BLOCK,
        }
    }
}

impl QimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Param(format!("quantization step {} must be > 0", self.step)));
        }
        if self.pairs != BITS_PER_BLOCK {
            return Err(Error::Param(format!(
                "{} wedge pairs requested; blocks carry {BITS_PER_BLOCK} bits",
                self.pairs
            )));
        }
        Ok(())
    }
}

/// Parity of the nearest quantization level.
#[inline]
pub fn level_parity(a: f64, q: f64) -> u8 {
    ((a / q).round() as i64).rem_euclid(2) as u8
}

/// Snaps the band mean `a >= 0` to the nearest level whose parity is `bit`.
///
/// A fractional position of exactly one half moves down a level: with
/// half-away-from-zero rounding the upward branch would land on the level
/// that was just rejected.
pub fn quantize_band(a: f64, q: f64, bit: u8) -> f64 {
    let x = a.abs() / q;
    let sign = if a < 0.0 { -1.0 } else { 1.0 };
    if level_parity(a.abs(), q) == bit {
        return sign * x.round() * q;
    }
    let frac = x - x.floor();
    if frac < 0.5 {
        sign * (x + 0.5).round() * q
    } else {
        sign * (x - 0.5).round() * q
    }
}

/// Distance of `a` to its nearest quantization level, in `[0, q/2]`.
pub fn level_distance(a: f64, q: f64) -> f64 {
    (a - (a / q).round() * q).abs()
}

/// Block-level codec holding the precomputed curvelet plan.
#[derive(Clone, Debug)]
pub struct QimCodec<T: Real> {
    transform: CurveletTransform<T>,
    cfg: QimConfig,
}

/// Decoded bits plus per-pair distance to the quantization grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecode {
    pub bits: Vec<u8>,
    pub confidence: Vec<f64>,
}

impl<T: Real> QimCodec<T> {
    pub fn new(block_side: usize, cfg: QimConfig) -> Result<Self> {
        cfg.validate()?;
        let transform = CurveletTransform::new(block_side)?;
        if cfg.embed_scale < 2 || cfg.embed_scale >= transform.scales() {
            return Err(Error::Param(format!(
                "embedding scale {} is not directional",
                cfg.embed_scale
            )));
        }
        let codec = Self { transform, cfg };
        let probe = codec.transform.forward(&Grid::zeros(block_side, block_side))?;
        if probe.directions(cfg.embed_scale) != 2 * cfg.pairs {
            return Err(Error::Param(format!(
                "scale {} has {} wedges, need {}",
                cfg.embed_scale,
                probe.directions(cfg.embed_scale),
                2 * cfg.pairs
            )));
        }
        Ok(codec)
    }

    pub fn config(&self) -> &QimConfig {
        &self.cfg
    }

    pub fn transform(&self) -> &CurveletTransform<T> {
        &self.transform
    }

    pub fn block_side(&self) -> usize {
        self.transform.side()
    }

    /// Embeds eight bits and returns the reconstructed block.
    pub fn embed_block(&self, block: &Grid<T>, bits: &[u8]) -> Result<Grid<T>> {
        if bits.len() != self.cfg.pairs || bits.iter().any(|&b| b > 1) {
            return Err(Error::Payload(format!(
                "block needs {} binary digits, got {:?}",
                self.cfg.pairs, bits
            )));
        }
        let mut pyr = self.transform.forward(block)?;
        for (l, &bit) in bits.iter().enumerate() {
            self.embed_pair(&mut pyr, l, bit)?;
        }
        self.transform.inverse(&pyr)
    }

    fn embed_pair(&self, pyr: &mut CurveletPyramid<T>, l: usize, bit: u8) -> Result<()> {
        let s = self.cfg.embed_scale;
        let q = self.cfg.step;
        let a = pyr.band_mean_abs(s, l)?.mean_abs.f64();
        let target = quantize_band(a, q, bit);
        if a > EMPTY_BAND {
            let factor = T::lit(target / a);
            for dir in [l, l + self.cfg.pairs] {
                pyr.band_mut(s, dir).expect("band exists").scale_by(factor);
            }
        } else if target > 0.0 {
            // Multiplication cannot lift an empty band; seed it with the
            // band's support atom at the target mean instead.
            let mut atom = self.transform.support_atom(s, l)?;
            let norm = atom.mean_abs().f64();
            atom.scale_by(T::lit(target / norm));
            let conj: Vec<Complex<T>> = atom.coeffs.iter().map(|c| c.conj()).collect();
            pyr.band_mut(s, l).expect("band exists").coeffs = atom.coeffs;
            pyr.band_mut(s, l + self.cfg.pairs).expect("band exists").coeffs = conj;
        }
        Ok(())
    }

    pub fn decode_block(&self, block: &Grid<T>) -> Result<BlockDecode> {
        let pyr = self.transform.forward(block)?;
        let q = self.cfg.step;
        let mut bits = Vec::with_capacity(self.cfg.pairs);
        let mut confidence = Vec::with_capacity(self.cfg.pairs);
        for l in 0..self.cfg.pairs {
            let a = pyr.band_mean_abs(self.cfg.embed_scale, l)?.mean_abs.f64();
            bits.push(level_parity(a, q));
            confidence.push(level_distance(a, q));
        }
        Ok(BlockDecode { bits, confidence })
    }

    fn block_geometry(&self, image: &Grid<T>, layout: &BlockLayout) -> Result<usize> {
        let side = self.block_side();
        if image.width() != side * layout.cols() || image.height() != side * layout.rows() {
            return Err(Error::Shape(format!(
                "image {}x{} is not {}x{} blocks of {side}px",
                image.width(),
                image.height(),
                layout.cols(),
                layout.rows()
            )));
        }
        Ok(side)
    }

    /// Embeds the payload into every watermark block; template blocks are untouched.
    pub fn embed_payload(
        &self,
        image: &Grid<T>,
        layout: &BlockLayout,
        payload: &Payload,
    ) -> Result<Grid<T>> {
        let side = self.block_geometry(image, layout)?;
        let capacity = layout.watermark_count() * self.cfg.pairs;
        if payload.len() != capacity {
            return Err(Error::Payload(format!(
                "payload has {} bits, layout carries {capacity}",
                payload.len()
            )));
        }
        let mut out = image.clone();
        for ((x, y), bits) in layout
            .watermark_blocks()
            .zip(payload.bits().chunks(self.cfg.pairs))
        {
            let block = image.crop(x * side, y * side, side, side)?;
            let marked = self.embed_block(&block, bits)?;
            out.paste(&marked, x * side, y * side)?;
        }
        Ok(out)
    }

    pub fn decode_payload(&self, image: &Grid<T>, layout: &BlockLayout) -> Result<Payload> {
        Ok(self.decode_payload_detailed(image, layout)?.0)
    }

    /// Payload plus, for each watermark block in order, the per-pair confidence.
    pub fn decode_payload_detailed(
        &self,
        image: &Grid<T>,
        layout: &BlockLayout,
    ) -> Result<(Payload, Vec<Vec<f64>>)> {
        let side = self.block_geometry(image, layout)?;
        let mut bits = Vec::with_capacity(layout.watermark_count() * self.cfg.pairs);
        let mut confidence = Vec::with_capacity(layout.watermark_count());
        for (x, y) in layout.watermark_blocks() {
            let block = image.crop(x * side, y * side, side, side)?;
            let d = self.decode_block(&block)?;
            bits.extend(d.bits);
            confidence.push(d.confidence);
        }
        Ok((Payload::new(bits)?, confidence))
    }
}

pub fn embed_payload<T: Real>(
    image: &Grid<T>,
    layout: &BlockLayout,
    payload: &Payload,
    cfg: &QimConfig,
) -> Result<Grid<T>> {
    QimCodec::new(image.width() / layout.cols(), *cfg)?.embed_payload(image, layout, payload)
}

pub fn decode_payload<T: Real>(
    image: &Grid<T>,
    layout: &BlockLayout,
    cfg: &QimConfig,
) -> Result<Payload> {
    QimCodec::new(image.width() / layout.cols(), *cfg)?.decode_payload(image, layout)
}
