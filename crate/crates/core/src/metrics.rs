//! Image fidelity and bit error metrics on the 8-bit intensity scale.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

pub const PEAK: f64 = 255.0;

pub fn mse<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if a.is_empty() {
        return Err(Error::Shape("empty image".into()));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; infinite for identical images.
pub fn psnr<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / m).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering with a symmetric 1-D kernel.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, kv) in k.iter().enumerate() {
            let row = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                *o += kv * v;
            }
        }
    }
    out
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 255, averaged over valid window positions.
pub fn ssim<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (w, h) = a.dims();
    const WIN: usize = 11;
    if w < WIN || h < WIN {
        return Err(Error::Shape(format!("SSIM needs at least {WIN}x{WIN}, got {w}x{h}")));
    }
    let k = gaussian_window(WIN, 1.5);
    let x: Vec<f64> = a.data().iter().map(|v| v.f64()).collect();
    let y: Vec<f64> = b.data().iter().map(|v| v.f64()).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let sxx = filter_valid(&xx, w, h, &k);
    let syy = filter_valid(&yy, w, h, &k);
    let sxy = filter_valid(&xy, w, h, &k);
    let c1 = (0.01 * PEAK).powi(2);
    let c2 = (0.03 * PEAK).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Fraction of differing bits.
pub fn ber(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Payload(format!(
            "bit strings differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let wrong = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(wrong as f64 / a.len() as f64)
}
