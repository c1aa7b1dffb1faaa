//! Image sources for training and evaluation.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::Result;
use crate::fft::Fft2;
use crate::grid::Grid;

/// Spectral slope range of the synthetic texture (amplitude ~ 1/f^beta).
const BETA: (f64, f64) = (1.2, 1.6);

/// An indexed collection of 8-bit grayscale images.
pub trait ImageSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel values on the `[0, 255]` scale.
    fn load(&self, index: usize) -> Result<Grid<f64>>;
}

/// Procedural natural-looking images: 1/f texture plus a few shaded shapes.
#[derive(Clone, Debug)]
pub struct SyntheticImages {
    pub seed: u64,
    pub count: usize,
    pub width: usize,
    pub height: usize,
}

impl SyntheticImages {
    pub fn new(seed: u64, count: usize, side: usize) -> Self {
        Self {
            seed,
            count,
            width: side,
            height: side,
        }
    }
}

impl ImageSource for SyntheticImages {
    fn len(&self) -> usize {
        self.count
    }

    fn load(&self, index: usize) -> Result<Grid<f64>> {
        let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64);
        Ok(synthetic_image(self.width, self.height, seed))
    }
}

impl<S: ImageSource + ?Sized> ImageSource for &S {
    fn len(&self) -> usize {
        (**self).len()
    }

    fn load(&self, index: usize) -> Result<Grid<f64>> {
        (**self).load(index)
    }
}

/// Deterministic per seed; integer-valued in `[0, 255]`.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Complex<f64>> = (0..width * height)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let fft = Fft2::new(&mut FftPlanner::new(), height, width);
    fft.forward(&mut spec);
    let beta: f64 = rng.random_range(BETA.0..BETA.1);
    for ky in 0..height {
        let fy = ky.min(height - ky) as f64 / height as f64;
        for kx in 0..width {
            let fx = kx.min(width - kx) as f64 / width as f64;
            let f = (fx * fx + fy * fy).sqrt().max(1.0 / width.max(height) as f64);
            spec[ky * width + kx] *= f.powf(-beta);
        }
    }
    spec[0] = Complex::new(0.0, 0.0);
    fft.inverse_unnormalized(&mut spec);
    let tex: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let mean = tex.iter().sum::<f64>() / tex.len() as f64;
    let std = (tex.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tex.len() as f64)
        .sqrt()
        .max(1e-12);
    let contrast: f64 = rng.random_range(25.0..45.0);
    let base: f64 = rng.random_range(90.0..160.0);
    let (gx, gy): (f64, f64) = (rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0));
    let mut img = Grid::from_fn(width, height, |x, y| {
        let u = x as f64 / width as f64 - 0.5;
        let v = y as f64 / height as f64 - 0.5;
        base + gx * u + gy * v + contrast * (tex[y * width + x] - mean) / std
    });
    let shapes = rng.random_range(3..9);
    for _ in 0..shapes {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let rx = rng.random_range(0.05..0.25) * width as f64;
        let ry = rng.random_range(0.05..0.25) * height as f64;
        let level: f64 = rng.random_range(20.0..235.0);
        let alpha: f64 = rng.random_range(0.4..0.8);
        let ellipse = rng.random_bool(0.5);
        let data = img.data_mut();
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    let p = &mut data[y * width + x];
                    *p = (1.0 - alpha) * *p + alpha * (level + 10.0 * dx);
                }
            }
        }
    }
    img.map(|v| v.round().clamp(0.0, 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_image(64, 48, 5);
        assert_eq!(a, synthetic_image(64, 48, 5));
        assert_ne!(a, synthetic_image(64, 48, 6));
        assert!(a.data().iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
    }

    #[test]
    fn images_are_textured() {
        let set = SyntheticImages::new(1, 4, 128);
        for i in 0..set.len() {
            let img = set.load(i).unwrap();
            let mean = img.mean();
            let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / img.len() as f64;
            assert!(var > 100.0, "image {i} variance {var}");
        }
    }
}
