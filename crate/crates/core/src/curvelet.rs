//! Discrete curvelet transform of square blocks via frequency wrapping.
//!
//! The 2-D spectrum is split into `scales` concentric square coronae. Scale 1
//! (coarsest) and the finest scale are isotropic; every intermediate scale is
//! cut into angular wedges whose count starts at `coarse_angles` and doubles
//! every other scale (8, 16, 16 for five scales). Each band keeps the spectrum
//! samples of its wedge, wraps them onto the smallest rectangle enclosing the
//! wedge and inverse-FFTs that rectangle. Windows are sharp indicators, so the
//! bands are an orthogonal decomposition: the transform is an isometry and
//! scaling a band survives an inverse/forward round trip unchanged.
//!
//! Direction 0 is the east wedge; indices grow counterclockwise as seen on
//! screen (rows grow downward). For real input, direction `l` and
//! `l + n/2` hold complex-conjugate coefficients.

use std::collections::HashMap;

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::Grid;
use crate::scalar::Real;

pub const DEFAULT_SCALES: usize = 5;
pub const DEFAULT_COARSE_ANGLES: usize = 8;
pub const MIN_SIDE: usize = 32;

#[derive(Clone, Debug)]
struct BandSpec {
    scale: usize,
    direction: usize,
    rows: usize,
    cols: usize,
    /// Flat index into the `side x side` spectrum.
    freq: Vec<usize>,
    /// Flat index into the `rows x cols` wrapped rectangle.
    wrapped: Vec<usize>,
    fft: usize,
}

/// One coefficient band `C^{s,l}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Band<T> {
    pub scale: usize,
    pub direction: usize,
    pub rows: usize,
    pub cols: usize,
    pub coeffs: Vec<Complex<T>>,
}

impl<T: Real> Band<T> {
    pub fn mean_abs(&self) -> T {
        let n = T::lit(self.coeffs.len() as f64);
        self.coeffs.iter().map(|c| c.norm()).sum::<T>() / n
    }

    pub fn scale_by(&mut self, factor: T) {
        for c in &mut self.coeffs {
            *c = *c * factor;
        }
    }
}

/// All bands of one block, coarsest scale first.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveletPyramid<T> {
    pub side: usize,
    pub scales: usize,
    pub bands: Vec<Band<T>>,
}

/// Mean absolute coefficient value of one band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandStat<T> {
    pub mean_abs: T,
    pub scale: usize,
    pub direction: usize,
}

impl<T: Real> CurveletPyramid<T> {
    pub fn band(&self, scale: usize, direction: usize) -> Option<&Band<T>> {
        self.bands
            .iter()
            .find(|b| b.scale == scale && b.direction == direction)
    }

    pub fn band_mut(&mut self, scale: usize, direction: usize) -> Option<&mut Band<T>> {
        self.bands
            .iter_mut()
            .find(|b| b.scale == scale && b.direction == direction)
    }

    pub fn band_mean_abs(&self, scale: usize, direction: usize) -> Result<BandStat<T>> {
        let band = self.band(scale, direction).ok_or_else(|| {
            Error::Curvelet(format!("no band at scale {scale}, direction {direction}"))
        })?;
        Ok(BandStat {
            mean_abs: band.mean_abs(),
            scale,
            direction,
        })
    }

    /// Number of directional bands at `scale`.
    pub fn directions(&self, scale: usize) -> usize {
        self.bands.iter().filter(|b| b.scale == scale).count()
    }

    pub fn energy(&self) -> T {
        self.bands
            .iter()
            .flat_map(|b| b.coeffs.iter())
            .map(|c| c.norm_sqr())
            .sum()
    }
}

pub fn band_mean_abs<T: Real>(
    pyr: &CurveletPyramid<T>,
    scale: usize,
    direction: usize,
) -> Result<BandStat<T>> {
    pyr.band_mean_abs(scale, direction)
}

/// Precomputed transform for one block side; reentrant and shareable.
#[derive(Clone, Debug)]
pub struct CurveletTransform<T: Real> {
    side: usize,
    scales: usize,
    specs: Vec<BandSpec>,
    full: Fft2<T>,
    ffts: Vec<Fft2<T>>,
}

/// Wedge count per scale (1-based), isotropic at both ends.
pub fn directions_per_scale(scales: usize, coarse_angles: usize) -> Vec<usize> {
    (1..=scales)
        .map(|j| {
            if j == 1 || j == scales {
                1
            } else {
                coarse_angles << (j - 2).div_ceil(2)
            }
        })
        .collect()
}

fn signed_freq(i: usize, n: usize) -> isize {
    if i < n.div_ceil(2) {
        i as isize
    } else {
        i as isize - n as isize
    }
}

impl<T: Real> CurveletTransform<T> {
    pub fn new(side: usize) -> Result<Self> {
        Self::with_config(side, DEFAULT_SCALES, DEFAULT_COARSE_ANGLES)
    }

    pub fn with_config(side: usize, scales: usize, coarse_angles: usize) -> Result<Self> {
        if side < MIN_SIDE {
            return Err(Error::Curvelet(format!(
                "block side {side} too small (need >= {MIN_SIDE})"
            )));
        }
        if scales < 3 || coarse_angles < 2 || coarse_angles % 2 != 0 {
            return Err(Error::Curvelet(format!(
                "unsupported configuration: {scales} scales, {coarse_angles} coarse angles"
            )));
        }
        let dirs = directions_per_scale(scales, coarse_angles);
        // Outer sup-norm radius of scales 1..scales-1.
        let radii: Vec<f64> = (1..scales)
            .map(|j| side as f64 / 3.0 * 2f64.powi(j as i32 - (scales as i32 - 1)))
            .collect();

        let mut members: Vec<Vec<(usize, isize, isize)>> = Vec::new();
        let mut band_index: HashMap<(usize, usize), usize> = HashMap::new();
        for (j, &n) in dirs.iter().enumerate() {
            for l in 0..n {
                band_index.insert((j + 1, l), members.len());
                members.push(Vec::new());
            }
        }
        for r in 0..side {
            let ky = signed_freq(r, side);
            for c in 0..side {
                let kx = signed_freq(c, side);
                let rho = ky.unsigned_abs().max(kx.unsigned_abs()) as f64;
                let scale = radii.iter().position(|&b| rho < b).unwrap_or(scales - 1) + 1;
                let n = dirs[scale - 1];
                let direction = if n == 1 {
                    0
                } else {
                    let theta = (-(ky as f64)).atan2(kx as f64);
                    let width = std::f64::consts::TAU / n as f64;
                    (((theta + width / 2.0) / width).floor() as isize).rem_euclid(n as isize)
                        as usize
                };
                members[band_index[&(scale, direction)]].push((r * side + c, ky, kx));
            }
        }

        let mut planner = FftPlanner::new();
        let full = Fft2::new(&mut planner, side, side);
        let mut ffts: Vec<Fft2<T>> = Vec::new();
        let mut fft_by_shape: HashMap<(usize, usize), usize> = HashMap::new();
        let mut specs = Vec::with_capacity(members.len());
        for (j, &n) in dirs.iter().enumerate() {
            for l in 0..n {
                let pts = &members[band_index[&(j + 1, l)]];
                if pts.is_empty() {
                    return Err(Error::Curvelet(format!(
                        "block side {side} leaves band ({}, {l}) empty",
                        j + 1
                    )));
                }
                let (ymin, ymax) = pts.iter().fold((isize::MAX, isize::MIN), |(a, b), p| {
                    (a.min(p.1), b.max(p.1))
                });
                let (xmin, xmax) = pts.iter().fold((isize::MAX, isize::MIN), |(a, b), p| {
                    (a.min(p.2), b.max(p.2))
                });
                let rows = (ymax - ymin + 1) as usize;
                let cols = (xmax - xmin + 1) as usize;
                let fft = *fft_by_shape.entry((rows, cols)).or_insert_with(|| {
                    ffts.push(Fft2::new(&mut planner, rows, cols));
                    ffts.len() - 1
                });
                let wrapped = pts
                    .iter()
                    .map(|&(_, ky, kx)| {
                        ky.rem_euclid(rows as isize) as usize * cols
                            + kx.rem_euclid(cols as isize) as usize
                    })
                    .collect();
                specs.push(BandSpec {
                    scale: j + 1,
                    direction: l,
                    rows,
                    cols,
                    freq: pts.iter().map(|p| p.0).collect(),
                    wrapped,
                    fft,
                });
            }
        }
        Ok(Self {
            side,
            scales,
            specs,
            full,
            ffts,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    /// Number of spectrum samples owned by each band, in pyramid order.
    pub fn support_sizes(&self) -> Vec<(usize, usize, usize)> {
        self.specs
            .iter()
            .map(|s| (s.scale, s.direction, s.freq.len()))
            .collect()
    }

    pub fn forward(&self, block: &Grid<T>) -> Result<CurveletPyramid<T>> {
        if block.dims() != (self.side, self.side) {
            return Err(Error::Curvelet(format!(
                "block {}x{} does not match transform side {}",
                block.width(),
                block.height(),
                self.side
            )));
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut spectrum: Vec<Complex<T>> = block
            .data()
            .iter()
            .map(|&v| Complex::new(v, T::zero()))
            .collect();
        self.full.forward(&mut spectrum);
        let n = self.side as f64;
        let bands = self
            .specs
            .iter()
            .map(|spec| {
                let mut buf = vec![zero; spec.rows * spec.cols];
                for (&f, &w) in spec.freq.iter().zip(&spec.wrapped) {
                    buf[w] = spectrum[f];
                }
                self.ffts[spec.fft].inverse_unnormalized(&mut buf);
                let norm = T::lit(1.0 / (((spec.rows * spec.cols) as f64).sqrt() * n));
                for c in &mut buf {
                    *c = *c * norm;
                }
                Band {
                    scale: spec.scale,
                    direction: spec.direction,
                    rows: spec.rows,
                    cols: spec.cols,
                    coeffs: buf,
                }
            })
            .collect();
        Ok(CurveletPyramid {
            side: self.side,
            scales: self.scales,
            bands,
        })
    }

    /// Reconstructs the block; any imaginary residue is discarded.
    pub fn inverse(&self, pyr: &CurveletPyramid<T>) -> Result<Grid<T>> {
        if pyr.side != self.side || pyr.bands.len() != self.specs.len() {
            return Err(Error::Curvelet(format!(
                "pyramid ({} bands, side {}) does not match transform ({} bands, side {})",
                pyr.bands.len(),
                pyr.side,
                self.specs.len(),
                self.side
            )));
        }
        let zero = Complex::new(T::zero(), T::zero());
        let mut spectrum = vec![zero; self.side * self.side];
        let n = self.side as f64;
        for (spec, band) in self.specs.iter().zip(&pyr.bands) {
            if band.scale != spec.scale
                || band.direction != spec.direction
                || band.rows != spec.rows
                || band.cols != spec.cols
                || band.coeffs.len() != spec.rows * spec.cols
            {
                return Err(Error::Curvelet(format!(
                    "band ({}, {}) has shape {}x{}, expected ({}, {}) {}x{}",
                    band.scale,
                    band.direction,
                    band.rows,
                    band.cols,
                    spec.scale,
                    spec.direction,
                    spec.rows,
                    spec.cols
                )));
            }
            let mut buf = band.coeffs.clone();
            self.ffts[spec.fft].forward(&mut buf);
            let norm = T::lit(n / ((spec.rows * spec.cols) as f64).sqrt());
            for (&f, &w) in spec.freq.iter().zip(&spec.wrapped) {
                spectrum[f] = buf[w] * norm;
            }
        }
        self.full.inverse_unnormalized(&mut spectrum);
        let scale = T::lit(1.0 / (n * n));
        Grid::from_vec(
            self.side,
            self.side,
            spectrum.iter().map(|c| c.re * scale).collect(),
        )
    }

    /// Coefficients of a band whose spectrum is constant over the band's
    /// support: the unit "atom" used to seed an all-zero band.
    pub fn support_atom(&self, scale: usize, direction: usize) -> Result<Band<T>> {
        let spec = self
            .specs
            .iter()
            .find(|s| s.scale == scale && s.direction == direction)
            .ok_or_else(|| {
                Error::Curvelet(format!("no band at scale {scale}, direction {direction}"))
            })?;
        let zero = Complex::new(T::zero(), T::zero());
        let mut buf = vec![zero; spec.rows * spec.cols];
        for &w in &spec.wrapped {
            buf[w] = Complex::new(T::one(), T::zero());
        }
        self.ffts[spec.fft].inverse_unnormalized(&mut buf);
        Ok(Band {
            scale,
            direction,
            rows: spec.rows,
            cols: spec.cols,
            coeffs: buf,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_block(seed: u64, side: usize) -> Grid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(side, side, |_, _| rng.random_range(0.0..255.0))
    }

    #[test]
    fn layout_matches_five_scale_configuration() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let pyr = t.forward(&random_block(1, 64)).unwrap();
        let counts: Vec<usize> = (1..=5).map(|s| pyr.directions(s)).collect();
        assert_eq!(counts, vec![1, 8, 16, 16, 1]);
        assert_eq!(directions_per_scale(5, 8), counts);
    }

    #[test]
    fn every_frequency_owned_once() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let total: usize = t.support_sizes().iter().map(|s| s.2).sum();
        assert_eq!(total, 64 * 64);
    }

    #[test]
    fn rejects_small_or_mismatched_blocks() {
        assert!(CurveletTransform::<f64>::new(16).is_err());
        let t = CurveletTransform::<f64>::new(32).unwrap();
        assert!(t.forward(&Grid::zeros(64, 64)).is_err());
    }

    #[test]
    fn zero_block_gives_zero_bands() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let pyr = t.forward(&Grid::zeros(64, 64)).unwrap();
        assert!(pyr.bands.iter().all(|b| b.coeffs.iter().all(|c| c.norm() == 0.0)));
        assert_eq!(t.inverse(&pyr).unwrap(), Grid::zeros(64, 64));
    }

    #[test]
    fn forward_is_linear() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let x = random_block(2, 64);
        let p = t.forward(&x).unwrap();
        let p3 = t.forward(&x.map(|v| 3.0 * v)).unwrap();
        for (a, b) in p.bands.iter().zip(&p3.bands) {
            for (u, v) in a.coeffs.iter().zip(&b.coeffs) {
                assert!((u * 3.0 - v).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip_and_isometry() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let x = random_block(3, 64);
        let p = t.forward(&x).unwrap();
        let y = t.inverse(&p).unwrap();
        let err = x.zip_map(&y, |a, b| a - b).unwrap().max_abs();
        assert!(err < 1e-8 * x.max_abs(), "err {err}");
        let e: f64 = x.data().iter().map(|v| v * v).sum();
        assert!((p.energy() - e).abs() < 1e-9 * e);
    }

    #[test]
    fn opposite_wedges_are_conjugate() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let p = t.forward(&random_block(4, 64)).unwrap();
        for l in 0..8 {
            let a = p.band(3, l).unwrap();
            let b = p.band(3, l + 8).unwrap();
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            for (u, v) in a.coeffs.iter().zip(&b.coeffs) {
                assert!((u.conj() - v).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn scaled_band_survives_round_trip() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let x = random_block(5, 64);
        let mut p = t.forward(&x).unwrap();
        let a0 = p.band_mean_abs(3, 2).unwrap().mean_abs;
        p.band_mut(3, 2).unwrap().scale_by(6.0 / 7.0);
        p.band_mut(3, 10).unwrap().scale_by(6.0 / 7.0);
        let q = t.forward(&t.inverse(&p).unwrap()).unwrap();
        let a1 = q.band_mean_abs(3, 2).unwrap().mean_abs;
        assert!((a1 - a0 * 6.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn band_mean_abs_examples() {
        let band = Band {
            scale: 1,
            direction: 0,
            rows: 2,
            cols: 2,
            coeffs: [3.0, -3.0, 3.0, -3.0]
                .iter()
                .map(|&v| Complex::new(v, 0.0))
                .collect(),
        };
        assert_eq!(band.mean_abs(), 3.0);
        let constant = Band {
            coeffs: vec![Complex::new(-2.5, 0.0); 4],
            ..band.clone()
        };
        assert_eq!(constant.mean_abs(), 2.5);
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let p = t.forward(&random_block(6, 64)).unwrap();
        assert!(p.band_mean_abs(3, 16).is_err());
        assert!(p.band_mean_abs(9, 0).is_err());
        let b = p.band(4, 7).unwrap();
        let brute: f64 = b
            .coeffs
            .iter()
            .map(|c| (c.re * c.re + c.im * c.im).sqrt())
            .sum::<f64>()
            / b.coeffs.len() as f64;
        assert!((p.band_mean_abs(4, 7).unwrap().mean_abs - brute).abs() < 1e-12);
    }

    #[test]
    fn inverse_rejects_shape_mismatch() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let mut p = t.forward(&random_block(7, 64)).unwrap();
        p.bands[5].coeffs.pop();
        assert!(t.inverse(&p).is_err());
        let t32 = CurveletTransform::<f64>::new(32).unwrap();
        let p32 = t32.forward(&random_block(8, 32)).unwrap();
        assert!(t.inverse(&p32).is_err());
    }

    #[test]
    fn scale_three_edits_do_not_leak() {
        let t = CurveletTransform::<f64>::new(64).unwrap();
        let x = random_block(9, 64);
        let p = t.forward(&x).unwrap();
        let mut m = p.clone();
        let mut mod_energy = 0.0;
        for l in 0..16 {
            let band = m.band_mut(3, l).unwrap();
            let before = band.clone();
            band.scale_by(1.3);
            mod_energy += before
                .coeffs
                .iter()
                .zip(&band.coeffs)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
        }
        let q = t.forward(&t.inverse(&m).unwrap()).unwrap();
        let leak: f64 = p
            .bands
            .iter()
            .zip(&q.bands)
            .filter(|(b, _)| b.scale != 3)
            .flat_map(|(a, b)| a.coeffs.iter().zip(&b.coeffs))
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        assert!(leak < 0.05 * mod_energy);
    }
}
