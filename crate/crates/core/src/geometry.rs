//! Rotation/scale/translation maps, warps, attack synthesis and the grid-point loss.
//!
//! `RstParams` describe a *sampling* map in unit-square coordinates: output
//! point `q` reads the input at `c + Rot(R) * diag(Sx, Sy) * (q - c) + (Tx, Ty)`
//! with `c` the canvas center, i.e. scale about the center, then rotate about
//! the center, then translate. With rows growing downward, `Rot(R)` turns the
//! picture content counterclockwise by `R` degrees, `S > 1` shrinks it and a
//! positive `Tx` moves it left by `Tx` of the width.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{keys_weights, Grid};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RstParams {
    /// Degrees, counterclockwise about the center.
    pub rotation: f64,
    pub scale_x: f64,
    pub scale_y: f64,
    /// Fraction of the width.
    pub translate_x: f64,
    /// Fraction of the height.
    pub translate_y: f64,
}

impl Default for RstParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RstParams {
    pub const IDENTITY: Self = Self {
        rotation: 0.0,
        scale_x: 1.0,
        scale_y: 1.0,
        translate_x: 0.0,
        translate_y: 0.0,
    };

    pub fn new(rotation: f64, scale_x: f64, scale_y: f64, translate_x: f64, translate_y: f64) -> Self {
        Self {
            rotation,
            scale_x,
            scale_y,
            translate_x,
            translate_y,
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation: deg,
            ..Self::IDENTITY
        }
    }

    pub fn scale(s: f64) -> Self {
        Self {
            scale_x: s,
            scale_y: s,
            ..Self::IDENTITY
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            translate_x: tx,
            translate_y: ty,
            ..Self::IDENTITY
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.rotation,
            self.scale_x,
            self.scale_y,
            self.translate_x,
            self.translate_y,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.to_array().iter().all(|v| v.is_finite());
        if !finite || self.scale_x <= 0.0 || self.scale_y <= 0.0 {
            return Err(Error::Param(format!("degenerate RST parameters {self:?}")));
        }
        Ok(())
    }

    pub fn to_affine(&self) -> Affine {
        let (c, s) = cos_sin_deg(self.rotation);
        Affine {
            m: [
                [c * self.scale_x, -s * self.scale_y],
                [s * self.scale_x, c * self.scale_y],
            ],
            t: [self.translate_x, self.translate_y],
        }
    }
}

/// Cosine and sine of an angle in degrees, exact at multiples of 90.
pub fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let quarter = deg / 90.0;
    if quarter.fract() == 0.0 && quarter.abs() < 1e15 {
        match (quarter as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = deg.to_radians();
        (r.cos(), r.sin())
    }
}

/// Center-anchored affine map `p -> c + m (p - c) + t` in unit-square coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine {
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0], [0.0, 1.0]],
        t: [0.0, 0.0],
    };

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// Maps a unit-square point.
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let v = [p[0] - 0.5, p[1] - 0.5];
        [
            0.5 + self.m[0][0] * v[0] + self.m[0][1] * v[1] + self.t[0],
            0.5 + self.m[1][0] * v[0] + self.m[1][1] * v[1] + self.t[1],
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if !(det.abs() > 1e-12) || !det.is_finite() {
            return Err(Error::Param("singular affine map".into()));
        }
        let inv = [
            [self.m[1][1] / det, -self.m[0][1] / det],
            [-self.m[1][0] / det, self.m[0][0] / det],
        ];
        let t = [
            -(inv[0][0] * self.t[0] + inv[0][1] * self.t[1]),
            -(inv[1][0] * self.t[0] + inv[1][1] * self.t[1]),
        ];
        Ok(Self { m: inv, t })
    }

    /// `self` after `other`: `p -> self(other(p))`.
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.m;
        let b = &other.m;
        let m = [
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ];
        let t = [
            a[0][0] * other.t[0] + a[0][1] * other.t[1] + self.t[0],
            a[1][0] * other.t[0] + a[1][1] * other.t[1] + self.t[1],
        ];
        Self { m, t }
    }

    /// Closest RST parameters (exact when the columns of `m` are orthogonal).
    pub fn to_rst(&self) -> RstParams {
        let rotation = self.m[1][0].atan2(self.m[0][0]).to_degrees();
        RstParams {
            rotation,
            scale_x: self.m[0][0].hypot(self.m[1][0]),
            scale_y: self.m[0][1].hypot(self.m[1][1]),
            translate_x: self.t[0],
            translate_y: self.t[1],
        }
    }
}

/// Source index coordinates read by output pixel `(x, y)`.
#[inline]
fn source_coords(a: &Affine, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
    let (wf, hf) = (w as f64, h as f64);
    let vx = x as f64 + 0.5 - wf / 2.0;
    let vy = y as f64 + 0.5 - hf / 2.0;
    let sx = wf / 2.0 + a.m[0][0] * vx + a.m[0][1] * vy + a.t[0] * wf - 0.5;
    let sy = hf / 2.0 + a.m[1][0] * vx + a.m[1][1] * vy + a.t[1] * hf - 0.5;
    (sx, sy)
}

/// Interpolation kernel of a warp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Bilinear,
    /// Keys cubic convolution (a = -0.5).
    #[default]
    Bicubic,
}

/// Calls `f(x, y, weight)` for every source tap of a continuous sample point.
#[inline]
fn for_each_tap(interp: Interp, sx: f64, sy: f64, mut f: impl FnMut(isize, isize, f64)) {
    let bx = sx.floor();
    let by = sy.floor();
    if !bx.is_finite() || !by.is_finite() || bx.abs() > 1e9 || by.abs() > 1e9 {
        return;
    }
    let (fx, fy) = (sx - bx, sy - by);
    let (bx, by) = (bx as isize, by as isize);
    match interp {
        Interp::Bilinear => {
            let wx = [1.0 - fx, fx];
            let wy = [1.0 - fy, fy];
            for (j, wyj) in wy.iter().enumerate() {
                for (i, wxi) in wx.iter().enumerate() {
                    f(bx + i as isize, by + j as isize, wxi * wyj);
                }
            }
        }
        Interp::Bicubic => {
            let wx = keys_weights(fx);
            let wy = keys_weights(fy);
            for (j, wyj) in wy.iter().enumerate() {
                for (i, wxi) in wx.iter().enumerate() {
                    f(bx - 1 + i as isize, by - 1 + j as isize, wxi * wyj);
                }
            }
        }
    }
}

/// Backward-maps `image` through `a`; taps outside the grid read `pad`.
pub fn warp_affine<T: Real>(image: &Grid<T>, a: &Affine, pad: T, interp: Interp) -> Grid<T> {
    let (w, h) = image.dims();
    let data = image.data();
    Grid::from_fn(w, h, |x, y| {
        let (sx, sy) = source_coords(a, x, y, w, h);
        let mut acc = T::zero();
        let mut seen = false;
        for_each_tap(interp, sx, sy, |px, py, wgt| {
            seen = true;
            let v = if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                data[py as usize * w + px as usize]
            } else {
                pad
            };
            acc += v * T::lit(wgt);
        });
        if seen {
            acc
        } else {
            pad
        }
    })
}

/// Adjoint of [`warp_affine`] with zero padding: scatters output gradients back
/// onto the source grid.
pub fn warp_affine_adjoint<T: Real>(grad_out: &Grid<T>, a: &Affine, interp: Interp) -> Grid<T> {
    let (w, h) = grad_out.dims();
    let mut grad_in = Grid::zeros(w, h);
    let data = grad_in.data_mut();
    for y in 0..h {
        for x in 0..w {
            let g = grad_out.get(x, y);
            if g == T::zero() {
                continue;
            }
            let (sx, sy) = source_coords(a, x, y, w, h);
            for_each_tap(interp, sx, sy, |px, py, wgt| {
                if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                    data[py as usize * w + px as usize] += g * T::lit(wgt);
                }
            });
        }
    }
    grad_in
}

/// Applies the RST sampling map with cubic interpolation and black padding.
pub fn apply_rst<T: Real>(image: &Grid<T>, p: &RstParams) -> Grid<T> {
    apply_rst_with(image, p, Interp::Bicubic)
}

pub fn apply_rst_with<T: Real>(image: &Grid<T>, p: &RstParams, interp: Interp) -> Grid<T> {
    if *p == RstParams::IDENTITY {
        return image.clone();
    }
    warp_affine(image, &p.to_affine(), T::zero(), interp)
}

/// Parameters of the inverse map.
///
/// Exact for isotropic scaling or axis-aligned rotations; otherwise the
/// closest RST map. Recovery uses [`Affine::inverse`] directly.
pub fn invert_rst(p: &RstParams) -> Result<RstParams> {
    p.validate()?;
    Ok(p.to_affine().inverse()?.to_rst())
}

/// Unit-square grid points with corners included: `i / (s - 1)`.
pub fn grid_points(s: usize) -> Vec<[f64; 2]> {
    let step = 1.0 / (s.max(2) - 1) as f64;
    (0..s)
        .flat_map(|j| (0..s).map(move |i| [i as f64 * step, j as f64 * step]))
        .collect()
}

/// Mean squared displacement between grid points mapped by `est` and `gt`.
pub fn grid_point_error(est: &RstParams, gt: &RstParams, s: usize) -> f64 {
    grid_point_error_with_grad(est, gt, s).0
}

/// Grid-point error and its gradient with respect to the five `est` parameters
/// (rotation in degrees).
pub fn grid_point_error_with_grad(est: &RstParams, gt: &RstParams, s: usize) -> (f64, [f64; 5]) {
    let e = est.to_affine();
    let g = gt.to_affine();
    let (c, sn) = cos_sin_deg(est.rotation);
    let (sx, sy) = (est.scale_x, est.scale_y);
    let pts = grid_points(s);
    let n = pts.len() as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; 5];
    for p in pts {
        let pe = e.apply(p);
        let pg = g.apply(p);
        let d = [pe[0] - pg[0], pe[1] - pg[1]];
        loss += d[0] * d[0] + d[1] * d[1];
        let v = [p[0] - 0.5, p[1] - 0.5];
        let d_rot = [
            (-sn * sx * v[0] - c * sy * v[1]) * std::f64::consts::PI / 180.0,
            (c * sx * v[0] - sn * sy * v[1]) * std::f64::consts::PI / 180.0,
        ];
        let d_sx = [c * v[0], sn * v[0]];
        let d_sy = [-sn * v[1], c * v[1]];
        grad[0] += 2.0 * (d[0] * d_rot[0] + d[1] * d_rot[1]);
        grad[1] += 2.0 * (d[0] * d_sx[0] + d[1] * d_sx[1]);
        grad[2] += 2.0 * (d[0] * d_sy[0] + d[1] * d_sy[1]);
        grad[3] += 2.0 * d[0];
        grad[4] += 2.0 * d[1];
    }
    for v in &mut grad {
        *v /= n;
    }
    (loss / n, grad)
}

/// Geometric plus signal distortion applied in the order RST, noise, JPEG.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub rst: RstParams,
    /// Gaussian noise variance in 8-bit pixel units.
    pub noise_var: f64,
    pub jpeg_quality: Option<u8>,
    /// Seed of the noise realization.
    pub noise_seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            rst: RstParams::IDENTITY,
            noise_var: 0.0,
            jpeg_quality: None,
            noise_seed: 0,
        }
    }
}

impl AttackSpec {
    pub fn rst(rst: RstParams) -> Self {
        Self {
            rst,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rst.validate()?;
        if !(0.0..=1e6).contains(&self.noise_var) {
            return Err(Error::Param(format!("noise variance {}", self.noise_var)));
        }
        if let Some(q) = self.jpeg_quality {
            if !(1..=100).contains(&q) {
                return Err(Error::Param(format!("JPEG quality {q}")));
            }
        }
        Ok(())
    }
}

/// Sampling ranges for training attacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackRanges {
    pub rotation: (f64, f64),
    pub scale: (f64, f64),
    pub translate: (f64, f64),
    pub noise_var: (f64, f64),
    pub jpeg_quality: (u8, u8),
    /// Probability that Gaussian noise is applied at all.
    pub noise_prob: f64,
    /// Probability that JPEG compression is applied at all.
    pub jpeg_prob: f64,
}

impl Default for AttackRanges {
    fn default() -> Self {
        Self {
            rotation: (0.0, 90.0),
            scale: (0.7, 1.5),
            translate: (0.0, 0.3),
            noise_var: (0.0, 200.0),
            jpeg_quality: (30, 100),
            noise_prob: 0.5,
            jpeg_prob: 0.5,
        }
    }
}

impl AttackRanges {
    /// Geometry-only ranges (no signal distortion).
    pub fn geometric(rotation: (f64, f64), scale: (f64, f64), translate: (f64, f64)) -> Self {
        Self {
            rotation,
            scale,
            translate,
            noise_prob: 0.0,
            jpeg_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> AttackSpec {
        let uni = |rng: &mut dyn rand::RngCore, r: (f64, f64)| {
            if r.1 > r.0 {
                r.0 + (r.1 - r.0) * rng.random::<f64>()
            } else {
                r.0
            }
        };
        let rst = RstParams {
            rotation: uni(rng, self.rotation),
            scale_x: uni(rng, self.scale),
            scale_y: uni(rng, self.scale),
            translate_x: uni(rng, self.translate),
            translate_y: uni(rng, self.translate),
        };
        let noise_var = if rng.random::<f64>() < self.noise_prob {
            uni(rng, self.noise_var)
        } else {
            0.0
        };
        let jpeg_quality = if rng.random::<f64>() < self.jpeg_prob {
            Some(rng.random_range(self.jpeg_quality.0..=self.jpeg_quality.1))
        } else {
            None
        };
        AttackSpec {
            rst,
            noise_var,
            jpeg_quality,
            noise_seed: rng.random(),
        }
    }
}

/// Draws an attack from the default training ranges; deterministic per seed.
pub fn sample_attack(seed: u64) -> AttackSpec {
    AttackRanges::default().sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn add_gaussian_noise<T: Real>(image: &Grid<T>, variance: f64, seed: u64) -> Grid<T> {
    if variance <= 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for v in out.data_mut() {
        *v += T::lit(normal.sample(&mut rng));
    }
    out
}

/// Baseline JPEG encode/decode of an 8-bit grayscale rendering of `image`.
pub fn jpeg_round_trip<T: Real>(image: &Grid<T>, quality: u8) -> Result<Grid<T>> {
    use image::codecs::jpeg::JpegEncoder;
    let (w, h) = image.dims();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&image.to_u8(), w as u32, h as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?
        .to_luma8();
    Grid::from_u8(w, h, decoded.as_raw())
}

/// RST, then additive Gaussian noise, then JPEG; the result is clipped to `[0, 255]`.
pub fn apply_attack<T: Real>(image: &Grid<T>, a: &AttackSpec) -> Result<Grid<T>> {
    a.validate()?;
    let mut out = apply_rst(image, &a.rst);
    out = add_gaussian_noise(&out, a.noise_var, a.noise_seed);
    if let Some(q) = a.jpeg_quality {
        out = jpeg_round_trip(&out, q)?;
    }
    Ok(out.clamp(T::zero(), T::lit(255.0)))
}
