//! Dense single-channel 2-D grids (grayscale images, noise fields, templates).

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major `width x height` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} grid",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a grid from `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_u8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        Self::from_vec(width, height, pixels.iter().map(|&p| T::lit(p as f64)).collect())
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two equally sized grids.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_dims(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "grid {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn convert<U: Real>(&self) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Rounds and saturates to 8-bit pixels.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.f64().round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.data.iter().copied().sum::<T>() / T::lit(self.data.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    /// Writes `patch` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, patch: &Self, x0: usize, y0: usize) -> Result<()> {
        if x0 + patch.width > self.width || y0 + patch.height > self.height {
            return Err(Error::Shape(format!(
                "paste {}x{} at ({x0},{y0}) exceeds {}x{}",
                patch.width, patch.height, self.width, self.height
            )));
        }
        for y in 0..patch.height {
            let dst = (y0 + y) * self.width + x0;
            self.data[dst..dst + patch.width]
                .copy_from_slice(&patch.data[y * patch.width..(y + 1) * patch.width]);
        }
        Ok(())
    }

    /// Bilinear sample at continuous index coordinates; `pad` outside the grid.
    #[inline]
    pub fn sample_bilinear(&self, fx: T, fy: T, pad: T) -> T {
        let x0f = fx.floor();
        let y0f = fy.floor();
        let ax = fx - x0f;
        let ay = fy - y0f;
        let x0 = x0f.to_isize().unwrap_or(isize::MIN / 2);
        let y0 = y0f.to_isize().unwrap_or(isize::MIN / 2);
        let px = |x: isize, y: isize| -> T {
            if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
                pad
            } else {
                self.data[y as usize * self.width + x as usize]
            }
        };
        let one = T::one();
        let top = px(x0, y0) * (one - ax) + px(x0 + 1, y0) * ax;
        let bottom = px(x0, y0 + 1) * (one - ax) + px(x0 + 1, y0 + 1) * ax;
        top * (one - ay) + bottom * ay
    }

    /// Bilinear resize with pixel-center alignment and edge clamping.
    ///
    /// Resizing to the current dimensions is an exact copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let xs: Vec<(usize, usize, T)> = (0..width)
            .map(|x| axis_taps((x as f64 + 0.5) * sx - 0.5, self.width))
            .collect();
        let mut out = Vec::with_capacity(width * height);
        let one = T::one();
        for y in 0..height {
            let (y0, y1, ay) = axis_taps((y as f64 + 0.5) * sy - 0.5, self.height);
            let r0 = &self.data[y0 * self.width..(y0 + 1) * self.width];
            let r1 = &self.data[y1 * self.width..(y1 + 1) * self.width];
            for &(x0, x1, ax) in &xs {
                let top = r0[x0] * (one - ax) + r0[x1] * ax;
                let bottom = r1[x0] * (one - ax) + r1[x1] * ax;
                out.push(top * (one - ay) + bottom * ay);
            }
        }
        Self {
            width,
            height,
            data: out,
        }
    }

    /// Separable cubic-convolution resize (Keys, a = -0.5) with pixel-center
    /// alignment and edge clamping. Resizing to the current dimensions is an
    /// exact copy.
    pub fn resize_bicubic(&self, width: usize, height: usize) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let xs: Vec<[(usize, T); 4]> = (0..width)
            .map(|x| cubic_taps((x as f64 + 0.5) * sx - 0.5, self.width))
            .collect();
        let mut rows = Vec::with_capacity(width * self.height);
        for y in 0..self.height {
            let r = &self.data[y * self.width..(y + 1) * self.width];
            for taps in &xs {
                rows.push(taps.iter().fold(T::zero(), |acc, &(i, w)| acc + r[i] * w));
            }
        }
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let taps = cubic_taps::<T>((y as f64 + 0.5) * sy - 0.5, self.height);
            for x in 0..width {
                out.push(taps.iter().fold(T::zero(), |acc, &(i, w)| acc + rows[i * width + x] * w));
            }
        }
        Self {
            width,
            height,
            data: out,
        }
    }

    /// Nearest-neighbour resize with pixel-center alignment.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width, height, |x, y| {
            let sx = ((x * self.width) / width).min(self.width - 1);
            let sy = ((y * self.height) / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }
}

/// Keys cubic-convolution weights (a = -0.5) for taps at offsets -1, 0, 1, 2.
pub(crate) fn keys_weights(frac: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let kernel = |t: f64| {
        let t = t.abs();
        if t <= 1.0 {
            ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
        } else if t < 2.0 {
            A * (((t - 5.0) * t + 8.0) * t - 4.0)
        } else {
            0.0
        }
    };
    [kernel(frac + 1.0), kernel(frac), kernel(1.0 - frac), kernel(2.0 - frac)]
}

fn cubic_taps<T: Real>(pos: f64, len: usize) -> [(usize, T); 4] {
    let base = pos.floor();
    let w = keys_weights(pos - base);
    let clampi = |i: f64| i.clamp(0.0, (len - 1) as f64) as usize;
    [
        (clampi(base - 1.0), T::lit(w[0])),
        (clampi(base), T::lit(w[1])),
        (clampi(base + 1.0), T::lit(w[2])),
        (clampi(base + 2.0), T::lit(w[3])),
    ]
}

fn axis_taps<T: Real>(pos: f64, len: usize) -> (usize, usize, T) {
    let p = pos.clamp(0.0, (len - 1) as f64);
    let i0 = p.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, T::lit(p - i0 as f64))
}
