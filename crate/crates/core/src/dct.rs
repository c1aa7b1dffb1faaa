//! Orthonormal 2-D DCT-II, zigzag scan order, and the mid-band noise target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

/// Row `k` holds the k-th orthonormal DCT-II basis vector.
pub fn dct_matrix<T: Real>(n: usize) -> Vec<T> {
    let nf = n as f64;
    let mut m = Vec::with_capacity(n * n);
    for k in 0..n {
        let a = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            let v = a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
            m.push(T::lit(v));
        }
    }
    m
}

fn square_side<T: Real>(g: &Grid<T>) -> Result<usize> {
    if g.width() != g.height() || g.is_empty() {
        return Err(Error::Shape(format!("square grid required, got {:?}", g.dims())));
    }
    Ok(g.width())
}

/// `C * X * C^T` (forward) or `C^T * X * C` (inverse).
fn sandwich<T: Real>(c: &[T], x: &[T], n: usize, inverse: bool) -> Vec<T> {
    let s = n as isize;
    let (c_normal, c_trans) = ((s, 1), (1, s));
    let (left, right) = if inverse { (c_trans, c_normal) } else { (c_normal, c_trans) };
    let mut tmp = vec![T::zero(); n * n];
    T::gemm(n, n, n, T::one(), c, left, x, (s, 1), T::zero(), &mut tmp, (s, 1));
    let mut out = vec![T::zero(); n * n];
    T::gemm(n, n, n, T::one(), &tmp, (s, 1), c, right, T::zero(), &mut out, (s, 1));
    out
}

pub fn dct2<T: Real>(g: &Grid<T>) -> Result<Grid<T>> {
    let n = square_side(g)?;
    let c = dct_matrix::<T>(n);
    Grid::from_vec(n, n, sandwich(&c, g.data(), n, false))
}

pub fn idct2<T: Real>(g: &Grid<T>) -> Result<Grid<T>> {
    let n = square_side(g)?;
    let c = dct_matrix::<T>(n);
    Grid::from_vec(n, n, sandwich(&c, g.data(), n, true))
}

/// JPEG-style zigzag order over an `n x n` grid as `(row, col)` pairs.
pub fn zigzag_order(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n);
    for s in 0..(2 * n).saturating_sub(1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 0 {
            for r in (lo..=hi).rev() {
                out.push((r, s - r));
            }
        } else {
            for r in lo..=hi {
                out.push((r, s - r));
            }
        }
    }
    out
}

/// Zigzag index range `[L/4, 3L/4)` filled by [`midband_noise`].
pub fn midband_range(side: usize) -> std::ops::Range<usize> {
    let l = side * side;
    l / 4..3 * l / 4
}

/// Standard-normal values on the mid-band zigzag DCT positions, all other
/// coefficients zero, inverse transformed. Spatial variance is 1/2.
pub fn midband_noise<T: Real>(side: usize, seed: u64) -> Result<Grid<T>> {
    if side < 2 {
        return Err(Error::Shape(format!("side {side} too small")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = Grid::<T>::zeros(side, side);
    let order = zigzag_order(side);
    for &(r, c) in &order[midband_range(side)] {
        let v: f64 = StandardNormal.sample(&mut rng);
        coeffs.set(c, r, T::lit(v));
    }
    idct2(&coeffs)
}
