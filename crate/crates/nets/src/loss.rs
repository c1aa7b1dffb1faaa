//! Template energy, extraction and grid-point losses.

use wmsync_core::geometry::{grid_point_error_with_grad, warp_affine, Interp};
use wmsync_core::{Grid, Real, RstParams};

/// Grid side used by the geometric loss.
pub const GRID_POINTS: usize = 10;

/// Mean energy of the raw template: `sum T^2 / U^2`.
pub fn loss_g<T: Real>(t_raw: &Grid<T>) -> f64 {
    t_raw.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>() / t_raw.len() as f64
}

pub fn loss_g_grad<T: Real>(t_raw: &Grid<T>) -> Grid<T> {
    let s = T::lit(2.0 / t_raw.len() as f64);
    t_raw.map(|v| v * s)
}

/// The template map as it should appear after the attack `gt`.
pub fn warped_template<T: Real>(k_true: &Grid<T>, gt: &RstParams) -> Grid<T> {
    if *gt == RstParams::IDENTITY {
        return k_true.clone();
    }
    warp_affine(k_true, &gt.to_affine(), T::zero(), Interp::Bilinear)
}

/// Mean squared difference between the extracted map and the warped truth.
pub fn loss_e<T: Real>(k_ext: &Grid<T>, k_true: &Grid<T>, gt: &RstParams) -> f64 {
    loss_e_with_grad(k_ext, k_true, gt).0
}

pub fn loss_e_with_grad<T: Real>(k_ext: &Grid<T>, k_true: &Grid<T>, gt: &RstParams) -> (f64, Grid<T>) {
    let target = warped_template(k_true, gt);
    let n = k_ext.len() as f64;
    let diff = k_ext.zip_map(&target, |a, b| a - b).expect("template sizes agree");
    let loss = diff.data().iter().map(|d| d.f64() * d.f64()).sum::<f64>() / n;
    let s = T::lit(2.0 / n);
    (loss, diff.map(|d| d * s))
}

/// Grid-point loss with `S = 10`.
pub fn loss_d(est: &RstParams, gt: &RstParams) -> f64 {
    grid_point_error_with_grad(est, gt, GRID_POINTS).0
}

pub fn loss_d_with_grad(est: &RstParams, gt: &RstParams) -> (f64, [f64; 5]) {
    grid_point_error_with_grad(est, gt, GRID_POINTS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_g_examples() {
        assert_eq!(loss_g(&Grid::<f64>::zeros(512, 512)), 0.0);
        assert_eq!(loss_g(&Grid::<f64>::filled(512, 512, 1.0)), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = Grid::<f64>::from_fn(512, 512, |_, _| rng.random_range(-3.0..3.0));
        let mut s = 0.0;
        for y in 0..512 {
            for x in 0..512 {
                s += g.get(x, y) * g.get(x, y);
            }
        }
        assert!((loss_g(&g) - s / (512.0 * 512.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_e_examples() {
        let k = Grid::<f64>::from_fn(64, 64, |x, y| ((x / 8 + y / 8) % 2) as f64);
        let gt = RstParams::new(20.0, 1.1, 0.9, 0.05, 0.0);
        assert_eq!(loss_e(&warped_template(&k, &gt), &k, &gt), 0.0);
        assert_eq!(loss_e(&k, &k, &RstParams::IDENTITY), 0.0);
        let off = k.map(|v| v + 0.1);
        assert!((loss_e(&off, &k, &RstParams::IDENTITY) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn loss_d_examples() {
        assert_eq!(loss_d(&RstParams::IDENTITY, &RstParams::IDENTITY), 0.0);
        let e = loss_d(&RstParams::translation(0.1, 0.0), &RstParams::IDENTITY);
        assert!((e - 0.01).abs() < 1e-12);
        let mut brute = 0.0;
        for j in 0..10 {
            for i in 0..10 {
                let (x, y) = (i as f64 / 9.0 - 0.5, j as f64 / 9.0 - 0.5);
                brute += x * x + y * y;
            }
        }
        assert!((loss_d(&RstParams::IDENTITY, &RstParams::scale(2.0)) - brute / 100.0).abs() < 1e-12);
    }
}
