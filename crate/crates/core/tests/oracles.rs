use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmsync_core::curvelet::CurveletTransform;
use wmsync_core::dct::{dct2, idct2, midband_noise};
use wmsync_core::geometry::{
    add_gaussian_noise, apply_attack, apply_rst, grid_point_error, invert_rst, AttackSpec,
};
use wmsync_core::layout::BlockLayout;
use wmsync_core::qim::{level_parity, quantize_band, QimCodec};
use wmsync_core::{Grid, Payload, QimConfig, RstParams};

fn random_block(side: usize, seed: u64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(side, side, |_, _| rng.random_range(0.0..255.0))
}

#[test]
fn curvelet_round_trip_and_linearity() {
    let tr = CurveletTransform::<f64>::new(64).unwrap();
    let a = random_block(64, 1);
    let b = random_block(64, 2);
    let back = tr.inverse(&tr.forward(&a).unwrap()).unwrap();
    let err = a.data().iter().zip(back.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9, "round trip error {err}");

    let sum = a.zip_map(&b, |x, y| x + y).unwrap();
    let (pa, pb, ps) = (tr.forward(&a).unwrap(), tr.forward(&b).unwrap(), tr.forward(&sum).unwrap());
    for s in 1..=tr.scales() {
        for l in 0..ps.directions(s) {
            let (ba, bb, bs) = (pa.band(s, l).unwrap(), pb.band(s, l).unwrap(), ps.band(s, l).unwrap());
            for ((x, y), z) in ba.coeffs.iter().zip(&bb.coeffs).zip(&bs.coeffs) {
                assert!((x + y - z).norm() < 1e-8);
            }
        }
    }
}

#[test]
fn curvelet_single_precision_round_trip() {
    let tr = CurveletTransform::<f32>::new(64).unwrap();
    let a = random_block(64, 9).convert::<f32>();
    let back = tr.inverse(&tr.forward(&a).unwrap()).unwrap();
    let err = a.data().iter().zip(back.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
    assert!(err < 1e-2, "f32 round trip error {err}");
}

#[test]
fn dct_round_trip_and_midband_target() {
    let a = random_block(32, 4);
    let back = idct2(&dct2(&a).unwrap()).unwrap();
    assert!(a.data().iter().zip(back.data()).all(|(x, y)| (x - y).abs() < 1e-9));
    let t = midband_noise::<f64>(128, 7).unwrap();
    assert!(t.mean().abs() < 1e-2);
    assert_eq!(t, midband_noise::<f64>(128, 7).unwrap());
}

#[test]
fn qim_codec_round_trip_on_random_blocks() {
    let layout = BlockLayout::generate(3, 8, 8).unwrap();
    let codec = QimCodec::<f64>::new(64, QimConfig::default()).unwrap();
    let image = Grid::from_fn(512, 512, |x, y| 128.0 + 60.0 * ((x as f64 / 9.0).sin() * (y as f64 / 13.0).cos()));
    let payload = Payload::random(layout.watermark_count() * 8, &mut ChaCha8Rng::seed_from_u64(5));
    let marked = codec.embed_payload(&image, &layout, &payload).unwrap();
    assert_eq!(codec.decode_payload(&marked, &layout).unwrap(), payload);
}

#[test]
fn quarter_turns_are_exact() {
    let a = random_block(48, 3);
    let mut r = a.clone();
    for _ in 0..4 {
        r = apply_rst(&r, &RstParams::rotation(90.0));
    }
    assert_eq!(r, a);
}

#[test]
fn grid_point_error_examples() {
    let id = RstParams::IDENTITY;
    assert_eq!(grid_point_error(&id, &id, 10), 0.0);
    let t = RstParams::translation(0.1, 0.0);
    assert!((grid_point_error(&t, &id, 10) - 0.01).abs() < 1e-15);
}

#[test]
fn attacks_are_reproducible() {
    let img = random_block(64, 8);
    let spec = AttackSpec {
        rst: RstParams::new(12.0, 1.1, 0.9, 0.02, -0.01),
        noise_var: 25.0,
        jpeg_quality: Some(70),
        noise_seed: 4,
    };
    let a = apply_attack(&img, &spec).unwrap();
    assert_eq!(a, apply_attack(&img, &spec).unwrap());
    assert!(a.data().iter().all(|v| (0.0..=255.0).contains(v)));
    assert_ne!(add_gaussian_noise(&img, 25.0, 1), add_gaussian_noise(&img, 25.0, 2));
}

proptest! {
    #[test]
    fn quantized_means_decode_to_their_bit(a in 0.0..40.0f64, qi in 0usize..4, bit in 0u8..2) {
        let q = [1.0, 2.0, 3.0, 5.0][qi];
        let qa = quantize_band(a, q, bit);
        prop_assert_eq!(level_parity(qa, q), bit);
        prop_assert!((qa - a).abs() <= q);
        prop_assert!(qa >= 0.0);
    }

    #[test]
    fn inverse_rst_undoes_the_map(r in -90.0..90.0f64, s in 0.6..1.6f64, tx in -0.3..0.3f64, ty in -0.3..0.3f64) {
        let p = RstParams::new(r, s, s, tx, ty);
        let inv = invert_rst(&p).unwrap();
        let round = inv.to_affine().compose(&p.to_affine());
        for q in [[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]] {
            let out = round.apply(q);
            prop_assert!((out[0] - q[0]).abs() < 1e-9 && (out[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn rst_parameters_survive_the_affine_form(r in -89.0..89.0f64, sx in 0.6..1.6f64, sy in 0.6..1.6f64, tx in -0.3..0.3f64, ty in -0.3..0.3f64) {
        let p = RstParams::new(r, sx, sy, tx, ty);
        let back = p.to_affine().to_rst();
        for (a, b) in p.to_array().iter().zip(back.to_array()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
