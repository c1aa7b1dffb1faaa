use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wmsync::core::dataset::synthetic_image;
use wmsync::core::geometry::apply_rst;
use wmsync::core::metrics::ber;
use wmsync::core::{Payload, QimConfig, RstParams};
use wmsync::pipeline::to_canvas;
use wmsync::{PipelineConfig, Recovery, Watermarker};

fn marker() -> Watermarker<'static, f64> {
    Watermarker::watermark_only(7, 512, 8, &QimConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn canvas_images_decode_exactly(seed in any::<u64>()) {
        let wm = marker();
        let image = synthetic_image(512, 512, seed);
        let payload = Payload::random(wm.capacity(), &mut ChaCha8Rng::seed_from_u64(seed));
        let stego = wm.embed(&image, &payload).unwrap();
        let rep = wm.decode(&stego.stego_image, &Recovery::None).unwrap();
        prop_assert_eq!(rep.payload, payload);
        prop_assert!(stego.psnr > 35.0);
    }

    #[test]
    fn other_sizes_carry_only_the_resized_signal(w in 256usize..900, h in 256usize..900, seed in any::<u64>()) {
        let wm = marker();
        let image = synthetic_image(w, h, seed);
        let payload = Payload::random(wm.capacity(), &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let res = wm.embed(&image, &payload).unwrap();
        prop_assert_eq!(res.stego_image.dims(), (w, h));
        let base = to_canvas(&image, 512);
        let expected = wm
            .embed_canvas(&base, &payload)
            .unwrap()
            .zip_map(&base, |s, o| s - o)
            .unwrap()
            .resize_bilinear(w, h);
        prop_assert_eq!(&res.signal, &expected);
        prop_assert_eq!(&res.unclipped, &image.zip_map(&expected, |o, s| o + s).unwrap());
        let clipped_ok = res
            .stego_image
            .data()
            .iter()
            .zip(res.unclipped.data())
            .all(|(s, u)| *s == u.clamp(0.0, 255.0));
        prop_assert!(clipped_ok);
    }
}

#[test]
fn ground_truth_recovery_undoes_a_quarter_turn() {
    let wm = marker();
    let image = synthetic_image(512, 512, 5);
    let payload = Payload::random(wm.capacity(), &mut ChaCha8Rng::seed_from_u64(5));
    let stego = wm.embed(&image, &payload).unwrap();
    let p = RstParams::rotation(90.0);
    let attacked = apply_rst(&stego.stego_image, &p);
    let gt = wm.decode(&attacked, &Recovery::GroundTruth(p)).unwrap();
    let none = wm.decode(&attacked, &Recovery::None).unwrap();
    let b_gt = ber(gt.payload.bits(), payload.bits()).unwrap();
    let b_none = ber(none.payload.bits(), payload.bits()).unwrap();
    assert!(b_gt <= 0.1, "GT BER {b_gt}");
    assert!(b_none > 0.25, "no-recovery BER {b_none}");
    assert_eq!(gt.recovered_image.dims(), (512, 512));
}

#[test]
fn template_recovery_needs_a_model() {
    let wm = marker();
    let image = synthetic_image(512, 512, 2);
    assert!(!wm.has_template());
    assert!(wm.decode(&image, &Recovery::Template { refine: 0 }).is_err());
}

#[test]
fn config_survives_a_toml_round_trip() {
    let mut cfg = PipelineConfig::default();
    cfg.key = 99;
    cfg.qim.step = 5.0;
    cfg.train.epochs = 7;
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
}
