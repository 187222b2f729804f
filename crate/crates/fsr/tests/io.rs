use fsr::imageio::{self, ImageFormat};
use fsr::{checkpoint, data, Error};
use fsr_core::synthetic::face_corpus;
use fsr_core::trainer::Trainer;
use fsr_core::{ModelConfig, TrainConfig, Variant};
use proptest::prelude::*;

#[test]
fn folder_round_trip_is_sorted_and_lossless() {
    let tmp = tempfile::tempdir().unwrap();
    let faces = face_corpus(3, 24, 5).unwrap();
    data::save_dir(tmp.path(), "f", &faces).unwrap();
    std::fs::write(tmp.path().join("notes.txt"), "ignored").unwrap();
    let loaded = data::load_dir(tmp.path()).unwrap();
    let names: Vec<&str> = loaded.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["f0000.png", "f0001.png", "f0002.png"]);
    for ((_, got), want) in loaded.iter().zip(&faces) {
        for (a, b) in got.pixels().iter().zip(want.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn empty_folder_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(data::load_dir(tmp.path()), Err(Error::Usage(_))));
}

#[test]
fn unknown_extension_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let img = face_corpus(1, 8, 1).unwrap().remove(0);
    assert!(matches!(
        imageio::write_image(tmp.path().join("a.bmp"), &img),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn checkpoint_file_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::desk();
    cfg.res_blocks = 1;
    let mut trainer = Trainer::new(
        TrainConfig {
            lr_size: 8,
            queries: 8,
            batch_size: 2,
            ..TrainConfig::default()
        },
        cfg,
        Variant::NO_MODULATION,
    )
    .unwrap();
    let corpus = face_corpus(2, 16, 2).unwrap();
    trainer.run_epoch(&corpus, &mut |_| {}).unwrap();
    let ckpt = trainer.checkpoint();
    let path = tmp.path().join("a.ckpt");
    checkpoint::save(&path, &ckpt).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(std::fs::read(&path).unwrap(), checkpoint::encode(&back).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantized_images_round_trip_exactly(h in 1usize..12, w in 1usize..12, bytes in prop::collection::vec(any::<u8>(), 3 * 11 * 11)) {
        let img = fsr_core::Image::new(h, w, bytes[..h * w * 3].iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
        for f in [ImageFormat::Png, ImageFormat::Ppm] {
            let back = imageio::decode_image(&imageio::encode_image(&img, f).unwrap()).unwrap();
            prop_assert_eq!(&back, &img);
        }
    }

    #[test]
    fn truncated_ppm_never_panics(cut in 0usize..60) {
        let img = face_corpus(1, 4, 0).unwrap().remove(0);
        let bytes = imageio::encode_ppm(&img);
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(imageio::decode_image(&bytes[..cut]).is_err());
    }
}
