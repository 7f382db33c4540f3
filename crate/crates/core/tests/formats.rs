//! Every file format the crate writes reads back unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpreg::checkpoint::Checkpoint;
use warpreg::config::ExperimentConfig;
use warpreg::data::{
    gen_composites, generate_digits, load_idx, load_idx_labels, load_masks_dir, load_records, parse_idx,
    read_idx, read_manifest, read_mask_png, write_composites, write_idx, write_mask_png, IdxArray,
    IMAGES_MAGIC, LABELS_MAGIC,
};
use warpreg::locnet::LocNetModel;
use warpreg::mask::Mask;
use warpreg::matcher::{MatcherConfig, MatcherModel};
use warpreg::metrics::{read_metrics_csv, write_metrics_csv, MetricRow, Split};
use warpreg::Error;

fn bits(ck: &Checkpoint) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    ck.tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn matcher_checkpoint_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = MatcherConfig {
        input_size: 16,
        k: 3,
        fc1: 24,
        fc2: 12,
    };
    let mut model = MatcherModel::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    // Perturb the head so it is not all zeros and identity.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    model.head.weight.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let path = dir.path().join("m.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let loaded = MatcherModel::<f32>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(loaded.config, cfg);
    assert_eq!(bits(&loaded.to_checkpoint()), bits(&model.to_checkpoint()));
    for (a, b) in model.params().iter().zip(loaded.params()) {
        assert_eq!(a.name, b.name);
        let (x, y): (Vec<u32>, Vec<u32>) = (
            a.value.data().iter().map(|v| v.to_bits()).collect(),
            b.value.data().iter().map(|v| v.to_bits()).collect(),
        );
        assert_eq!(x, y, "{}", a.name);
    }
}

#[test]
fn locnet_checkpoint_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = LocNetModel::<f32>::new(64, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let path = dir.path().join("l.ckpt");
    model.to_checkpoint().save(&path).unwrap();
    let loaded = LocNetModel::<f32>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(bits(&loaded.to_checkpoint()), bits(&model.to_checkpoint()));
    assert_eq!(loaded.anchors.len(), model.anchors.len());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let model = MatcherModel::<f32>::new(
        MatcherConfig {
            input_size: 8,
            k: 2,
            fc1: 4,
            fc2: 4,
        },
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let bytes = model.to_checkpoint().to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(&[]).is_err());
}

#[test]
fn idx_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images = IdxArray {
        dims: vec![2, 28, 28],
        data: (0..2 * 28 * 28).map(|_| rng.random()).collect(),
    };
    let labels = IdxArray {
        dims: vec![2],
        data: vec![3, 9],
    };
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
    write_idx(&ip, &images).unwrap();
    write_idx(&lp, &labels).unwrap();
    let raw = std::fs::read(&ip).unwrap();
    assert_eq!(u32::from_be_bytes(raw[..4].try_into().unwrap()), IMAGES_MAGIC);
    let raw = std::fs::read(&lp).unwrap();
    assert_eq!(u32::from_be_bytes(raw[..4].try_into().unwrap()), LABELS_MAGIC);
    assert_eq!(read_idx(&ip).unwrap(), images);
    assert_eq!(load_idx_labels(&lp).unwrap(), vec![3, 9]);
    let planes = load_idx(&ip).unwrap();
    assert_eq!(planes.len(), 2);
    for (p, chunk) in planes.iter().zip(images.data.chunks(28 * 28)) {
        assert_eq!(p.to_u8(), chunk);
        assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn idx_errors_carry_offsets() {
    let e = parse_idx(&[], None).unwrap_err();
    assert!(matches!(e, Error::Format { offset: 0, .. }));
    let e = parse_idx(&[0, 0, 8, 3, 0, 0, 0, 2], None).unwrap_err();
    assert!(matches!(e, Error::Format { offset: 8, .. }));
    let e = parse_idx(&[1, 0, 8, 1, 0, 0, 0, 1, 5], None).unwrap_err();
    assert!(matches!(e, Error::Format { offset: 0, .. }));
}

fn blob(h: usize, w: usize, seed: u64) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mask::from_fn(h, w, |_, _| rng.random_bool(0.5))
}

#[test]
fn mask_directories_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let masks: Vec<(Mask, Mask)> = (0..3).map(|i| (blob(20, 24, i), blob(20, 24, 100 + i))).collect();
    for (i, (m, f)) in masks.iter().enumerate() {
        write_mask_png(dir.path().join(format!("p{i}_moving.png")), m).unwrap();
        write_mask_png(dir.path().join(format!("p{i}_fixed.png")), f).unwrap();
    }
    // Noise the loader must skip.
    write_mask_png(dir.path().join("lonely_moving.png"), &blob(20, 24, 9)).unwrap();
    write_mask_png(dir.path().join("odd_moving.png"), &blob(20, 24, 10)).unwrap();
    write_mask_png(dir.path().join("odd_fixed.png"), &blob(10, 24, 11)).unwrap();

    let ds = load_masks_dir(dir.path()).unwrap();
    assert_eq!(ds.pairs.len(), 3);
    assert_eq!(ds.skipped.len(), 2);
    for (p, (m, f)) in ds.pairs.iter().zip(&masks) {
        assert_eq!(&p.moving, m);
        assert_eq!(&p.fixed, f);
    }
}

#[test]
fn mask_png_threshold_is_128() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.png");
    image::GrayImage::from_raw(3, 1, vec![127, 128, 255]).unwrap().save(&path).unwrap();
    let m = read_mask_png(&path).unwrap();
    assert_eq!(m.data(), &[0.0, 1.0, 1.0]);
    let rgb = dir.path().join("rgb.png");
    image::RgbImage::new(2, 2).save(&rgb).unwrap();
    assert!(matches!(read_mask_png(&rgb), Err(Error::Image { .. })));
}

#[test]
fn empty_mask_directory_is_an_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load_masks_dir(dir.path()).unwrap();
    assert!(ds.pairs.is_empty() && ds.skipped.is_empty());
}

#[test]
fn composites_round_trip_through_png_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let digits = generate_digits(60, &mut ChaCha8Rng::seed_from_u64(3));
    let samples = gen_composites(&digits, 4, 112, 0..=2, 4).unwrap();
    let records = write_composites(dir.path(), "train", &samples).unwrap();
    assert_eq!(read_manifest(dir.path().join("train.csv")).unwrap(), records);
    let loaded = load_records(&records).unwrap();
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!(a.moving_mask, b.moving_mask);
        assert_eq!(a.fixed_mask, b.fixed_mask);
        assert_eq!(a.moving.to_u8(), b.moving.to_u8());
        assert_eq!(a.fixed.to_u8(), b.fixed.to_u8());
        for (x, y) in [(a.gt.xmin, b.gt.xmin), (a.gt.ymin, b.gt.ymin), (a.gt.xmax, b.gt.xmax), (a.gt.ymax, b.gt.ymax)] {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn metrics_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        MetricRow {
            epoch: 1,
            split: Split::Train,
            loss: 0.5,
            dice: 0.25,
            miou: 0.125,
        },
        MetricRow {
            epoch: 1,
            split: Split::Val,
            loss: 0.75,
            dice: 0.375,
            miou: 0.0625,
        },
    ];
    let path = dir.path().join("m.csv");
    write_metrics_csv(&path, &rows).unwrap();
    assert_eq!(read_metrics_csv(&path).unwrap(), rows);
}

#[test]
fn config_file_loads_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    std::fs::write(&path, "seed = 9\nmatcher.epochs = 3\nsplit.test = 7\n").unwrap();
    let c = ExperimentConfig::load(&path).unwrap();
    assert_eq!((c.seed, c.matcher.epochs, c.test), (9, 3, 7));
    std::fs::write(&path, "seed = 9\nmatcher.epoch = 3\n").unwrap();
    let e = ExperimentConfig::load(&path).unwrap_err();
    assert!(matches!(e, Error::Config { line: 2, .. }));
}
