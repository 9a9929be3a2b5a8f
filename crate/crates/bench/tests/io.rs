use std::fs;
use std::path::Path;

use gr_bench::config::{ExperimentConfig, SeedOverrides};
use gr_bench::idx::{load_idx_dataset, write_idx_dataset, IMAGES_MAGIC, LABELS_MAGIC};
use gr_bench::synthetic::{generate_synthetic, SyntheticSpec};
use gr_bench::BenchError;

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn write_pair(dir: &Path, images: Vec<u8>, labels: Vec<u8>) -> (std::path::PathBuf, std::path::PathBuf) {
    let (i, l) = (dir.join("images.idx"), dir.join("labels.idx"));
    fs::write(&i, images).unwrap();
    fs::write(&l, labels).unwrap();
    (i, l)
}

#[test]
fn idx_scales_bytes_to_unit_interval() {
    let dir = tempfile::tempdir().unwrap();
    let pixels = [0u8, 255, 51, 102, 0, 0, 0, 255];
    let (i, l) = write_pair(
        dir.path(),
        idx_bytes(IMAGES_MAGIC, &[2, 2, 2], &pixels),
        idx_bytes(LABELS_MAGIC, &[2], &[1, 0]),
    );
    let d = load_idx_dataset(&i, &l, None).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.image_shape(), &[2, 2, 1]);
    assert_eq!(d.labels(), &[1, 0]);
    assert_eq!(d.image(0), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(d.image(1)[3], 1.0);
}

#[test]
fn idx_round_trips_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        per_class: 3,
        image_size: 8,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let (i, l) = (dir.path().join("i"), dir.path().join("l"));
    write_idx_dataset(&data, &i, &l).unwrap();
    let back = load_idx_dataset(&i, &l, Some(data.classes())).unwrap();
    assert_eq!(back.labels(), data.labels());
    for (a, b) in back.images().data().iter().zip(data.images().data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn idx_rejects_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = write_pair(
        dir.path(),
        idx_bytes(LABELS_MAGIC, &[1], &[0]),
        idx_bytes(LABELS_MAGIC, &[1], &[0]),
    );
    let err = load_idx_dataset(&i, &l, None).unwrap_err();
    assert!(matches!(err, BenchError::BadMagic { expected: IMAGES_MAGIC, found: LABELS_MAGIC, .. }));
}

#[test]
fn idx_rejects_count_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = write_pair(
        dir.path(),
        idx_bytes(IMAGES_MAGIC, &[2, 1, 1], &[0, 1]),
        idx_bytes(LABELS_MAGIC, &[3], &[0, 1, 1]),
    );
    let err = load_idx_dataset(&i, &l, None).unwrap_err();
    assert!(matches!(err, BenchError::CountMismatch { images: 2, labels: 3 }));
}

#[test]
fn idx_rejects_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = write_pair(
        dir.path(),
        idx_bytes(IMAGES_MAGIC, &[2, 2, 2], &[0; 7]),
        idx_bytes(LABELS_MAGIC, &[2], &[0, 1]),
    );
    let err = load_idx_dataset(&i, &l, None).unwrap_err();
    assert!(matches!(err, BenchError::Truncated { expected: 24, found: 23, .. }));
    let (i, l) = write_pair(dir.path(), vec![0, 0, 8], idx_bytes(LABELS_MAGIC, &[0], &[]));
    assert!(matches!(load_idx_dataset(&i, &l, None), Err(BenchError::Truncated { .. })));
}

#[test]
fn synthetic_data_is_seeded() {
    let spec = SyntheticSpec {
        per_class: 5,
        ..SyntheticSpec::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    assert_eq!(a, generate_synthetic(&spec).unwrap());
    assert_ne!(a, generate_synthetic(&SyntheticSpec { seed: 2, ..spec }).unwrap());
    assert_eq!(a.class_counts(), vec![5; 4]);
}

const SEEDS: &str = "seed.init = 1\nseed.shuffle = 2\nseed.attack = 3\nseed.random = 4\n";

fn parse(text: &str) -> Result<ExperimentConfig, BenchError> {
    ExperimentConfig::parse(text, &SeedOverrides::default())
}

#[test]
fn config_errors_name_the_line() {
    let line = |text: &str| match parse(text) {
        Err(BenchError::Config { line, .. }) => line,
        other => panic!("expected a line error, got {other:?}"),
    };
    assert_eq!(line(&format!("{SEEDS}\nbogus.key = 1\n")), 6);
    assert_eq!(line(&format!("{SEEDS}seed.init = 9\n")), 5);
    assert_eq!(line(&format!("{SEEDS}# comment\nno equals sign\n")), 6);
    assert_eq!(line(&format!("{SEEDS}train.epochs = many\n")), 5);
}

#[test]
fn config_requires_every_seed() {
    let err = parse("seed.init = 1\nseed.shuffle = 2\nseed.attack = 3\n").unwrap_err();
    assert!(err.to_string().contains("seed.random"), "{err}");
    let overrides = SeedOverrides {
        random: Some(7),
        ..SeedOverrides::default()
    };
    let cfg = ExperimentConfig::parse("seed.init = 1\nseed.shuffle = 2\nseed.attack = 3\n", &overrides).unwrap();
    assert_eq!(cfg.seeds.random, 7);
}

#[test]
fn config_rejects_out_of_range_values() {
    for bad in [
        "attack.epsilon = -0.1",
        "attack.fraction = 1.5",
        "nc.threshold = 2",
        "metrics = NC, XYZ",
        "configs = C4",
    ] {
        assert!(parse(&format!("{SEEDS}{bad}\n")).is_err(), "{bad}");
    }
}

#[test]
fn config_render_round_trips() {
    let cfg = parse(&format!("{SEEDS}metrics = dsa, random\nconfigs = C2\nretrain.epochs = 3\n")).unwrap();
    let again = parse(&cfg.render()).unwrap();
    assert_eq!(cfg, again);
}
