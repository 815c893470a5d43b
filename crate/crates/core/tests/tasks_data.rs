use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reprog::data::{
    count_squares, counting_image, gen_counting, load_cifar10, load_mnist, normalize_pixel, parse_cifar10, parse_idx,
    sample_layout, CountingConfig, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
use reprog::harness::{load_mnist_dir, MNIST_DIR_ENV};
use reprog::Error;

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn every_ten_square_layout_is_reachable() {
    let cfg = CountingConfig::default();
    let all: Vec<u64> = (0u64..1 << 16).filter(|m| m.count_ones() == 10).collect();
    assert_eq!(all.len() as u64, binomial(16, 10));
    assert_eq!(all.len(), 8008);
    for &layout in all.iter().step_by(37) {
        assert_eq!(count_squares(&cfg, &counting_image(&cfg, layout)), 10);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seen: HashSet<u64> = (0..150_000).map(|_| sample_layout(&mut rng, 16, 10)).collect();
    assert_eq!(seen.len(), 8008);
    assert!(seen.iter().all(|m| m.count_ones() == 10));
}

#[test]
fn layout_counts_follow_binomials() {
    for c in 1..=10u32 {
        let count = (0u64..1 << 16).filter(|m| m.count_ones() == c).count() as u64;
        assert_eq!(count, binomial(16, c as u64));
    }
}

#[test]
fn counting_labels_are_uniform() {
    // 99.9% quantile of chi-squared with 9 degrees of freedom.
    let critical = 27.877;
    for seed in [101, 202] {
        let set = gen_counting(&CountingConfig::with_seed(seed), 10_000).unwrap();
        let hist = set.class_histogram();
        assert_eq!(hist.len(), 10);
        let expected = 1000.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < critical, "seed {seed}: chi2 {chi2} for {hist:?}");
    }
}

#[test]
fn counting_images_are_binary_and_labelled_by_count() {
    let cfg = CountingConfig::with_seed(9);
    let set = gen_counting(&cfg, 2000).unwrap();
    assert_eq!(set.side(), 36);
    for i in 0..set.len() {
        assert_eq!(count_squares(&cfg, set.pixels(i)), set.label(i) + 1);
        let x = set.image(i);
        assert_eq!(x.shape(), &[36, 36, 3]);
        assert!(x.data().iter().all(|&v| v == -1.0 || v == 1.0));
        let white = x.data().iter().filter(|&&v| v == 1.0).count();
        assert_eq!(white, (set.label(i) + 1) * 7 * 7 * 3);
    }
    assert_eq!(gen_counting(&cfg, 2000).unwrap(), set);
}

#[test]
fn pixel_normalisation_endpoints() {
    assert_eq!(normalize_pixel(0), -1.0);
    assert_eq!(normalize_pixel(255), 1.0);
    assert!((normalize_pixel(127) as f64 - (127.0 / 127.5 - 1.0)).abs() < 1e-7);
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, bytes).unwrap();
    path
}

#[test]
fn crafted_idx_files_parse_and_normalise() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..2 * 4 * 4).map(|i| if i % 2 == 0 { 0 } else { 255 }).collect();
    let images = write(dir.path(), "img", &idx_bytes(IDX_IMAGES_MAGIC, &[2, 4, 4], &pixels));
    let labels = write(dir.path(), "lab", &idx_bytes(IDX_LABELS_MAGIC, &[2], &[7, 3]));
    let set = load_mnist(&images, &labels).unwrap();
    assert_eq!((set.len(), set.side()), (2, 4));
    assert_eq!(set.labels(), &[7, 3]);
    let x = set.image(0);
    assert_eq!(x.shape(), &[4, 4, 3]);
    assert_eq!(&x.data()[..6], &[-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
    assert_eq!(load_mnist(&images, &labels).unwrap(), set);
}

#[test]
fn damaged_idx_files_have_distinct_diagnostics() {
    let good = idx_bytes(IDX_IMAGES_MAGIC, &[2, 4, 4], &[0; 32]);
    let arr = parse_idx(&good, IDX_IMAGES_MAGIC, "IDX images").unwrap();
    assert_eq!(arr.dims, vec![2, 4, 4]);

    let bad_magic = parse_idx(&good, IDX_LABELS_MAGIC, "IDX labels").unwrap_err();
    assert!(matches!(bad_magic, Error::BadMagic { found: 0x803, .. }));
    let truncated = parse_idx(&good[..good.len() - 1], IDX_IMAGES_MAGIC, "IDX images").unwrap_err();
    assert!(matches!(truncated, Error::Truncated { .. }));
    let header_only = parse_idx(&good[..6], IDX_IMAGES_MAGIC, "IDX images").unwrap_err();
    assert!(matches!(header_only, Error::Truncated { .. }));

    let dir = tempfile::tempdir().unwrap();
    let images = write(dir.path(), "img", &good);
    let labels = write(dir.path(), "lab", &idx_bytes(IDX_LABELS_MAGIC, &[3], &[1, 2, 3]));
    let mismatch = load_mnist(&images, &labels).unwrap_err();
    assert!(matches!(mismatch, Error::CountMismatch { images: 2, labels: 3 }));

    let messages: HashSet<String> = [bad_magic, truncated, mismatch].iter().map(|e| e.to_string()).collect();
    assert_eq!(messages.len(), 3);
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

#[test]
fn standard_mnist_files_when_present() {
    let dir = mnist_dir();
    if !dir.join("train-images-idx3-ubyte").exists() {
        eprintln!("MNIST not found in {}; skipping", dir.display());
        return;
    }
    let (train, test) = load_mnist_dir(&dir).unwrap();
    assert_eq!((train.len(), train.side()), (60_000, 28));
    assert_eq!((test.len(), test.side()), (10_000, 28));
    assert_eq!(train.image(0).shape(), &[28, 28, 3]);
    assert!(train.labels().iter().all(|&l| l < 10));
    let px = train.pixels(123);
    assert!(px.chunks(3).all(|c| c[0] == c[1] && c[1] == c[2]));
    assert!(test.class_histogram().iter().all(|&c| c > 800));
}

fn cifar_record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072).map(fill));
    r
}

#[test]
fn single_cifar_record_normalises_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "one.bin", &cifar_record(7, |_| 127));
    let set = load_cifar10(&[&path]).unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!(set.label(0), 7);
    let x = set.image(0);
    assert_eq!(x.shape(), &[32, 32, 3]);
    assert!(x.data().iter().all(|&v| (v - (-0.003_921_57)).abs() < 1e-7));
}

#[test]
fn cifar_planes_interleave_losslessly() {
    let bytes = cifar_record(2, |i| (i * 7 % 251) as u8);
    let set = parse_cifar10(&bytes, Path::new("mem")).unwrap();
    let px = set.pixels(0);
    for i in 0..1024 {
        for c in 0..3 {
            assert_eq!(px[i * 3 + c], bytes[1 + c * 1024 + i]);
        }
    }
    let x = set.image(0);
    for (v, &b) in x.data().iter().zip(px) {
        assert_eq!(*v, normalize_pixel(b));
    }
}

#[test]
fn full_cifar_batch_has_ten_thousand_records() {
    let mut bytes = Vec::with_capacity(10_000 * 3073);
    for r in 0..10_000usize {
        bytes.extend(cifar_record((r % 10) as u8, |i| ((i + r) % 256) as u8));
    }
    assert_eq!(bytes.len(), 10_000 * 3073);
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "data_batch_1.bin", &bytes);
    let set = load_cifar10(&[&path]).unwrap();
    assert_eq!(set.len(), 10_000);
    assert_eq!(set.class_histogram(), vec![1000; 10]);
    assert_eq!(load_cifar10(&[&path, &path]).unwrap().len(), 20_000);
}

#[test]
fn cifar_record_size_is_checked() {
    let mut bytes = cifar_record(1, |_| 0);
    bytes.push(0);
    let err = parse_cifar10(&bytes, Path::new("odd.bin")).unwrap_err();
    assert!(matches!(
        err,
        Error::RecordSize {
            len: 3074,
            record: 3073,
            ..
        }
    ));
    assert!(err.to_string().contains("odd.bin"));
}
