mod common;

use std::io::Write as _;

use common::{data_dir, iris};
use proptest::prelude::*;
use qunl::data::{
    load_idx_pair, load_iris, make_forget, parse_idx, read_maybe_gzip, split, subsample_per_class, ForgetSpec, IdxData,
    LabeledSet,
};
use qunl::diffcore::Tensor;
use qunl::error::Location;
use qunl::Error;

/// Writes an IDX blob from first principles: big-endian magic, dims, u8 payload.
fn idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn byte_offset(e: Error) -> usize {
    match e {
        Error::Format {
            location: Location::Byte(b),
            ..
        } => b,
        other => panic!("expected a byte-located format error, got {other}"),
    }
}

fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap()
}

proptest! {
    #[test]
    fn constructed_image_files_round_trip(n in 1u32..5, r in 1u32..6, c in 1u32..6, seed in any::<u64>()) {
        let payload: Vec<u8> = (0..n * r * c).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let blob = idx(0x803, &[n, r, c], &payload);
        let IdxData::Images(t) = parse_idx(&blob).unwrap() else { panic!("labels") };
        prop_assert_eq!(t.shape(), &[n as usize, 1, r as usize, c as usize][..]);
        let back: Vec<u8> = t.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        prop_assert_eq!(&back, &payload);
        prop_assert_eq!(read_maybe_gzip(gzip(&blob)).unwrap(), blob);
    }

    #[test]
    fn constructed_label_files_round_trip(labels in prop::collection::vec(0u8..10, 1..50)) {
        let blob = idx(0x801, &[labels.len() as u32], &labels);
        let want: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        prop_assert_eq!(parse_idx(&blob).unwrap(), IdxData::Labels(want));
    }
}

#[test]
fn corrupt_fixtures_report_offsets() {
    let good = idx(0x803, &[2, 3, 3], &[7; 18]);
    assert_eq!(byte_offset(parse_idx(&idx(0x804, &[2, 3, 3], &[7; 18])).unwrap_err()), 0);
    assert_eq!(byte_offset(parse_idx(&good[..2]).unwrap_err()), 2);
    assert_eq!(byte_offset(parse_idx(&good[..9]).unwrap_err()), 9);
    assert_eq!(byte_offset(parse_idx(&idx(0x803, &[2, 0, 3], &[])).unwrap_err()), 8);
    assert_eq!(byte_offset(parse_idx(&idx(0x801, &[0], &[])).unwrap_err()), 4);
    assert_eq!(byte_offset(parse_idx(&good[..good.len() - 5]).unwrap_err()), good.len() - 5);
    let mut long = good.clone();
    long.extend_from_slice(&[1, 2]);
    assert_eq!(byte_offset(parse_idx(&long).unwrap_err()), good.len());
    assert_eq!(byte_offset(read_maybe_gzip(vec![0x1f, 0x8b, 0, 1, 2]).unwrap_err()), 0);
}

#[test]
fn canonical_files_match_independent_decoder() {
    // Values frozen from a separate Python gzip/struct decode of the same files.
    let dir = data_dir();
    for (ds, pixel_sum) in [("mnist", 31095u64), ("fashion", 79892)] {
        let set = load_idx_pair(
            &dir.join(format!("{ds}-images-idx3-ubyte.gz")),
            &dir.join(format!("{ds}-labels-idx1-ubyte.gz")),
            10,
            (None, None),
        )
        .unwrap();
        assert_eq!(set.len(), 2000);
        assert_eq!(&set.labels()[..12], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1]);
        assert_eq!(set.class_counts(), vec![200; 10]);
        let first: u64 = set.inputs().row(0).iter().map(|v| (v * 255.0).round() as u64).sum();
        assert_eq!(first, pixel_sum, "{ds}");
    }
}

#[test]
fn checksums_are_enforced() {
    let dir = data_dir();
    let err = load_idx_pair(
        &dir.join("mnist-images-idx3-ubyte.gz"),
        &dir.join("mnist-labels-idx1-ubyte.gz"),
        10,
        (Some("00"), None),
    )
    .unwrap_err();
    assert!(err.is_config(), "{err}");
    let err = load_idx_pair(&dir.join("nope.gz"), &dir.join("nope.gz"), 10, (None, None)).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn iris_is_standardized() {
    let set = iris();
    assert_eq!(set.len(), 150);
    assert_eq!(set.class_counts(), vec![50, 50, 50]);
    for c in 0..4 {
        let col: Vec<f64> = (0..150).map(|r| set.inputs().row(r)[c]).collect();
        let mean = col.iter().sum::<f64>() / 150.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 150.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn iris_errors_carry_line_numbers() {
    let line = |e: Error| match e {
        Error::Format {
            location: Location::Line(l),
            ..
        } => l,
        other => panic!("{other}"),
    };
    let ok = "5.1,3.5,1.4,0.2,Iris-setosa\n6.0,2.2,5.0,1.5,Iris-virginica\n";
    assert_eq!(load_iris(&format!("sl,sw,pl,pw,class\n{ok}")).unwrap().len(), 2);
    assert_eq!(line(load_iris(&format!("{ok}1,2,3,Iris-setosa\n")).unwrap_err()), 3);
    assert_eq!(line(load_iris(&format!("{ok}1,2,x,4,Iris-setosa\n")).unwrap_err()), 3);
    assert_eq!(line(load_iris(&format!("{ok}\n1,2,3,4,rose\n")).unwrap_err()), 4);
}

fn toy(n_per: usize, k: usize) -> LabeledSet {
    let n = n_per * k;
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let x = Tensor::new(vec![n, 2], (0..2 * n).map(|i| i as f64).collect()).unwrap();
    LabeledSet::new(x, labels, k).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_pool(
        n_per in 5usize..30,
        k in 2usize..5,
        test_fraction in 0.1f64..0.5,
        fraction in 0.01f64..0.5,
        full in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let pool = toy(n_per, k);
        let (train, test) = split(&pool, test_fraction, seed).unwrap();
        let mut ids: Vec<usize> = train.ids().iter().chain(test.ids()).copied().collect();
        ids.sort();
        prop_assert_eq!(ids, (0..pool.len()).collect::<Vec<_>>());
        for (c, (a, b)) in train.class_counts().iter().zip(test.class_counts()).enumerate() {
            prop_assert_eq!(a + b, n_per, "class {}", c);
        }

        let spec = if full {
            ForgetSpec::FullClass { class: seed as usize % k }
        } else {
            ForgetSpec::Subset { fraction, seed, stratified: seed % 2 == 0 }
        };
        let size = |n: usize| ((fraction * n as f64) - 1e-9).ceil() as usize;
        if !full && fraction * (train.len() as f64) < 1.0 {
            prop_assert!(make_forget(&train, &test, &spec).unwrap_err().to_string().contains("selects nothing"));
            return Ok(());
        }
        let s = make_forget(&train, &test, &spec).unwrap();
        let mut both: Vec<usize> = s.retain.ids().iter().chain(s.forget.ids()).copied().collect();
        both.sort();
        let mut want = train.ids().to_vec();
        want.sort();
        prop_assert_eq!(both, want);
        prop_assert!(!s.forget.is_empty() && !s.retain.is_empty());
        if let ForgetSpec::FullClass { class } = spec {
            prop_assert!(s.forget.labels().iter().all(|&y| y == class));
            prop_assert!(s.retain.labels().iter().all(|&y| y != class));
            prop_assert!(s.test.labels().iter().all(|&y| y != class));
            let held = s.test_forget.as_ref().unwrap();
            prop_assert!(held.labels().iter().all(|&y| y == class));
            prop_assert_eq!(held.len() + s.test.len(), test.len());
        } else {
            let want = if seed % 2 == 0 {
                train.class_counts().into_iter().map(size).sum()
            } else {
                size(train.len())
            };
            prop_assert_eq!(s.forget.len(), want);
            prop_assert_eq!(s.test.len(), test.len());
        }
    }

    #[test]
    fn subsampling_is_balanced_and_reproducible(n_per in 3usize..20, take in 1usize..3, seed in any::<u64>()) {
        let pool = toy(n_per, 3);
        let a = subsample_per_class(&pool, take, seed).unwrap();
        prop_assert_eq!(a.class_counts(), vec![take; 3]);
        let b = subsample_per_class(&pool, take, seed).unwrap();
        prop_assert_eq!(a.ids(), b.ids());
        prop_assert!(subsample_per_class(&pool, n_per + 1, seed).is_err());
    }
}
