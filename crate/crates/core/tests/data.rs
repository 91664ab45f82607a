use kspace::data::*;
use kspace::harness::auroc;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

/// Upper bound on the fraction of k-space energy outside the low band for a
/// negative. Measured maximum over seeds 0..1000: 6.2e-4.
const TAU_BG: f64 = 1e-3;

fn outside_low_band(k: &kspace::numerics::ComplexTensor<f64>, params: &PhantomParams) -> (Vec<f64>, f64) {
    let d_c = k.shape()[1];
    let (c, lb) = (d_c / 2, params.low_band_cols(d_c));
    let e = column_energy(k);
    let total: f64 = e.iter().sum();
    let out: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(j, &v)| if (j as isize - c as isize).unsigned_abs() > lb { v } else { 0.0 })
        .collect();
    let frac = out.iter().sum::<f64>() / total;
    (out, frac)
}

#[test]
fn negatives_have_no_band_energy_and_positives_do() {
    let p = PhantomParams::default();
    for s in 0..1000u64 {
        for positive in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let ph = generate_phantom(&mut rng, 32, 32, positive, &p).unwrap();
            let (_, frac) = outside_low_band(&to_kspace(&ph.image, 0.0, &mut rng).unwrap(), &p);
            if positive {
                assert!(frac > TAU_BG, "seed {s}: positive band fraction {frac}");
            } else {
                assert!(frac < TAU_BG, "seed {s}: negative band fraction {frac}");
            }
        }
    }
}

#[test]
fn positive_energy_peaks_in_lesion_band() {
    let p = PhantomParams::default();
    for s in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let ph = generate_phantom(&mut rng, 32, 32, true, &p).unwrap();
        let f = ph.lesion_offset.unwrap();
        let (out, _) = outside_low_band(&to_kspace(&ph.image, 0.0, &mut rng).unwrap(), &p);
        let jmax = (0..32).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
        let d = (jmax as isize - 16).unsigned_abs();
        assert!(d + 1 >= f && d <= f + 1, "seed {s}: peak at offset {d}, lesion at {f}");
    }
}

#[test]
fn noise_std_matches_target() {
    let p = PhantomParams::default();
    let sigma = 0.05;
    let (mut ss, mut n, mut target) = (0.0, 0usize, 0.0);
    for s in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let img = generate_phantom(&mut rng, 32, 32, s % 2 == 0, &p).unwrap().image;
        let clean = to_kspace(&img, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let noisy = to_kspace(&img, sigma, &mut ChaCha8Rng::seed_from_u64(1000 + s)).unwrap();
        let mean_mag = clean.magnitude().sum() / clean.len() as f64;
        target += sigma * mean_mag;
        for (a, b) in noisy.re.data().iter().chain(noisy.im.data()).zip(clean.re.data().iter().chain(clean.im.data())) {
            ss += (a - b).powi(2);
            n += 1;
        }
    }
    let empirical = (ss / n as f64).sqrt();
    let target = target / 100.0;
    assert!((empirical / target - 1.0).abs() < 0.05, "noise std {empirical} vs {target}");
}

#[test]
fn noiseless_round_trip_reproduces_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = generate_phantom(&mut rng, 32, 32, true, &PhantomParams::default()).unwrap().image;
    let back = image_from_kspace(&to_kspace(&img, 0.0, &mut rng).unwrap()).unwrap();
    for (a, b) in img.data().iter().zip(back.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn write_read_round_trip() {
    let ds = common::small_dataset(6, 2, 2, 16, 0.5, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.kspc");
    write_dataset(&path, &ds).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.records.len(), 10);
    assert_eq!(back.split, ds.split);
    assert_eq!(back.norm_constant.to_bits(), ds.norm_constant.to_bits());
    for (a, b) in ds.records.iter().zip(&back.records) {
        assert_eq!((a.id, a.label), (b.id, b.label));
        let bits = |t: &kspace::numerics::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.kspace.re), bits(&b.kspace.re));
        assert_eq!(bits(&a.kspace.im), bits(&b.kspace.im));
    }
}

#[test]
fn corrupted_files_are_rejected() {
    let ds = common::small_dataset(6, 2, 2, 16, 0.5, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.kspc");
    write_dataset(&path, &ds).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let split = std::fs::read(split_path(&path)).unwrap();
    let put = |name: &str, b: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, b).unwrap();
        std::fs::write(split_path(&p), &split).unwrap();
        p
    };

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_dataset(&put("magic", &bad)), Err(DataError::BadMagic(_))));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(
        read_dataset(&put("version", &bad)),
        Err(DataError::VersionMismatch { found: 7, .. })
    ));

    // header is 24 bytes; each record is 9 + 16·16·8 bytes
    let record = 9 + 16 * 16 * 8;
    let cut = 24 + 3 * record + 100;
    assert!(matches!(
        read_dataset(&put("trunc", &bytes[..cut])),
        Err(DataError::Truncated { record: 3 })
    ));
    assert!(matches!(read_dataset(&put("head", &bytes[..10])), Err(DataError::TruncatedHeader)));
}

#[test]
fn band_energy_oracle_separates_classes() {
    let config = DatasetConfig::default();
    let ds = build_dataset(&config).unwrap();
    let cols = config.phantom.informative_columns(ds.d_c);
    let test = ds.split_records(SplitName::Test);
    let scores: Vec<f64> = test
        .iter()
        .map(|r| {
            let e = column_energy(&r.kspace);
            cols.iter().map(|&j| e[j]).sum()
        })
        .collect();
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    let auc = auroc(&scores, &labels).unwrap();
    assert!(auc >= 0.9, "band-energy oracle AUROC {auc}");
}
