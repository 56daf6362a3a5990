use std::time::Instant;

use gdd_core::synth::{
    argmax_classes, decode_split, encode_split, generate_dataset, read_split, stack_batch,
    write_split, ConfusionMatrix, SynthSpec,
};
use proptest::prelude::*;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        train_count: 24,
        val_count: 8,
        image_size: 16,
        ..SynthSpec::default()
    }
}

#[test]
fn same_seed_same_pixels() {
    let (a, _) = generate_dataset(&small_spec(9)).unwrap();
    let (b, _) = generate_dataset(&small_spec(9)).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.image.data(), y.image.data());
        assert_eq!(x.labels, y.labels);
    }
    let (c, _) = generate_dataset(&small_spec(10)).unwrap();
    assert!(a.iter().zip(&c).any(|(x, y)| x.labels != y.labels));
}

#[test]
fn growing_a_split_keeps_its_prefix() {
    let (short, _) = generate_dataset(&small_spec(4)).unwrap();
    let (long, _) = generate_dataset(&SynthSpec {
        train_count: 40,
        ..small_spec(4)
    })
    .unwrap();
    for (x, y) in short.iter().zip(&long) {
        assert_eq!(x.image.data(), y.image.data());
    }
}

#[test]
fn topmost_shape_owns_its_pixels() {
    let (train, val) = generate_dataset(&small_spec(5)).unwrap();
    for s in train.iter().chain(&val) {
        let n = s.labels.len().isqrt();
        for y in 0..n {
            for x in 0..n {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let expected = s
                    .shapes
                    .iter()
                    .rev()
                    .find(|p| p.geometry.contains(px, py))
                    .map_or(0, |p| p.class);
                assert_eq!(s.labels[y * n + x], expected);
            }
        }
    }
}

#[test]
fn pixels_stay_in_unit_range() {
    let (train, _) = generate_dataset(&SynthSpec {
        noise_level: 0.5,
        ..small_spec(6)
    })
    .unwrap();
    assert!(train
        .iter()
        .flat_map(|s| s.image.data())
        .all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn generates_a_thousand_images_per_second() {
    let spec = SynthSpec {
        train_count: 2000,
        val_count: 1,
        ..SynthSpec::default()
    };
    let start = Instant::now();
    let (train, _) = generate_dataset(&spec).unwrap();
    let rate = train.len() as f64 / start.elapsed().as_secs_f64();
    assert!(rate >= 1000.0, "{rate:.0} samples/s");
}

#[test]
fn dump_round_trip() {
    let (train, _) = generate_dataset(&small_spec(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.synth");
    write_split(&path, 4, &train).unwrap();
    let back = read_split(&path).unwrap();
    assert_eq!((back.num_classes, back.height, back.width), (4, 16, 16));
    for (i, s) in train.iter().enumerate() {
        assert_eq!(back.labels[i], s.labels);
        let restored = back.image_tensor(i).unwrap();
        for (a, b) in restored.data().iter().zip(s.image.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
    let mut bytes = encode_split(4, &train).unwrap();
    bytes.truncate(bytes.len() - 1);
    assert!(decode_split(&bytes).is_err());
}

#[test]
fn perfect_prediction_scores_one() {
    let (_, val) = generate_dataset(&small_spec(8)).unwrap();
    let refs: Vec<_> = val.iter().collect();
    let (_, labels) = stack_batch(&refs).unwrap();
    let mut cm = ConfusionMatrix::new(4);
    cm.update(&labels, &labels).unwrap();
    assert_eq!(cm.pixel_accuracy().unwrap(), 1.0);
    let (per_class, miou) = cm.miou().unwrap();
    assert!(per_class.iter().flatten().all(|&v| v == 1.0));
    assert_eq!(miou, 1.0);
}

proptest! {
    #[test]
    fn miou_is_a_mean_of_unit_interval_values(
        counts in proptest::collection::vec(0u64..50, 9),
    ) {
        let rows: Vec<Vec<u64>> = counts.chunks(3).map(<[u64]>::to_vec).collect();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        match cm.miou() {
            Ok((per_class, miou)) => {
                let present: Vec<f64> = per_class.iter().flatten().copied().collect();
                prop_assert!(present.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!((miou - present.iter().sum::<f64>() / present.len() as f64).abs() < 1e-15);
            }
            Err(_) => prop_assert_eq!(cm.total(), 0),
        }
    }

    #[test]
    fn argmax_picks_the_largest_logit(winner in 0usize..4, hw in 1usize..6) {
        let mut data = vec![0.0; 4 * hw];
        for p in 0..hw {
            data[winner * hw + p] = 1.0;
        }
        let logits = gdd_core::Tensor::new(data, &[1, 4, 1, hw]).unwrap();
        prop_assert_eq!(argmax_classes(&logits).unwrap(), vec![winner as u8; hw]);
    }
}
