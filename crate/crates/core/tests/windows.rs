use gaittrack::gaitsim::{generate_corpus, ParamRanges};
use gaittrack::imu::{ImuSample, StepSegment};
use gaittrack::pipeline::{
    augment_step, build_dataset, differentiate, integrate, load_dataset, load_steps, random_starts, save_dataset,
    save_steps, sliding_starts, split_steps, subject_folds, tiled_starts, AugmentMode, AugmentSpec, SplitMode,
    SplitSpec, WindowTag,
};
use gaittrack::tensor::Tensor;
use gaittrack::trajectory::reconstruct;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic_step(len: usize, index: usize) -> StepSegment {
    StepSegment {
        subject_id: format!("S{:02}", index % 4 + 1),
        step_index: index,
        imu_offset: 0,
        imu: (0..len)
            .map(|k| ImuSample {
                t: k as f64 / 500.0,
                accel: [k as f64 * 0.01, 0.5, 9.8],
                gyro: [0.0, (k as f64 * 0.02).sin(), 0.0],
            })
            .collect(),
        gt: (0..len / 5).map(|j| [j as f64 * 0.7, (j as f64 * 0.1).sin(), 0.2]).collect(),
    }
}

// Hand-enumerated start lists: stride 140, plus a tail window on the last
// multiple of 5 whenever the strided windows leave samples uncovered.
#[test]
fn sliding_starts_match_hand_enumeration() {
    let spec = AugmentSpec::default();
    let table: &[(usize, &[usize])] = &[
        (150, &[0]),
        (155, &[0, 5]),
        (290, &[0, 140]),
        (295, &[0, 140, 145]),
        (400, &[0, 140, 250]),
        (430, &[0, 140, 280]),
        (
            2000,
            &[0, 140, 280, 420, 560, 700, 840, 980, 1120, 1260, 1400, 1540, 1680, 1820, 1850],
        ),
    ];
    for &(len, want) in table {
        assert_eq!(sliding_starts(len, &spec), want, "length {len}");
    }
    assert!(sliding_starts(145, &spec).is_empty());
}

#[test]
fn tiled_starts_drop_the_remainder() {
    let spec = AugmentSpec::default();
    assert_eq!(tiled_starts(150, &spec), vec![0]);
    assert_eq!(tiled_starts(299, &spec), vec![0]);
    assert_eq!(tiled_starts(450, &spec), vec![0, 150, 300]);
}

// Pearson chi-square over the 51 admissible starts of a 400-sample step.
// 86.66 is the 0.999 quantile of chi-square with 50 degrees of freedom.
#[test]
fn random_starts_are_uniform_over_multiples_of_five() {
    let spec = AugmentSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = random_starts(400, &spec, 100_000, &mut rng);
    let mut counts = [0usize; 51];
    for s in draws {
        assert_eq!(s % 5, 0);
        assert!(s <= 250);
        counts[s / 5] += 1;
    }
    let expected = 100_000.0 / 51.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 86.66, "chi-square {chi2}");
}

#[test]
fn combined_is_sliding_plus_five_random() {
    let spec = AugmentSpec::default();
    for (i, len) in [150, 290, 400, 745, 1200].into_iter().enumerate() {
        let step = synthetic_step(len, i);
        let combined = augment_step(&step, &spec, 7).unwrap();
        let sliding = augment_step(&step, &AugmentSpec::with_mode(AugmentMode::Sliding), 7).unwrap();
        let random = augment_step(&step, &AugmentSpec::with_mode(AugmentMode::Random), 7).unwrap();
        assert_eq!(random.len(), 5);
        assert_eq!(combined.len(), sliding.len() + random.len());
        assert_eq!(sliding.len(), sliding_starts(len, &spec).len());
        assert_eq!(combined.iter().filter(|w| w.provenance.tag == WindowTag::Random).count(), 5);
        assert_eq!(combined[sliding.len()..], random[..]);
    }
}

#[test]
fn every_window_has_network_shapes() {
    let corpus = generate_corpus(3, 6, &ParamRanges::default(), 2).unwrap();
    let steps: Vec<_> = corpus.into_iter().map(|s| s.segment).collect();
    for mode in [AugmentMode::None, AugmentMode::Sliding, AugmentMode::Random, AugmentMode::Combined] {
        let data = build_dataset(&steps, &AugmentSpec::with_mode(mode), &SplitSpec { mode: SplitMode::by_step(), seed: 1 }).unwrap();
        for w in data.train.windows.iter().chain(&data.val.windows).chain(&data.test.windows) {
            assert_eq!(w.x.shape(), &[6, 149]);
            assert_eq!(w.y.shape(), &[3, 29]);
        }
    }
}

#[test]
fn differential_window_reconstructs_its_ground_truth() {
    let step = synthetic_step(400, 0);
    let spec = AugmentSpec::default();
    for w in augment_step(&step, &spec, 3).unwrap() {
        let t = reconstruct(&[w.y.clone()], w.provenance.origin).unwrap();
        let g0 = w.provenance.imu_start / 5;
        for (k, p) in t.points.iter().enumerate() {
            for a in 0..3 {
                assert!((p[a] - step.gt[g0 + k][a]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn validation_and_test_use_tiled_windows_only() {
    let steps: Vec<_> = (0..20).map(|i| synthetic_step(300 + 5 * i, i)).collect();
    let data = build_dataset(&steps, &AugmentSpec::default(), &SplitSpec { mode: SplitMode::by_step(), seed: 4 }).unwrap();
    assert!(data.val.windows.iter().chain(&data.test.windows).all(|w| w.provenance.tag == WindowTag::Tiled));
    assert_eq!(data.report.train.steps, 16);
    assert_eq!(data.report.val.steps, 2);
    assert_eq!(data.report.test.steps, 2);
    let train_keys = data.train.step_keys();
    for k in data.test.step_keys() {
        assert!(!train_keys.contains(&k));
    }
}

// Multipliers recomputed from first principles: windows x 150 over the
// split's raw sample count.
#[test]
fn size_report_multipliers_match_hand_count() {
    let lens = [150, 290, 295, 400, 430, 600, 745, 800, 1000, 2000];
    let steps: Vec<_> = lens.iter().enumerate().map(|(i, &l)| synthetic_step(l, i)).collect();
    let spec = AugmentSpec::default();
    let partition = gaittrack::pipeline::StepPartition {
        train: (0..10).collect(),
        val: vec![],
        test: vec![],
    };
    let data = gaittrack::pipeline::build_from_partition(&steps, &spec, &partition, 5).unwrap();
    let sliding: usize = [1, 2, 3, 3, 3, 5, 6, 6, 8, 15].iter().sum();
    assert_eq!(data.report.train.sliding_windows, sliding);
    assert_eq!(data.report.train.random_windows, 50);
    let raw: usize = lens.iter().sum();
    let want = (sliding + 50) as f64 * 150.0 / raw as f64;
    assert!((data.report.train.multiplier() - want).abs() < 1e-12);
}

#[test]
fn rebuilding_is_bit_reproducible() {
    let corpus = generate_corpus(2, 8, &ParamRanges::default(), 12).unwrap();
    let steps: Vec<_> = corpus.into_iter().map(|s| s.segment).collect();
    let split = SplitSpec { mode: SplitMode::by_step(), seed: 8 };
    let a = build_dataset(&steps, &AugmentSpec::default(), &split).unwrap();
    let b = build_dataset(&steps, &AugmentSpec::default(), &split).unwrap();
    assert_eq!(a, b);
    let c = build_dataset(&steps, &AugmentSpec::default(), &SplitSpec { seed: 9, ..split }).unwrap();
    assert_ne!(a.train.windows, c.train.windows);
}

#[test]
fn folds_are_subject_disjoint_and_cover_everyone() {
    let steps: Vec<_> = (0..60).map(|i| {
        let mut s = synthetic_step(300, i);
        s.subject_id = format!("S{:02}", i % 10 + 1);
        s
    }).collect();
    let subjects: Vec<String> = steps.iter().map(|s| s.subject_id.clone()).collect();
    let folds = subject_folds(&subjects, 6, 3).unwrap();
    let mut all: Vec<String> = folds.iter().flatten().cloned().collect();
    all.sort();
    assert_eq!(all.len(), 10);
    all.dedup();
    assert_eq!(all.len(), 10);
    assert!(folds.iter().all(|f| f.len() == 1 || f.len() == 2));
    for fold in 0..6 {
        let p = split_steps(&steps, &SplitSpec { mode: SplitMode::kfold(6, fold), seed: 3 }).unwrap();
        for &t in &p.test {
            assert!(folds[fold].contains(&steps[t].subject_id));
        }
        for &i in p.train.iter().chain(&p.val) {
            assert!(!folds[fold].contains(&steps[i].subject_id));
        }
        assert_eq!(p.train.len() + p.val.len() + p.test.len(), 60);
    }
    assert!(subject_folds(&subjects, 1, 3).is_err());
    assert!(subject_folds(&subjects, 11, 3).is_err());
}

#[test]
fn stores_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let steps: Vec<_> = (0..12).map(|i| synthetic_step(300 + 5 * i, i)).collect();
    save_steps(&steps, dir.path()).unwrap();
    assert_eq!(load_steps(dir.path()).unwrap(), steps);
    let data = build_dataset(&steps, &AugmentSpec::default(), &SplitSpec { mode: SplitMode::by_step(), seed: 1 }).unwrap();
    save_dataset(&data.train, dir.path(), "train").unwrap();
    assert_eq!(load_dataset(dir.path(), "train").unwrap(), data.train);
}

proptest! {
    #[test]
    fn integrate_inverts_differentiate(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 2..60), 1..4)) {
        let n = rows.iter().map(Vec::len).min().unwrap();
        let c = rows.len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r[..n].iter().copied()).collect();
        let series = Tensor::from_vec(&[c, n], data).unwrap();
        let origin: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let back = integrate(&differentiate(&series).unwrap(), &origin).unwrap();
        prop_assert_eq!(back.shape(), series.shape());
        for (a, b) in back.data().iter().zip(series.data()) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn window_counts_follow_the_length(len5 in 30usize..400) {
        let len = len5 * 5;
        let spec = AugmentSpec::default();
        let starts = sliding_starts(len, &spec);
        prop_assert_eq!(starts[0], 0);
        prop_assert!(starts.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(starts.iter().all(|s| s % 5 == 0 && s + 150 <= len));
        prop_assert!(starts.last().unwrap() + 150 >= len - 4);
        let strided = (len - 150) / 140 + 1;
        prop_assert!(starts.len() == strided || starts.len() == strided + 1);
    }
}
