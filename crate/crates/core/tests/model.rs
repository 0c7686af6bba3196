use gaittrack::gradcheck::{check_layer, check_model, LayerOp};
use gaittrack::model::{Depth, InitScheme, ModelConfig, Regressor, Variant};
use gaittrack::tensor::Tensor;
use gaittrack::{Regressor32, Regressor64, Scale};

fn conv(c_in: usize, c_out: usize) -> usize {
    9 * c_in * c_out + c_out
}

fn dense(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

// Trunk of `widths` with batch norm after every conv, hidden dense layers
// and `heads` 29-wide outputs; the time axis is pooled to `time`.
fn hand_count(widths: &[usize], hidden: &[usize], time: usize, heads: usize) -> usize {
    let mut total = 0;
    let mut c_in = 1;
    for &w in widths {
        total += conv(c_in, w) + 2 * w;
        c_in = w;
    }
    let mut n_in = 6 * time * c_in;
    for &h in hidden {
        total += dense(n_in, h);
        n_in = h;
    }
    total + heads * dense(n_in, 29)
}

#[test]
fn conv9_fused_count_is_within_a_tenth_of_a_percent_of_the_table() {
    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv9);
    let reg = Regressor32::zeros(&cfg).unwrap();
    let report = reg.count_parameters();
    let widths = [64, 64, 128, 128, 256, 256, 512, 512, 1024];
    assert_eq!(report.total(), hand_count(&widths, &[1024, 512], 1, 3));
    assert_eq!(report.total(), 16_271_639);
    let (diff, rel) = report.compare(16_274_711);
    assert_eq!(diff, -3072);
    assert!(rel.abs() < 1e-3);
    assert_eq!(report.rows.len(), 9 * 2 + 2 + 3);
}

#[test]
fn conv5_count_differs_from_the_table() {
    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv5);
    let report = Regressor32::zeros(&cfg).unwrap().count_parameters();
    assert_eq!(report.total(), hand_count(&[64, 128, 256, 512, 1024], &[512], 4, 3));
    let (_, rel) = report.compare(17_069_015);
    assert!(rel > 0.1, "{rel}");
}

#[test]
fn independent_variant_triples_the_trunk() {
    let cfg = ModelConfig::new(Variant::Independent, Depth::Conv9).with_scale(Scale::new(1, 8));
    let widths: Vec<usize> = [64, 64, 128, 128, 256, 256, 512, 512, 1024].iter().map(|w| w / 8).collect();
    let one = hand_count(&widths, &[128, 64], 1, 1);
    assert_eq!(Regressor32::zeros(&cfg).unwrap().count_parameters().total(), 3 * one);
}

#[test]
fn scaled_widths_round_down_but_stay_positive() {
    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv9).with_scale(Scale::new(1, 100));
    assert_eq!(cfg.scaled_channels(), vec![1, 1, 1, 1, 2, 2, 5, 5, 10]);
    assert_eq!(cfg.scaled_dense(), vec![10, 5]);
    assert_eq!(ModelConfig::new(Variant::Fused, Depth::Conv5).time_extent(), 4);
}

#[test]
fn predictions_have_three_heads_of_29() {
    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv9).with_scale(Scale::new(1, 16));
    let reg = Regressor32::build(&cfg, InitScheme::default(), 1).unwrap();
    let x = Tensor::from_fn(&[5, 6, 149], |i| ((i * 37) % 11) as f32 * 0.1);
    for p in reg.predict(&x).unwrap() {
        assert_eq!(p.shape(), &[5, 29]);
        assert!(p.all_finite());
    }
    assert!(reg.predict(&Tensor::zeros(&[5, 6, 148])).is_err());
}

#[test]
fn single_and_double_precision_agree() {
    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv9).with_scale(Scale::new(1, 16));
    let r64 = Regressor64::build(&cfg, InitScheme::Normal { sigma: 0.1 }, 2).unwrap();
    let r32 = match &r64 {
        Regressor::Fused(m) => {
            let mut m32 = Regressor32::zeros(&cfg).unwrap();
            let Regressor::Fused(t) = &mut m32 else { unreachable!() };
            for (d, s) in t.state_mut().into_iter().zip(m.params().into_iter().chain(m.buffers())) {
                *d = s.cast();
            }
            m32
        }
        Regressor::Independent(_) => unreachable!(),
    };
    let x = Tensor::from_fn(&[3, 6, 149], |i| ((i * 13) % 7) as f64 * 0.2 - 0.6);
    let a = r64.predict(&x).unwrap();
    let b = r32.predict(&x.cast()).unwrap();
    for (p, q) in a.iter().zip(&b) {
        let scale = p.data().iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        assert!(p.max_abs_diff(&q.cast()) / scale < 1e-4);
    }
}

#[test]
fn checkpoints_round_trip_for_both_variants() {
    let dir = tempfile::tempdir().unwrap();
    for variant in [Variant::Fused, Variant::Independent] {
        let cfg = ModelConfig::new(variant, Depth::Conv5).with_scale(Scale::new(1, 32));
        let reg = Regressor32::build(&cfg, InitScheme::default(), 9).unwrap();
        let path = dir.path().join(variant.to_string());
        reg.save(&path).unwrap();
        assert_eq!(Regressor32::load(&path).unwrap(), reg);
        let widened = Regressor64::load(&path).unwrap();
        for (a, b) in widened.models().iter().zip(reg.models()) {
            for (p, q) in a.params().into_iter().zip(b.params()) {
                assert_eq!(p, &q.cast::<f64>());
            }
        }
    }
}

#[test]
fn layer_backwards_match_finite_differences() {
    for op in LayerOp::ALL {
        let stats = check_layer(op, 100, 2024);
        assert_eq!(stats.trials, 100);
        assert!(stats.max_rel_error <= 1e-6, "{}: {}", op.name(), stats);
        assert!(stats.skipped * 20 <= stats.checked, "{}: {}", op.name(), stats);
    }
}

#[test]
fn whole_model_gradient_matches_finite_differences() {
    let cfg = ModelConfig::new(Variant::Fused, Depth::Conv9).with_scale(Scale::new(1, 16));
    let stats = check_model(&cfg, 4, 5, 77);
    assert!(stats.checked > 100, "{}", stats);
    assert!(stats.max_rel_error <= 1e-4, "{}", stats);
}
