use super::*;
use crate::error::Error;
use crate::rng::SeededRng;
use crate::tensor::{ParameterSet, Tensor};

fn rand_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn lstm_params(d_in: usize, h: usize, seed: u64) -> LstmParams {
    let mut p = ParameterSet::new();
    LstmParams::init(&mut p, "l", d_in, h, &mut SeededRng::new(seed)).unwrap();
    LstmParams::load(&p, "l").unwrap()
}

fn rows(t: &Tensor, width: usize) -> Vec<Vec<f64>> {
    t.data().chunks(width).map(<[f64]>::to_vec).collect()
}

#[test]
fn lstm_cell_zero_case() {
    let zeros = |s: &[usize]| Tensor::param(s, vec![0.0; s.iter().product()]).unwrap();
    let p = LstmParams { w: zeros(&[3, 8]), u: zeros(&[2, 8]), b: zeros(&[8]) };
    let (h, c) = lstm_cell(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 2]), &p).unwrap();
    assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
}

#[test]
fn lstm_forget_bias_is_one() {
    let p = lstm_params(3, 4, 1);
    assert_eq!(&p.b.data()[4..8], &[1.0; 4]);
    assert!(p.b.data()[..4].iter().chain(&p.b.data()[8..]).all(|&v| v == 0.0));
}

#[test]
fn lstm_hidden_state_is_bounded() {
    let mut rng = SeededRng::new(2);
    let p = lstm_params(3, 5, 3);
    let xs = rand_tensor(&[4, 20, 3], &mut rng).scale(30.0);
    let y = lstm_forward(&xs, &p, true).unwrap();
    assert!(y.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn lstm_forward_reductions() {
    let mut rng = SeededRng::new(4);
    let p = lstm_params(3, 4, 5);
    let x1 = rand_tensor(&[2, 1, 3], &mut rng);
    let seq = lstm_forward(&x1, &p, true).unwrap();
    let zero = Tensor::zeros(&[2, 4]);
    let (h, _) = lstm_cell(&x1.reshape(&[2, 3]).unwrap(), &zero, &zero, &p).unwrap();
    assert_eq!(seq.data(), h.data());

    let xs = rand_tensor(&[2, 6, 3], &mut rng);
    let all = lstm_forward(&xs, &p, true).unwrap();
    let last = lstm_forward(&xs, &p, false).unwrap();
    assert_eq!(all.time_step(5).unwrap().data(), last.data());
    assert!(matches!(lstm_forward(&Tensor::zeros(&[1, 0, 3]), &p, true), Err(Error::Contract(_))));
}

#[test]
fn lstm_prefix_property() {
    let mut rng = SeededRng::new(6);
    let p = lstm_params(3, 4, 7);
    let xs = rand_tensor(&[1, 8, 3], &mut rng);
    let base = lstm_forward(&xs, &p, true).unwrap();
    for t in 0..7 {
        let mut data = xs.data().to_vec();
        for v in &mut data[(t + 1) * 3..] {
            *v += rng.uniform_range(-2.0, 2.0);
        }
        let out = lstm_forward(&Tensor::new(&[1, 8, 3], data).unwrap(), &p, true).unwrap();
        assert_eq!(&out.data()[..(t + 1) * 4], &base.data()[..(t + 1) * 4]);
    }
}

#[test]
fn bilstm_backward_half_is_reversed_forward() {
    let mut rng = SeededRng::new(8);
    let (fwd, bwd) = (lstm_params(3, 2, 9), lstm_params(3, 2, 10));
    let xs = rand_tensor(&[1, 5, 3], &mut rng);
    let y = bilstm_forward(&xs, &fwd, &bwd).unwrap();
    assert_eq!(y.shape(), &[1, 5, 4]);

    let reversed: Vec<f64> = rows(&xs, 3).into_iter().rev().flatten().collect();
    let r = lstm_forward(&Tensor::new(&[1, 5, 3], reversed).unwrap(), &bwd, true).unwrap();
    let r_rows: Vec<Vec<f64>> = rows(&r, 2).into_iter().rev().collect();
    let f = lstm_forward(&xs, &fwd, true).unwrap();
    for (t, row) in rows(&y, 4).iter().enumerate() {
        assert_eq!(&row[..2], &f.data()[t * 2..t * 2 + 2]);
        assert_eq!(&row[2..], r_rows[t].as_slice());
    }
}

fn attention_params(d_q: usize, d_h: usize, seed: u64) -> AttentionParams {
    let mut p = ParameterSet::new();
    AttentionParams::init(&mut p, "a", d_q, d_h, d_h, &mut SeededRng::new(seed)).unwrap();
    AttentionParams::load(&p, "a").unwrap()
}

#[test]
fn additive_attention_singleton_and_mean() {
    let mut rng = SeededRng::new(11);
    let p = attention_params(2, 3, 12);
    let h1 = rand_tensor(&[1, 1, 3], &mut rng);
    let tr = additive_attention(&h1, &rand_tensor(&[1, 2], &mut rng), &p).unwrap();
    assert_eq!(tr.weights.data(), &[1.0]);
    assert_eq!(tr.context.data(), h1.data());

    let row = [0.3, -0.7, 0.2];
    let same = Tensor::new(&[1, 4, 3], row.repeat(4)).unwrap();
    let tr = additive_attention(&same, &rand_tensor(&[1, 2], &mut rng), &p).unwrap();
    for w in tr.weights.data() {
        assert_eq!(*w, 0.25);
    }
    for (c, r) in tr.context.data().iter().zip(row) {
        assert!((c - r).abs() < 1e-15);
    }
}

#[test]
fn attention_weights_and_convexity() {
    let mut rng = SeededRng::new(13);
    let p = attention_params(3, 4, 14);
    for _ in 0..20 {
        let hs = rand_tensor(&[2, 6, 4], &mut rng);
        let tr = additive_attention(&hs, &rand_tensor(&[2, 3], &mut rng), &p).unwrap();
        for b in 0..2 {
            let w = &tr.weights.data()[b * 6..(b + 1) * 6];
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&a| a >= 0.0));
            let scores = &tr.scores.data()[b * 6..(b + 1) * 6];
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for (a, s) in w.iter().zip(scores) {
                assert!((a - (s - m).exp() / z).abs() < 1e-12);
            }
            for d in 0..4 {
                let col: Vec<f64> = (0..6).map(|t| hs.data()[(b * 6 + t) * 4 + d]).collect();
                let c = tr.context.data()[b * 4 + d];
                let expect: f64 = (0..6).map(|t| w[t] * col[t]).sum();
                assert!((c - expect).abs() < 1e-12);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
            }
        }
    }
    assert!(matches!(
        additive_attention(&Tensor::zeros(&[1, 0, 4]), &Tensor::zeros(&[1, 3]), &p),
        Err(Error::Contract(_))
    ));
}

#[test]
fn attention_layer_identity_and_hull() {
    let mut rng = SeededRng::new(15);
    let p = attention_params(4, 4, 16);
    let h1 = rand_tensor(&[2, 1, 4], &mut rng);
    assert_eq!(attention_layer(&h1, &p).unwrap().data(), h1.data());
    let hs = rand_tensor(&[1, 5, 4], &mut rng);
    let y = attention_layer(&hs, &p).unwrap();
    assert_eq!(y.shape(), &[1, 5, 4]);
    for d in 0..4 {
        let col: Vec<f64> = (0..5).map(|t| hs.data()[t * 4 + d]).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for t in 0..5 {
            let v = y.data()[t * 4 + d];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}

#[test]
fn scaled_dot_attention_examples() {
    let mut rng = SeededRng::new(17);
    let (q, k, v) = (rand_tensor(&[1, 1, 3], &mut rng), rand_tensor(&[1, 1, 3], &mut rng), rand_tensor(&[1, 1, 3], &mut rng));
    assert_eq!(scaled_dot_attention(&q, &k, &v, false).unwrap().data(), v.data());

    let (q, k, v) = (rand_tensor(&[1, 4, 3], &mut rng), rand_tensor(&[1, 4, 3], &mut rng), rand_tensor(&[1, 4, 3], &mut rng));
    let out = scaled_dot_attention(&q, &k, &v, true).unwrap();
    assert_eq!(&out.data()[..3], &v.data()[..3]);

    let mut v2 = v.data().to_vec();
    let mut k2 = k.data().to_vec();
    for i in 9..12 {
        v2[i] += 5.0;
        k2[i] -= 3.0;
    }
    let out2 = scaled_dot_attention(&q, &Tensor::new(&[1, 4, 3], k2).unwrap(), &Tensor::new(&[1, 4, 3], v2).unwrap(), true).unwrap();
    assert_eq!(&out2.data()[..9], &out.data()[..9]);

    assert!(matches!(
        scaled_dot_attention(&Tensor::zeros(&[1, 2, 0]), &Tensor::zeros(&[1, 2, 0]), &Tensor::zeros(&[1, 2, 0]), false),
        Err(Error::Contract(_))
    ));
}

#[test]
fn multi_head_attention_single_head_reduces() {
    let mut rng = SeededRng::new(18);
    let mut ps = ParameterSet::new();
    MhaParams::init(&mut ps, "m", 4, &mut rng).unwrap();
    let p = MhaParams::load(&ps, "m").unwrap();
    let x = rand_tensor(&[2, 3, 4], &mut rng);
    let y = multi_head_attention(&x, 1, &p, false).unwrap();
    let manual = p
        .o
        .apply(&scaled_dot_attention(&p.q.apply(&x).unwrap(), &p.k.apply(&x).unwrap(), &p.v.apply(&x).unwrap(), false).unwrap())
        .unwrap();
    assert_eq!(y.data(), manual.data());
    assert_eq!(multi_head_attention(&x, 2, &p, true).unwrap().shape(), &[2, 3, 4]);
    assert!(matches!(multi_head_attention(&x, 3, &p, false), Err(Error::Parameter(_))));
}

fn small_spec(kind: ModelKind) -> ModelSpec {
    let mut s = ModelSpec::defaults(kind);
    s.seq_len = 6;
    s.vocab_size = 12;
    s.embed_dim = 8;
    s.hidden = 8;
    s.feature_dim = 128;
    if kind.is_transformer() {
        s.n_layers = 2;
        s.n_heads = 2;
    }
    s
}

#[test]
fn piano_transformer_is_causal() {
    let spec = small_spec(ModelKind::PianoTransformer);
    let model = Model::build(spec.clone(), &mut SeededRng::new(19)).unwrap();
    let mut rng = SeededRng::new(20);
    let ids: Vec<usize> = (0..6).map(|_| rng.below(12)).collect();
    let base = piano_transformer_logits(&spec, &model.params, &[ids.clone()], false, &mut rng).unwrap();
    assert_eq!(base.shape(), &[1, 6, 12]);
    for _ in 0..30 {
        let t = rng.below(5);
        let mut changed = ids.clone();
        changed[t + 1] = (changed[t + 1] + 1 + rng.below(11)) % 12;
        let out = piano_transformer_logits(&spec, &model.params, &[changed], false, &mut rng).unwrap();
        assert_eq!(&out.data()[..(t + 1) * 12], &base.data()[..(t + 1) * 12]);
        assert_ne!(&out.data()[(t + 1) * 12..(t + 2) * 12], &base.data()[(t + 1) * 12..(t + 2) * 12]);
    }
    let too_long = vec![0; 7];
    assert!(matches!(
        piano_transformer_logits(&spec, &model.params, &[too_long], false, &mut rng),
        Err(Error::Contract(_))
    ));
}

#[test]
fn audio_models_output_128_and_are_deterministic() {
    for kind in [ModelKind::TablaBiLstm, ModelKind::TablaTransformer] {
        let spec = small_spec(kind);
        let model = Model::build(spec, &mut SeededRng::new(21)).unwrap();
        let x = rand_tensor(&[3, 6, 128], &mut SeededRng::new(22));
        let input = ModelInput::Frames(x);
        let a = model.forward(&input, false, &mut SeededRng::new(1)).unwrap();
        let b = model.forward(&input, false, &mut SeededRng::new(2)).unwrap();
        assert_eq!(a.shape(), &[3, 128]);
        assert_eq!(a.data(), b.data());
        let wrong = ModelInput::Frames(Tensor::zeros(&[1, 6, 64]));
        assert!(matches!(model.forward(&wrong, false, &mut SeededRng::new(0)), Err(Error::Dimension(_))));
    }
}

#[test]
fn every_symbolic_model_builds_and_runs() {
    for kind in ModelKind::ALL.into_iter().filter(|k| k.is_symbolic()) {
        let model = Model::build(small_spec(kind), &mut SeededRng::new(23)).unwrap();
        let input = ModelInput::Tokens(vec![vec![1, 2, 3, 4, 5, 6], vec![6, 5, 4, 3, 2, 1]]);
        let y = model.forward(&input, true, &mut SeededRng::new(3)).unwrap();
        assert_eq!(y.shape(), &[2, 12], "{kind}");
        let bad = ModelInput::Tokens(vec![vec![1, 2, 12]]);
        assert!(model.forward(&bad, false, &mut SeededRng::new(0)).is_err());
    }
}

#[test]
fn build_is_deterministic_in_the_seed() {
    for kind in ModelKind::ALL {
        let a = Model::build(small_spec(kind), &mut SeededRng::new(5)).unwrap();
        let b = Model::build(small_spec(kind), &mut SeededRng::new(5)).unwrap();
        let c = Model::build(small_spec(kind), &mut SeededRng::new(6)).unwrap();
        let flat = |m: &Model| -> Vec<u64> { m.params.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect() };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
        assert_eq!(a.parameter_count(), b.parameter_count());
    }
}

#[test]
fn full_scale_transformers_instantiate() {
    let mut piano = ModelSpec::defaults(ModelKind::PianoTransformer);
    piano.vocab_size = 300;
    let m = Model::build(piano, &mut SeededRng::new(0)).unwrap();
    assert_eq!(m.params.get("pos").unwrap().shape(), &[128, 256]);
    assert_eq!(m.params.get("block3.ff1.w").unwrap().shape(), &[256, 256]);
    assert!(m.params.get("block4.ff1.w").is_err());

    let tabla = Model::build(ModelSpec::defaults(ModelKind::TablaTransformer), &mut SeededRng::new(0)).unwrap();
    assert_eq!(tabla.params.get("block5.mha.q.w").unwrap().shape(), &[128, 128]);
    assert_eq!(tabla.params.get("out.w").unwrap().shape(), &[128, 128]);
}

#[test]
fn mismatched_input_kind_is_a_spec_error() {
    let model = Model::build(small_spec(ModelKind::Lstm), &mut SeededRng::new(0)).unwrap();
    let frames = ModelInput::Frames(Tensor::zeros(&[1, 2, 128]));
    assert!(matches!(model.forward(&frames, false, &mut SeededRng::new(0)), Err(Error::Spec(_))));
}

#[test]
fn gradient_suite_passes_and_names_are_unique() {
    let suite = gradcheck_suite().unwrap();
    for r in &suite {
        assert!(r.report.passed(), "{}:\n{}", r.name, r.report);
        let mut names: Vec<&str> = r.report.entries.iter().map(|e| e.name.as_str()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
    assert!(suite.iter().any(|r| r.name == "model/tabla_transformer"));
}

#[test]
fn gradient_suite_catches_a_wrong_tanh_derivative() {
    crate::tensor::set_tanh_derivative_fault(true);
    let suite = gradcheck_suite();
    crate::tensor::set_tanh_derivative_fault(false);
    let suite = suite.unwrap();
    let failing: Vec<&str> = suite.iter().filter(|r| !r.report.passed()).map(|r| r.name.as_str()).collect();
    assert!(failing.contains(&"lstm_cell"));
    assert!(failing.contains(&"model/tabla_bilstm"));
    assert!(!failing.contains(&"layer_norm"));
}
