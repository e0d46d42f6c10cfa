use super::*;
use crate::autodiff::sigmoid;
use crate::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

fn tiny(arch: Architecture) -> ModelConfig {
    let mut c = ModelConfig::new(arch, 8);
    match arch {
        Architecture::Mlp => {
            c.input_dim = 6;
            c.hidden = vec![5, 4];
        }
        Architecture::Cnn => {
            c.input_dim = 12;
            c.channels = 2;
        }
        Architecture::Transformer => {
            c.input_dim = 8;
            c.tokens = 2;
            c.embed_dim = 4;
        }
    }
    c
}

fn random_batch(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut r = seeded(seed);
    let data = (0..rows * cols).map(|_| r.random_range(-2.0..2.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Central-difference gradient of the mean BCE with respect to every
/// parameter entry, compared against reverse mode.
fn max_param_rel_error(config: &ModelConfig, seed: u64) -> f64 {
    let params = init_model(config, seed).unwrap();
    let x = random_batch(seed + 1, 5, config.input_dim);
    let labels: Vec<f64> = (0..5).map(|i| ((i + seed as usize) % 2) as f64).collect();
    let (_, grads) = loss_and_grad(&params, config, &x, &labels).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, t) in params.iter() {
        for i in 0..t.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let numeric = (loss(&plus, config, &x, &labels).unwrap()
                - loss(&minus, config, &x, &labels).unwrap())
                / (2.0 * h);
            let analytic = grads.get(name).unwrap().data()[i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-6 {
                worst = worst.max((analytic - numeric).abs() / scale);
            }
        }
    }
    worst
}

#[test]
fn init_is_deterministic_and_bounded() {
    let cfg = ModelConfig::new(Architecture::Mlp, 695);
    let a = init_model(&cfg, 7).unwrap();
    let b = init_model(&cfg, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, init_model(&cfg, 8).unwrap());
    assert_eq!(a.get("hidden.0.weight").unwrap().shape(), &[128, 695]);
    for (name, shape, fan_in) in cfg.param_layout().unwrap() {
        let t = a.get(&name).unwrap();
        assert_eq!(t.shape(), shape.as_slice());
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        } else {
            assert!(t.max_abs() <= 1.0 / (fan_in as f64).sqrt());
        }
    }
}

#[test]
fn mlp_hand_computed_example() {
    let mut cfg = ModelConfig::new(Architecture::Mlp, 2);
    cfg.hidden = vec![2];
    let mut p = ParamSet::new();
    p.insert("hidden.0.weight", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    p.insert("hidden.0.bias", Tensor::zeros(&[2]));
    p.insert("output.weight", Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let x = Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap();
    let y = predict(&p, &cfg, &x).unwrap();
    assert_eq!(y.shape(), &[1]);
    assert!((y.data()[0] - sigmoid(0.99)).abs() < 1e-15);
    assert!((y.data()[0] - 0.72908).abs() < 1e-5);
}

#[test]
fn zero_weights_give_one_half() {
    for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
        let cfg = tiny(arch);
        let mut p = init_model(&cfg, 1).unwrap();
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let y = predict(&p, &cfg, &random_batch(2, 3, cfg.input_dim)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5), "{arch}");
    }
}

#[test]
fn cnn_zero_conv_weights_give_one_half() {
    let cfg = tiny(Architecture::Cnn);
    let mut p = init_model(&cfg, 3).unwrap();
    for i in 0..cfg.conv_layers {
        let w = p.get_mut(&format!("conv.{i}.weight")).unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let y = predict(&p, &cfg, &random_batch(4, 2, cfg.input_dim)).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
}

#[test]
fn batch_outputs_have_batch_shape_and_unit_range() {
    for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
        let cfg = tiny(arch);
        let p = init_model(&cfg, 5).unwrap();
        let y = predict(&p, &cfg, &random_batch(6, 4, cfg.input_dim)).unwrap();
        assert_eq!(y.shape(), &[4]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn cnn_length_arithmetic_for_695_features() {
    let cfg = ModelConfig::new(Architecture::Cnn, 695);
    assert_eq!(cfg.cnn_lengths().unwrap(), vec![695, 347, 347, 173]);
    let layout = cfg.param_layout().unwrap();
    let out = layout.iter().find(|l| l.0 == "output.weight").unwrap();
    assert_eq!(out.1, vec![1, cfg.channels * 173]);
}

#[test]
fn cnn_rejects_too_short_input() {
    let mut cfg = ModelConfig::new(Architecture::Cnn, 3);
    assert!(cfg.validate().is_err());
    cfg.input_dim = 4;
    assert!(cfg.validate().is_ok());
}

#[test]
fn width_mismatch_is_a_dimension_error() {
    for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
        let cfg = tiny(arch);
        let p = init_model(&cfg, 1).unwrap();
        let err = predict(&p, &cfg, &random_batch(1, 2, cfg.input_dim + 1)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{arch}: {err}");
    }
}

#[test]
fn single_token_attention_returns_values() {
    let mut cfg = ModelConfig::new(Architecture::Transformer, 3);
    cfg.tokens = 1;
    cfg.embed_dim = 2;
    let p = init_model(&cfg, 11).unwrap();
    let x = Tensor::new(vec![1, 3], vec![0.3, -1.2, 0.8]).unwrap();
    let y = predict(&p, &cfg, &x).unwrap().data()[0];

    let tok = p.get("token.weight").unwrap();
    let wv = p.get("attention.0.value").unwrap();
    let wo = p.get("output.weight").unwrap();
    let emb: Vec<f64> = (0..2)
        .map(|r| (0..3).map(|c| tok.data()[r * 3 + c] * x.data()[c]).sum())
        .collect();
    let v: Vec<f64> = (0..2)
        .map(|r| (0..2).map(|c| wv.data()[r * 2 + c] * emb[c]).sum())
        .collect();
    let logit: f64 = (0..2).map(|c| wo.data()[c] * v[c]).sum();
    assert!((y - sigmoid(logit)).abs() < 1e-14);
}

#[test]
fn identical_tokens_attend_uniformly() {
    let mut cfg = ModelConfig::new(Architecture::Transformer, 4);
    cfg.tokens = 2;
    cfg.embed_dim = 3;
    let p = init_model(&cfg, 13).unwrap();
    let x = Tensor::new(vec![1, 4], vec![0.7, -0.4, 0.7, -0.4]).unwrap();

    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &p);
    let xv = tape.constant(x.clone());
    forward_transformer(&mut tape, &cfg, &bound, xv).unwrap();
    // The softmax node is the only [1×2×2] tensor whose rows sum to one.
    let mut found = false;
    for id in 0..tape.len() {
        let v = tape.value(Var::from_raw(id));
        if v.shape() == [1, 2, 2] && v.data().iter().all(|&w| (w - 0.5).abs() < 1e-15) {
            found = true;
        }
    }
    assert!(found, "no uniform attention matrix recorded");

    // Same result as attending over a single copy of the token.
    let mut single = cfg.clone();
    single.input_dim = 2;
    single.tokens = 1;
    let y2 = predict(&p, &cfg, &x).unwrap().data()[0];
    let y1 = predict(&p, &single, &Tensor::new(vec![1, 2], vec![0.7, -0.4]).unwrap())
        .unwrap()
        .data()[0];
    assert!((y1 - y2).abs() < 1e-15);
}

#[test]
fn gradients_match_finite_differences_for_every_architecture() {
    for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
        let cfg = tiny(arch);
        for seed in 0..20 {
            let err = max_param_rel_error(&cfg, seed);
            assert!(err < 1e-4, "{arch} seed {seed}: {err}");
        }
    }
}

#[test]
fn predict_dispatch_matches_direct_forward() {
    let cfg = tiny(Architecture::Mlp);
    let p = init_model(&cfg, 2).unwrap();
    let x = random_batch(3, 3, cfg.input_dim);
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, &p);
    let xv = tape.constant(x.clone());
    let y = forward_mlp(&mut tape, &cfg, &bound, xv).unwrap();
    assert_eq!(tape.value(y), &predict(&p, &cfg, &x).unwrap());
}

#[test]
fn mismatched_params_are_a_contract_error() {
    let mlp = tiny(Architecture::Mlp);
    let cnn = tiny(Architecture::Cnn);
    let p = init_model(&mlp, 1).unwrap();
    let err = predict(&p, &cnn, &random_batch(1, 1, cnn.input_dim)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn updating_a_copy_leaves_original_untouched() {
    let cfg = tiny(Architecture::Transformer);
    let p = init_model(&cfg, 4).unwrap();
    let before = p.flatten();
    let mut q = p.clone();
    for (_, t) in q.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 1.0);
    }
    assert_eq!(
        p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        before.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
        let cfg = tiny(arch);
        let p = init_model(&cfg, 99).unwrap();
        let path = dir.path().join(format!("{arch}.json"));
        save_checkpoint(&path, &cfg, &p).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, cfg);
        let bits = |s: &ParamSet| s.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&p));
    }
}

#[test]
fn checkpoint_rejects_tampered_files() {
    let cfg = tiny(Architecture::Mlp);
    let p = init_model(&cfg, 1).unwrap();
    let json = Checkpoint::new(cfg.clone(), p).unwrap().to_json().unwrap();
    assert!(Checkpoint::from_json(&json.replace("\"version\": 1", "\"version\": 9")).is_err());
    let wrong_shape = json.replacen("\"shape\": [\n        5,", "\"shape\": [\n        4,", 1);
    assert!(Checkpoint::from_json(&wrong_shape).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn outputs_stay_in_open_unit_interval(scale in 1e-3f64..1e6, seed in 0u64..1000) {
        for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
            let cfg = tiny(arch);
            let p = init_model(&cfg, seed).unwrap();
            let mut x = random_batch(seed, 3, cfg.input_dim);
            x.data_mut().iter_mut().for_each(|v| *v *= scale);
            let y = predict(&p, &cfg, &x).unwrap();
            prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
            prop_assert_eq!(&y, &predict(&p, &cfg, &x).unwrap());
        }
    }
}
