use super::*;
use crate::models::{predict, Architecture};
use rand_distr::{Distribution, StandardNormal};

fn scalar_set(v: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::vector(vec![v]));
    p
}

fn value(p: &ParamSet) -> f64 {
    p.get("w").unwrap().data()[0]
}

/// Two Gaussian blobs separated along a fixed direction, shifted per task.
fn blobs(name: &str, n: usize, d: usize, shift: f64, seed: u64) -> ExpressionDataset {
    let mut rng = seeded(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        for j in 0..d {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let centre = if j < 2 { 1.5 * sign } else { 0.0 };
            data.push(centre + shift + noise);
        }
        labels.push(y);
    }
    ExpressionDataset::new(
        name,
        (0..d).map(|j| format!("G{j:04}")).collect(),
        (0..n).map(|i| format!("{name}-{i}")).collect(),
        Tensor::new(vec![n, d], data).unwrap(),
        labels,
    )
    .unwrap()
}

fn family(seed: u64) -> (Vec<ExpressionDataset>, ExpressionDataset) {
    let sources = (0..3)
        .map(|i| blobs(&format!("src{i}"), 40, 6, 0.2 * i as f64, seed * 10 + i))
        .collect();
    (sources, blobs("target", 22, 6, 0.1, seed * 10 + 9))
}

fn small_mlp() -> ModelConfig {
    let mut m = ModelConfig::new(Architecture::Mlp, 6);
    m.hidden = vec![8, 4];
    m
}

fn quick(lambda: f64, seed: u64) -> MetaConfig {
    MetaConfig {
        lambda,
        epochs: 3,
        batch_size: 8,
        seed,
        inner_lr: 0.01,
        outer_lr: 0.01,
        ..MetaConfig::default()
    }
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.flatten().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn sgd_single_step_without_momentum() {
    let mut sgd = SgdState::new(&scalar_set(1.0));
    let next = sgd.step(&scalar_set(1.0), &scalar_set(0.5), 0.0004, 0.0).unwrap();
    assert!((value(&next) - 0.9998).abs() < 1e-15);
}

#[test]
fn sgd_zero_gradient_is_a_fixed_point() {
    let p = scalar_set(0.37);
    let mut sgd = SgdState::new(&p);
    let next = sgd.step(&p, &scalar_set(0.0), 0.0004, 0.2).unwrap();
    assert_eq!(bits(&next), bits(&p));
}

#[test]
fn sgd_momentum_accumulates_velocity() {
    let p0 = scalar_set(1.0);
    let mut sgd = SgdState::new(&p0);
    let p1 = sgd.step(&p0, &scalar_set(1.0), 0.0004, 0.2).unwrap();
    let p2 = sgd.step(&p1, &scalar_set(1.0), 0.0004, 0.2).unwrap();
    assert_eq!(value(sgd.velocity()), 1.2);
    assert_eq!(value(&p1) - value(&p2), value(&p1) - (value(&p1) - 0.0004 * 1.2));
    assert!((value(&p1) - value(&p2) - 0.00048).abs() < 1e-15);
}

#[test]
fn adam_first_step_moves_by_learning_rate_against_gradient_sign() {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::vector(vec![0.3, -0.2, 1.0, 0.0]));
    let mut g = ParamSet::new();
    g.insert("w", Tensor::vector(vec![2.5, -0.01, 0.05, 0.0]));
    let mut adam = AdamState::new(&p);
    let before = p.clone();
    adam.step(&mut p, &g, 0.0004).unwrap();
    let expected = [-0.0004, 0.0004, -0.0004, 0.0];
    for (i, want) in expected.iter().enumerate() {
        let delta = p.get("w").unwrap().data()[i] - before.get("w").unwrap().data()[i];
        assert!((delta - want).abs() < 1e-9, "entry {i}: {delta}");
    }
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut p = scalar_set(1.0);
    let mut adam = AdamState::new(&p);
    let err = adam.step(&mut p, &scalar_set(f64::NAN), 0.1).unwrap_err();
    assert!(err.is_numerical());
    assert_eq!(value(&p), 1.0);
}

#[test]
fn meta_loss_endpoints_and_range() {
    assert_eq!(meta_loss(0.7, 0.3, 1.0).unwrap(), 0.7);
    assert_eq!(meta_loss(0.7, 0.3, 0.0).unwrap(), 0.3);
    assert!((meta_loss(0.4, 0.2, 0.5).unwrap() - 0.3).abs() < 1e-15);
    assert!(meta_loss(0.4, 0.2, 1.01).is_err());
    assert!(meta_loss(0.4, 0.2, -0.1).is_err());
}

#[test]
fn lambda_zero_gradient_is_pure_source() {
    let (sources, target) = family(1);
    let model = small_mlp();
    let params = init_model(&model, 3).unwrap();
    let (x, y) = target.batch(&(0..8).collect::<Vec<_>>());
    let (_, gt) = loss_and_grad(&params, &model, &x, &y).unwrap();
    let cfg = quick(0.0, 1);
    let src = source_meta_loss(&params, &model, &sources, &cfg, &mut seeded(5)).unwrap();
    let g = meta_gradient(&gt, &src.grad, 0.0).unwrap();
    assert!(g.max_abs_diff(&src.grad).unwrap() < 1e-12);
}

#[test]
fn inner_adapt_leaves_base_untouched() {
    let (sources, _) = family(2);
    let model = small_mlp();
    let params = init_model(&model, 4).unwrap();
    let before = bits(&params);
    let (x, y) = sources[0].batch(&[0, 1, 2, 3]);
    let mut sgd = SgdState::new(&params);
    let adapted = inner_adapt(&params, &model, &x, &y, 0.1, 0.2, &mut sgd).unwrap();
    assert_eq!(bits(&params), before);
    assert_ne!(bits(&adapted), before);
}

#[test]
fn single_source_loss_is_post_adaptation_loss() {
    let (sources, _) = family(3);
    let model = small_mlp();
    let params = init_model(&model, 6).unwrap();
    let cfg = quick(0.5, 0);
    let src = source_meta_loss(&params, &model, &sources[..1], &cfg, &mut seeded(9)).unwrap();

    let (x, y) = sample_batch(&sources[0], cfg.batch_size, &mut seeded(9)).unwrap();
    let mut sgd = SgdState::new(&params);
    let adapted = inner_adapt(&params, &model, &x, &y, cfg.inner_lr, cfg.inner_momentum, &mut sgd).unwrap();
    let expected = crate::models::loss(&adapted, &model, &x, &y).unwrap();
    assert_eq!(src.loss, expected);
    assert_eq!(src.per_source, vec![expected]);
}

#[test]
fn zero_inner_rate_gives_mean_unadapted_loss() {
    let (sources, _) = family(4);
    let model = small_mlp();
    let params = init_model(&model, 7).unwrap();
    let cfg = MetaConfig {
        inner_lr: 0.0,
        ..quick(0.5, 0)
    };
    let src = source_meta_loss(&params, &model, &sources, &cfg, &mut seeded(2)).unwrap();
    let mut rng = seeded(2);
    let mut total = 0.0;
    for s in &sources {
        let (x, y) = sample_batch(s, cfg.batch_size, &mut rng).unwrap();
        total += crate::models::loss(&params, &model, &x, &y).unwrap();
    }
    assert!((src.loss - total / 3.0).abs() < 1e-15);
}

#[test]
fn empty_source_list_is_a_contract_error() {
    let (_, target) = family(5);
    let model = small_mlp();
    let params = init_model(&model, 0).unwrap();
    let err = source_meta_loss(&params, &model, &[], &quick(0.5, 0), &mut seeded(0)).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
    assert!(matches!(train_meta(&quick(0.5, 0), &model, &[], &target), Err(Error::Contract(_))));
}

#[test]
fn target_loss_definitions() {
    let (_, target) = family(6);
    let model = small_mlp();
    let mut zero = init_model(&model, 1).unwrap();
    for (_, t) in zero.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let (x, y) = target.batch(&[0, 1, 2, 3, 4]);
    assert!((target_loss(&zero, &model, &x, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

    let params = init_model(&model, 1).unwrap();
    let pred = predict(&params, &model, &x).unwrap();
    let mut tape = crate::autodiff::Tape::new();
    let pv = tape.constant(pred);
    let l = tape.bce_loss(pv, &y).unwrap();
    assert_eq!(target_loss(&params, &model, &x, &y).unwrap(), tape.value(l).item().unwrap());
}

#[test]
fn lambda_one_tracks_plain_training_at_every_step() {
    for arch in [Architecture::Mlp, Architecture::Cnn, Architecture::Transformer] {
        let mut model = ModelConfig::new(arch, 6);
        model.hidden = vec![8, 4];
        model.channels = 2;
        model.tokens = 2;
        model.embed_dim = 4;
        let (sources, target) = family(7);
        let cfg = quick(1.0, 11);
        let mut meta_traj = Vec::new();
        let mut plain_traj = Vec::new();
        let mut obs_meta = |_: usize, p: &ModelParams| meta_traj.push(p.clone());
        let (pm, _) = train_meta_observed(&cfg, &model, &sources, &target, Some(&mut obs_meta)).unwrap();
        let mut obs_plain = |_: usize, p: &ModelParams| plain_traj.push(p.clone());
        let (pp, _) = train_plain_observed(&cfg, &model, &target, Some(&mut obs_plain)).unwrap();
        assert_eq!(meta_traj.len(), plain_traj.len());
        for (a, b) in meta_traj.iter().zip(&plain_traj) {
            assert_eq!(a.max_abs_diff(b).unwrap(), 0.0, "{arch}");
        }
        assert_eq!(pm.max_abs_diff(&pp).unwrap(), 0.0);
    }
}

#[test]
fn log_length_is_epochs_times_batches() {
    let (sources, target) = family(8);
    let model = small_mlp();
    let cfg = quick(0.5, 0);
    let (_, log) = train_meta(&cfg, &model, &sources, &target).unwrap();
    assert_eq!(log.len(), cfg.epochs * 22usize.div_ceil(cfg.batch_size));
    assert!(log.is_finite());
    let steps: Vec<usize> = log.records().iter().map(|r| r.step).collect();
    assert_eq!(steps, (0..log.len()).collect::<Vec<_>>());
    assert_eq!(log.records().last().unwrap().epoch, cfg.epochs - 1);
    for r in log.records() {
        let lm = meta_loss(r.loss_target.unwrap(), r.loss_source.unwrap(), cfg.lambda).unwrap();
        assert_eq!(r.loss_meta, Some(lm));
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let (sources, target) = family(9);
    let model = small_mlp();
    let (a, la) = train_meta(&quick(0.3, 4), &model, &sources, &target).unwrap();
    let (b, lb) = train_meta(&quick(0.3, 4), &model, &sources, &target).unwrap();
    let (c, _) = train_meta(&quick(0.3, 5), &model, &sources, &target).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(la, lb);
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn fresh_source_batches_change_the_trajectory() {
    let (sources, target) = family(10);
    let model = small_mlp();
    let cfg = quick(0.3, 4);
    let fresh = MetaConfig {
        fresh_source_batch: true,
        ..cfg.clone()
    };
    let (a, _) = train_meta(&cfg, &model, &sources, &target).unwrap();
    let (b, _) = train_meta(&fresh, &model, &sources, &target).unwrap();
    assert_ne!(bits(&a), bits(&b));
}

#[test]
fn transfer_without_pretraining_is_plain_training() {
    let (sources, target) = family(11);
    let model = small_mlp();
    let cfg = quick(0.5, 3);
    let (pt, log) = train_transfer(&cfg, &model, &sources, &target, 0, cfg.epochs).unwrap();
    let (pp, _) = train_plain(&cfg, &model, &target).unwrap();
    assert_eq!(bits(&pt), bits(&pp));
    assert_eq!(log.finetune_start(), Some(0));
}

#[test]
fn transfer_without_finetuning_ignores_target_labels() {
    let (sources, target) = family(12);
    let flipped = ExpressionDataset::new(
        "target",
        target.gene_ids().to_vec(),
        target.sample_ids().to_vec(),
        target.matrix().clone(),
        target.labels().iter().map(|&y| 1 - y).collect(),
    )
    .unwrap();
    let model = small_mlp();
    let cfg = quick(0.5, 3);
    let (a, la) = train_transfer(&cfg, &model, &sources, &target, 2, 0).unwrap();
    let (b, _) = train_transfer(&cfg, &model, &sources, &flipped, 2, 0).unwrap();
    assert_eq!(bits(&a), bits(&b));
    assert!(la.records().iter().all(|r| r.loss_target.is_none()));
}

#[test]
fn transfer_logs_stage_transition_once() {
    let (sources, target) = family(13);
    let model = small_mlp();
    let cfg = quick(0.5, 3);
    let (_, log) = train_transfer(&cfg, &model, &sources, &target, 2, 3).unwrap();
    let pretrain_steps = 2 * 120usize.div_ceil(cfg.batch_size);
    assert_eq!(log.finetune_start(), Some(pretrain_steps));
    assert_eq!(log.len(), pretrain_steps + 3 * 22usize.div_ceil(cfg.batch_size));
    let first_ft = &log.records()[pretrain_steps];
    assert!(first_ft.loss_target.is_some() && first_ft.loss_source.is_none());
    assert_eq!(first_ft.epoch, 2);
}

#[test]
fn dispatch_matches_direct_calls() {
    let (sources, target) = family(14);
    let model = small_mlp();
    let cfg = MetaConfig {
        pretrain_epochs: 1,
        ..quick(0.3, 8)
    };
    let direct = [
        train_plain(&cfg, &model, &target).unwrap().0,
        train_meta(&cfg, &model, &sources, &target).unwrap().0,
        train_transfer(&cfg, &model, &sources, &target, 1, cfg.epochs).unwrap().0,
    ];
    for (kind, expected) in [TrainerKind::Plain, TrainerKind::Meta, TrainerKind::Transfer]
        .into_iter()
        .zip(&direct)
    {
        let got = train(kind, &cfg, &model, &sources, &target).unwrap().0;
        assert_eq!(bits(&got), bits(expected), "{kind}");
        assert_eq!(kind.to_string().parse::<TrainerKind>().unwrap(), kind);
    }
}

#[test]
fn width_mismatch_is_rejected_before_training() {
    let (sources, target) = family(15);
    let model = ModelConfig::new(Architecture::Mlp, 7);
    assert!(matches!(train_meta(&quick(0.5, 0), &model, &sources, &target), Err(Error::Dimension(_))));
}

#[test]
fn diverging_run_reports_the_failing_step() {
    let (_, target) = family(16);
    let model = small_mlp();
    let cfg = MetaConfig {
        outer_lr: 1e300,
        ..quick(1.0, 0)
    };
    match train_plain(&cfg, &model, &target) {
        Err(Error::Training { step, .. }) => assert!(step > 0),
        other => panic!("expected a training error, got {other:?}"),
    }
}

#[test]
fn csv_export_has_fixed_header_and_blank_missing_losses() {
    let (_, target) = family(17);
    let model = small_mlp();
    let (_, log) = train_plain(&quick(1.0, 0), &model, &target).unwrap();
    let mut buf = Vec::new();
    log.to_csv_writer(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,epoch,loss_target,loss_source,loss_meta"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[..2], ["0", "0"]);
    assert!(first[2].parse::<f64>().is_ok());
    assert_eq!(first[3..], ["", ""]);
    assert_eq!(text.lines().count(), log.len() + 1);

    let mut empty = Vec::new();
    TrainLog::new().to_csv_writer(&mut empty).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap(), "step,epoch,loss_target,loss_source,loss_meta\n");
}

#[test]
fn config_validation() {
    assert!(MetaConfig::default().validate().is_ok());
    let bad = [
        MetaConfig { lambda: 1.5, ..Default::default() },
        MetaConfig { epochs: 0, ..Default::default() },
        MetaConfig { batch_size: 0, ..Default::default() },
        MetaConfig { outer_lr: 0.0, ..Default::default() },
        MetaConfig { inner_momentum: 1.0, ..Default::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

fn separable_target(seed: u64) -> ExpressionDataset {
    use crate::data::NormalizationStats;
    use crate::synth::{generate_task_family, SynthSpec};
    let spec = SynthSpec {
        perturbation: 0.0,
        label_noise: 0.0,
        target_samples: 64,
        seed,
        ..Default::default()
    };
    let t = generate_task_family(&spec).unwrap().target;
    NormalizationStats::fit(&t).unwrap().apply(&t).unwrap()
}

#[test]
fn default_mlp_fits_separable_target_within_two_hundred_steps() {
    for seed in 0..3 {
        let target = separable_target(seed);
        let cfg = MetaConfig {
            epochs: 100,
            seed,
            ..MetaConfig::default()
        };
        let model = ModelConfig::new(Architecture::Mlp, target.n_features());
        let (params, log) = train_plain(&cfg, &model, &target).unwrap();
        assert_eq!(log.len(), 200);
        let (x, y) = target.batch(&(0..target.n_samples()).collect::<Vec<_>>());
        let full = target_loss(&params, &model, &x, &y).unwrap();
        assert!(full < 0.1, "seed {seed}: training loss {full}");
    }
}

#[test]
fn smoothed_epoch_loss_never_increases_on_separable_data() {
    let target = separable_target(7);
    let cfg = MetaConfig {
        epochs: 60,
        seed: 7,
        ..MetaConfig::default()
    };
    let model = ModelConfig::new(Architecture::Mlp, target.n_features());
    let (_, log) = train_plain(&cfg, &model, &target).unwrap();
    let mut per_epoch = vec![(0.0, 0usize); cfg.epochs];
    for r in log.records() {
        per_epoch[r.epoch].0 += r.loss_target.unwrap();
        per_epoch[r.epoch].1 += 1;
    }
    let means: Vec<f64> = per_epoch.iter().map(|(s, n)| s / *n as f64).collect();
    let smoothed: Vec<f64> = means.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for (i, pair) in smoothed.windows(2).enumerate() {
        assert!(pair[1] <= pair[0], "window {i}: {} -> {}", pair[0], pair[1]);
    }
}
