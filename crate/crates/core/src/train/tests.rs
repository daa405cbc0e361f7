use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::data::{generate_dataset, GeneratorConfig, Image, Sample};
use crate::error::Error;
use crate::nn::Gradients;
use crate::nn::{
    Discriminator, DiscriminatorConfig, NetworkParameters, Partition, PartitionSet, UNet,
    UNetConfig,
};
use crate::tensor::Tensor;

fn scalar_params(value: f64) -> NetworkParameters<f64> {
    let mut p = NetworkParameters::new();
    p.insert(
        "w",
        Partition::SegConv,
        Tensor::from_f64(&[1], &[value]).unwrap(),
    )
    .unwrap();
    p.insert(
        "g",
        Partition::SegOther,
        Tensor::from_f64(&[1], &[value]).unwrap(),
    )
    .unwrap();
    p
}

fn scalar_grads(value: f64) -> Gradients<f64> {
    let mut g = Gradients::default();
    g.by_name.insert("w".to_string(), vec![value]);
    g.by_name.insert("g".to_string(), vec![value]);
    g
}

#[test]
fn sgd_descent_and_ascent_on_a_scalar() {
    let mut p = scalar_params(1.0);
    sgd_step(
        &mut p,
        &scalar_grads(2.0),
        PartitionSet::SEG_CONV,
        0.1,
        Direction::Descent,
    )
    .unwrap();
    assert!((p.get("w").unwrap().data()[0] - 0.8).abs() < 1e-15);
    assert_eq!(p.get("g").unwrap().data()[0], 1.0);

    // adversarial form: ϑ + α·λ·g with α·λ = 0.1
    let mut p = scalar_params(1.0);
    sgd_step(
        &mut p,
        &scalar_grads(2.0),
        PartitionSet::SEG_CONV,
        0.1,
        Direction::Ascent,
    )
    .unwrap();
    assert!((p.get("w").unwrap().data()[0] - 1.2).abs() < 1e-15);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = scalar_params(1.0);
    let mut opt = AdamState::new(AdamConfig::default());
    opt.step(
        &mut p,
        &scalar_grads(2.0),
        PartitionSet::SEGMENTER,
        0.1,
        Direction::Descent,
    )
    .unwrap();
    let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
    assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-12);
    assert!((p.get("g").unwrap().data()[0] - expected).abs() < 1e-12);
    assert_eq!(opt.step, 1);
    let m = &opt.moments["w"];
    assert!((m.m[0] - 0.2).abs() < 1e-12);
    assert!((m.v[0] - 0.004).abs() < 1e-12);
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut p = scalar_params(0.5);
    let mut opt = AdamState::new(AdamConfig::default());
    for _ in 0..3 {
        opt.step(
            &mut p,
            &scalar_grads(0.0),
            PartitionSet::SEGMENTER,
            0.1,
            Direction::Descent,
        )
        .unwrap();
    }
    assert_eq!(p.get("w").unwrap().data()[0], 0.5);
}

#[test]
fn missing_gradient_is_an_error() {
    let mut p = scalar_params(1.0);
    let grads = Gradients::default();
    assert!(matches!(
        sgd_step(
            &mut p,
            &grads,
            PartitionSet::SEG_CONV,
            0.1,
            Direction::Descent
        ),
        Err(Error::InvalidArgument(_))
    ));
}

fn staged(phases: [usize; 3], ramp: usize) -> TrainerConfig {
    TrainerConfig {
        phase_epochs: phases,
        alpha_ramp: ramp,
        ..TrainerConfig::desk()
    }
}

#[test]
fn alpha_schedule_examples() {
    let cfg = staged([3, 3, 6], 6);
    let alphas: Vec<f64> = (0..12).map(|e| cfg.alpha(e)).collect();
    let expected = [
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        1.0 / 6.0,
        2.0 / 6.0,
        3.0 / 6.0,
        4.0 / 6.0,
        5.0 / 6.0,
    ];
    assert_eq!(alphas, expected);
    let phases: Vec<u8> = (0..12).map(|e| cfg.phase_of(e)).collect();
    assert_eq!(phases, [1, 1, 1, 2, 2, 2, 3, 3, 3, 3, 3, 3]);

    let short = staged([1, 1, 10], 4);
    assert_eq!(short.alpha(6), 1.0);
    assert_eq!(short.alpha(100), 1.0);
}

proptest! {
    #[test]
    fn alpha_is_monotone_and_bounded(p1 in 1usize..20, p2 in 1usize..20, p3 in 1usize..40, ramp_frac in 0.0f64..1.0, e in 0usize..100) {
        let ramp = 1 + ((p3 - 1) as f64 * ramp_frac) as usize;
        let cfg = staged([p1, p2, p3], ramp);
        let a = cfg.alpha(e);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(cfg.alpha(e + 1) >= a);
        if e < p1 + p2 {
            prop_assert_eq!(a, 0.0);
        }
    }
}

#[test]
fn config_validation() {
    assert!(TrainerConfig::desk().validate().is_ok());
    assert!(TrainerConfig::full_scale().validate().is_ok());
    let bad = [
        TrainerConfig {
            seg_lr_joint: 0.0,
            ..TrainerConfig::desk()
        },
        TrainerConfig {
            disc_lr_pretrain: f64::NAN,
            ..TrainerConfig::desk()
        },
        staged([0, 3, 6], 6),
        staged([3, 3, 6], 7),
        staged([3, 3, 6], 0),
        TrainerConfig {
            seg_batch: 1,
            ..TrainerConfig::desk()
        },
        TrainerConfig {
            adam: AdamConfig {
                beta1: 1.0,
                ..AdamConfig::default()
            },
            ..TrainerConfig::desk()
        },
        TrainerConfig {
            early_stop: EarlyStopConfig {
                window: 0,
                tolerance: 0.0,
            },
            ..TrainerConfig::desk()
        },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
}

fn tiny_unet() -> UNetConfig {
    UNetConfig {
        input_size: 32,
        base_channels: 2,
        depth: 2,
        ..UNetConfig::desk()
    }
}

fn tiny_disc() -> DiscriminatorConfig {
    DiscriminatorConfig {
        conv_widths: vec![4, 4, 8],
        hidden: vec![8, 6],
        ..DiscriminatorConfig::default()
    }
}

fn tiny_data(seed: u64) -> Vec<Sample> {
    generate_dataset(&GeneratorConfig {
        per_domain: 12,
        ..GeneratorConfig::desk(seed)
    })
    .unwrap()
}

fn model(seed: u64) -> Model<f64> {
    let unet = UNet::new(tiny_unet()).unwrap();
    let disc = Discriminator::new(tiny_disc(), unet.config()).unwrap();
    Model {
        seg_params: unet.init_parameters(seed).unwrap(),
        disc_params: disc.init_parameters(seed + 1).unwrap(),
        unet,
        disc: Some(disc),
    }
}

fn domains() -> Vec<String> {
    ["A", "B", "C"].iter().map(|s| s.to_string()).collect()
}

fn domain_batch(data: &[Sample], per: usize, offset: usize) -> DomainBatch<f64> {
    let mut pairs: Vec<(&Sample, Image)> = Vec::new();
    for d in ["A", "B", "C"] {
        pairs.extend(
            data.iter()
                .filter(|s| s.domain_id == d)
                .skip(offset)
                .take(per)
                .map(|s| (s, s.image.clone())),
        );
    }
    DomainBatch::from_samples(&pairs, &domains()).unwrap()
}

fn seg_batch(data: &[Sample], n: usize) -> SegBatch<f64> {
    let pairs: Vec<(&Sample, Image)> = data
        .iter()
        .filter(|s| s.mask.is_some())
        .take(n)
        .map(|s| (s, s.image.clone()))
        .collect();
    SegBatch::from_samples(&pairs, 4).unwrap()
}

#[test]
fn each_step_touches_only_its_partition() {
    let data = tiny_data(1);
    let mut m = model(3);
    let sb = seg_batch(&data, 4);
    let db = domain_batch(&data, 2, 0);
    let fp = |m: &Model<f64>| {
        (
            m.seg_params.fingerprint(PartitionSet::SEG_CONV),
            m.seg_params.fingerprint(PartitionSet::SEG_OTHER),
            m.disc_params.fingerprint(PartitionSet::DISCRIMINATOR),
        )
    };

    let before = fp(&m);
    let seg_running = m.seg_params.running().clone();
    disc_step(
        &mut m,
        &db,
        1e-3,
        &mut AdamState::new(AdamConfig::default()),
    )
    .unwrap();
    let after = fp(&m);
    assert_eq!((before.0, before.1), (after.0, after.1));
    assert_ne!(before.2, after.2);
    assert_eq!(&seg_running, m.seg_params.running());

    let before = after;
    seg_step(
        &mut m,
        &sb,
        1e-3,
        &mut AdamState::new(AdamConfig::default()),
    )
    .unwrap();
    let after = fp(&m);
    assert_eq!(before.2, after.2);
    assert_ne!(before.0, after.0);
    assert_ne!(before.1, after.1);

    let before = after;
    let disc_running = m.disc_params.running().clone();
    adversarial_step(&mut m, &db, 0.5, 1e-3, None).unwrap();
    let after = fp(&m);
    assert_ne!(before.0, after.0);
    assert_eq!((before.1, before.2), (after.1, after.2));
    assert_eq!(&disc_running, m.disc_params.running());
}

#[test]
fn adversarial_step_with_zero_alpha_changes_nothing() {
    let data = tiny_data(2);
    let mut m = model(5);
    let db = domain_batch(&data, 2, 0);
    let before = m.clone();
    let loss = adversarial_step(&mut m, &db, 0.0, 1e-3, None).unwrap();
    assert_eq!(m, before);
    assert!((loss - domain_loss(&m, &db).unwrap().loss).abs() < 1e-12);

    let mut opt = AdamState::new(AdamConfig::default());
    adversarial_step(&mut m, &db, 0.0, 1e-3, Some(&mut opt)).unwrap();
    assert_eq!(m, before);
    assert_eq!(opt.step, 0);
}

#[test]
fn adversarial_alpha_out_of_range_is_rejected() {
    let data = tiny_data(2);
    let mut m = model(5);
    let db = domain_batch(&data, 2, 0);
    for a in [-0.1, 1.5, f64::NAN] {
        assert!(matches!(
            adversarial_step(&mut m, &db, a, 1e-3, None),
            Err(Error::AlphaOutOfRange(_))
        ));
    }
}

#[test]
fn uniform_discriminator_loss_is_ln_domains() {
    let data = tiny_data(3);
    let mut m = model(7);
    m.disc_params
        .get_mut("fc3.weight")
        .unwrap()
        .data_mut()
        .fill(0.0);
    m.disc_params
        .get_mut("fc3.bias")
        .unwrap()
        .data_mut()
        .fill(0.0);
    let out = domain_loss(&m, &domain_batch(&data, 2, 0)).unwrap();
    assert!((out.loss - libm::log(3.0)).abs() < 1e-12);
}

#[test]
fn small_discriminator_steps_descend() {
    let data = tiny_data(4);
    for seed in 0..5 {
        let mut m = model(10 + seed);
        let db = domain_batch(&data, 3, seed as usize);
        let mut opt = AdamState::new(AdamConfig::default());
        let first = disc_step(&mut m, &db, 1e-5, &mut opt).unwrap();
        let second = disc_step(&mut m, &db, 1e-5, &mut opt).unwrap();
        assert!(
            second.loss < first.loss,
            "seed {seed}: {} -> {}",
            first.loss,
            second.loss
        );
    }
}

#[test]
fn small_adversarial_steps_do_not_decrease_domain_loss() {
    let data = tiny_data(5);
    for seed in 0..5 {
        let mut m = model(20 + seed);
        let db = domain_batch(&data, 3, seed as usize);
        let before = domain_loss(&m, &db).unwrap().loss;
        adversarial_step(&mut m, &db, 1.0, 1e-4, None).unwrap();
        let after = domain_loss(&m, &db).unwrap().loss;
        assert!(after - before >= -1e-6, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn seg_batch_rejects_unlabelled_samples() {
    let data = tiny_data(6);
    let unlabelled = data.iter().find(|s| s.mask.is_none()).unwrap();
    let labelled = data.iter().find(|s| s.mask.is_some()).unwrap();
    let pairs = [
        (labelled, labelled.image.clone()),
        (unlabelled, unlabelled.image.clone()),
    ];
    assert!(matches!(
        SegBatch::<f64>::from_samples(&pairs, 4),
        Err(Error::UnlabelledSample { index: 1 })
    ));
}

#[test]
fn domain_batch_rejects_unknown_domain() {
    let data = tiny_data(6);
    let held_out = data.iter().find(|s| s.domain_id == "D").unwrap();
    let pairs = [(held_out, held_out.image.clone())];
    assert!(matches!(
        DomainBatch::<f64>::from_samples(&pairs, &domains()),
        Err(Error::UnknownDomain(_))
    ));
}

fn quick_config(mode: TrainingMode, phases: [usize; 3]) -> TrainerConfig {
    TrainerConfig {
        mode,
        phase_epochs: phases,
        alpha_ramp: phases[2],
        seg_batch: 4,
        disc_batch: 6,
        seed: 11,
        ..TrainerConfig::desk()
    }
}

#[test]
fn phases_freeze_the_inactive_network() {
    let data = tiny_data(7);
    let cfg = quick_config(TrainingMode::Adversarial, [1, 1, 1]);
    let mut t = Trainer::<f64>::new(cfg, tiny_unet(), tiny_disc(), &data).unwrap();
    let mut violations = Vec::new();
    let mut last = None;
    for epoch_phase in 1..=3 {
        let disc0 = t.model().disc_params.clone();
        let seg0 = t.model().seg_params.clone();
        t.run_epoch_observed(|kind, stage, m| {
            if stage == StepStage::Before {
                last = Some((m.seg_params.clone(), m.disc_params.clone()));
                return;
            }
            let (s, d) = last.take().unwrap();
            let ok = match kind {
                StepKind::Seg => d == m.disc_params,
                StepKind::Disc => s == m.seg_params,
                StepKind::Adversarial => {
                    d == m.disc_params
                        && s.fingerprint(PartitionSet::SEG_OTHER)
                            == m.seg_params.fingerprint(PartitionSet::SEG_OTHER)
                }
            };
            if !ok {
                violations.push(kind);
            }
        })
        .unwrap();
        match epoch_phase {
            1 => assert_eq!(t.model().disc_params, disc0),
            2 => assert_eq!(t.model().seg_params, seg0),
            _ => {}
        }
    }
    assert!(violations.is_empty(), "{violations:?}");
    let phases: Vec<u8> = t.log().records.iter().map(|r| r.phase).collect();
    assert_eq!(phases, [1, 2, 3]);
    assert!(t.log().records[0].disc_loss.is_none());
    assert!(t.log().records[1].seg_loss.is_none());
    assert!(t.log().records[2].seg_loss.is_some() && t.log().records[2].disc_acc.is_some());
    assert!(t.is_finished());
    assert!(matches!(t.run_epoch(), Err(Error::Config(_))));
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data(8);
    let cfg = quick_config(TrainingMode::Adversarial, [1, 1, 2]);
    let run = || {
        let mut t = Trainer::<f32>::new(cfg.clone(), tiny_unet(), tiny_disc(), &data).unwrap();
        t.run().unwrap();
        t.into_state()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert!(a.log.is_well_formed());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let data = tiny_data(9);
    let cfg = TrainerConfig {
        adversarial_optimizer: AdversarialOptimizer::Adam,
        ..quick_config(TrainingMode::Adversarial, [1, 1, 2])
    };
    let mut full = Trainer::<f64>::new(cfg.clone(), tiny_unet(), tiny_disc(), &data).unwrap();
    full.run().unwrap();

    let mut first = Trainer::<f64>::new(cfg.clone(), tiny_unet(), tiny_disc(), &data).unwrap();
    first.run_epoch().unwrap();
    first.run_epoch().unwrap();
    first.run_epoch().unwrap();
    let state = first.into_state();
    let mut second = Trainer::resume(cfg, &data, state).unwrap();
    assert_eq!(second.next_epoch(), 3);
    second.run().unwrap();
    assert_eq!(second.state(), full.state());
}

#[test]
fn baseline_matches_adversarial_in_phase_one() {
    let data = tiny_data(10);
    let mut adv = Trainer::<f64>::new(
        quick_config(TrainingMode::Adversarial, [2, 1, 1]),
        tiny_unet(),
        tiny_disc(),
        &data,
    )
    .unwrap();
    let mut base = Trainer::<f64>::new(
        quick_config(TrainingMode::Baseline, [2, 1, 1]),
        tiny_unet(),
        tiny_disc(),
        &data,
    )
    .unwrap();
    for _ in 0..2 {
        assert_eq!(adv.run_epoch().unwrap(), base.run_epoch().unwrap());
    }
    assert_eq!(adv.model().seg_params, base.model().seg_params);
    assert!(base.model().disc.is_none() && base.model().disc_params.is_empty());

    // baseline idles through phase 2 and records α = 0 afterwards
    let seg = base.model().seg_params.clone();
    let r = base.run_epoch().unwrap().clone();
    assert!(r.seg_loss.is_none() && r.disc_loss.is_none());
    assert_eq!(base.model().seg_params, seg);
    assert_eq!(base.run_epoch().unwrap().alpha, 0.0);
}

#[test]
fn dataset_contracts() {
    let data = tiny_data(11);
    let only_labelled: Vec<Sample> = data
        .iter()
        .filter(|s| s.domain_id == "A" || s.domain_id == "B")
        .cloned()
        .collect();
    let cfg = quick_config(TrainingMode::Adversarial, [1, 1, 1]);
    assert!(matches!(
        Trainer::<f32>::new(cfg.clone(), tiny_unet(), tiny_disc(), &only_labelled),
        Err(Error::InsufficientSamples(_))
    ));
    let base = quick_config(TrainingMode::Baseline, [1, 1, 1]);
    assert!(Trainer::<f32>::new(base, tiny_unet(), tiny_disc(), &only_labelled).is_ok());

    let two_domain = DiscriminatorConfig {
        domains: 2,
        ..tiny_disc()
    };
    assert!(matches!(
        Trainer::<f32>::new(cfg.clone(), tiny_unet(), two_domain, &data),
        Err(Error::Config(_))
    ));

    let wrong_size = UNetConfig {
        input_size: 64,
        ..tiny_unet()
    };
    assert!(matches!(
        Trainer::<f32>::new(cfg, wrong_size, tiny_disc(), &data),
        Err(Error::Shape { .. })
    ));
}

fn record(epoch: usize, phase: u8, dice: f64, acc: Option<f64>) -> EpochRecord {
    EpochRecord {
        epoch,
        phase,
        alpha: 0.0,
        seg_loss: Some(1.0),
        disc_loss: acc.map(|_| 1.0),
        disc_acc: acc,
        dice: Some([dice; 3]),
        checkpoint: None,
    }
}

fn trace(pre: usize, dice: &[f64], acc: &[f64]) -> TrainingLog {
    let mut log = TrainingLog::default();
    for e in 0..pre {
        log.push(record(e, 1, 0.1, None));
    }
    for (i, (&d, &a)) in dice.iter().zip(acc).enumerate() {
        log.push(record(pre + i, 3, d, Some(a)));
    }
    log
}

#[test]
fn early_stop_examples() {
    let cfg = EarlyStopConfig {
        window: 3,
        tolerance: 0.005,
    };
    // rising, then flat from epoch 2 (relative index)
    let log = trace(
        2,
        &[0.5, 0.6, 0.7, 0.701, 0.703, 0.702, 0.7],
        &[0.9, 0.8, 0.6, 0.5, 0.34, 0.4, 0.33],
    );
    let c = early_stop_select(&log, 3, &cfg).unwrap();
    assert_eq!(c.plateau, Some(4));
    assert_eq!(c.epoch, 8);
    assert!(!c.warning);

    // ties go to the earliest
    let log = trace(0, &[0.7; 6], &[0.5, 0.4, 0.3, 0.4, 0.3, 0.5]);
    let c = early_stop_select(&log, 3, &cfg).unwrap();
    assert_eq!(c.plateau, Some(0));
    assert_eq!(c.epoch, 2);

    // no plateau
    let log = trace(1, &[0.1, 0.2, 0.3, 0.4, 0.5], &[0.33; 5]);
    let c = early_stop_select(&log, 3, &cfg).unwrap();
    assert_eq!((c.epoch, c.plateau, c.warning), (5, None, true));

    // no phase 3
    assert!(early_stop_select(&trace(3, &[], &[]), 3, &cfg).is_none());
}
