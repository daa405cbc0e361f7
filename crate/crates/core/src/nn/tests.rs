use alloc::vec;

use rand::Rng as _;

use super::*;
use crate::autodiff::gradcheck::gradcheck;
use crate::autodiff::Graph;
use crate::error::Error;
use crate::rng::rng_for;
use crate::tensor::Tensor;

fn image(n: usize, size: usize, seed: u64) -> Tensor<f64> {
    let mut rng = rng_for(seed, &[]);
    Tensor::new(
        &[n, 1, size, size],
        (0..n * size * size).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

fn small_unet() -> UNetConfig {
    UNetConfig {
        input_size: 16,
        base_channels: 2,
        ..UNetConfig::desk()
    }
}

#[test]
fn unet_shapes_and_probability_simplex() {
    let cfg = UNetConfig::desk();
    let net = UNet::new(cfg.clone()).unwrap();
    let params = net.init_parameters::<f64>(1).unwrap();
    let mut g = Graph::new();
    let x = g.leaf(image(2, 32, 2));
    let mut b = params.bind(PartitionSet::NONE, Mode::Eval, cfg.norm);
    let out = net.forward(&mut g, &mut b, x).unwrap();
    assert_eq!(g.shape(out.probs), &[2, 4, 32, 32]);
    assert_eq!(g.shape(out.penultimate), &[2, 8, 32, 32]);
    assert_eq!(g.shape(out.bottleneck), &[2, 128, 2, 2]);
    let p = g.data(out.probs);
    for n in 0..2 {
        for i in 0..1024 {
            let s: f64 = (0..4).map(|k| p[(n * 4 + k) * 1024 + i]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn unet_rejects_indivisible_or_mismatched_size() {
    let bad = UNetConfig {
        input_size: 40,
        ..UNetConfig::desk()
    };
    assert!(matches!(UNet::new(bad), Err(Error::Config(_))));
    let net = UNet::new(small_unet()).unwrap();
    let params = net.init_parameters::<f64>(1).unwrap();
    let mut g = Graph::new();
    let x = g.leaf(image(1, 32, 1));
    let mut b = params.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
    assert!(net.forward(&mut g, &mut b, x).is_err());
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let net = UNet::new(UNetConfig::desk()).unwrap();
    let a = net.init_parameters::<f32>(7).unwrap();
    let b = net.init_parameters::<f32>(7).unwrap();
    let c = net.init_parameters::<f32>(8).unwrap();
    assert_eq!(a, b);
    assert_ne!(
        a.fingerprint(PartitionSet::ALL),
        c.fingerprint(PartitionSet::ALL)
    );
}

#[test]
fn he_init_sample_std() {
    let net = UNet::new(UNetConfig::desk()).unwrap();
    let p = net.init_parameters::<f64>(3).unwrap();
    // 16 -> 16 channels, 3x3: fan_in = 144
    let w = p.get("enc1.block2.conv.weight").unwrap();
    assert_eq!(w.shape(), &[16, 16, 3, 3]);
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let std = (w
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n)
        .sqrt();
    let target = (2.0f64 / 144.0).sqrt();
    assert!((std - target).abs() / target < 0.2, "std {std} vs {target}");
    assert!(p
        .get("enc1.block2.conv.bias")
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    assert!(p
        .get("enc1.block2.bn.gamma")
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 1.0));
}

#[test]
fn partitions_are_disjoint_and_exhaustive() {
    let net = UNet::new(UNetConfig::desk()).unwrap();
    let p = net.init_parameters::<f32>(0).unwrap();
    let conv = p.count_in(PartitionSet::SEG_CONV);
    let seg = p.count_in(PartitionSet::SEGMENTER);
    let other = seg - conv;
    assert_eq!(seg, p.len());
    assert_eq!(p.count_in(PartitionSet::DISCRIMINATOR), 0);
    for e in p.entries() {
        let is_conv = e.name.contains(".conv.") || e.name.starts_with("head.");
        assert_eq!(e.partition == Partition::SegConv, is_conv, "{}", e.name);
    }
    // 9 levels of 2 conv blocks plus the head; BN gamma and beta per block
    assert_eq!(conv, 18 * 2 + 2);
    assert_eq!(other, 18 * 2);

    let d = Discriminator::new(DiscriminatorConfig::default(), &UNetConfig::desk()).unwrap();
    let dp = d.init_parameters::<f32>(0).unwrap();
    assert_eq!(dp.count_in(PartitionSet::DISCRIMINATOR), dp.len());
}

fn disc_setup(
    seed: u64,
) -> (
    UNet,
    Discriminator,
    NetworkParameters<f64>,
    NetworkParameters<f64>,
) {
    let cfg = small_unet();
    let net = UNet::new(cfg.clone()).unwrap();
    let dcfg = DiscriminatorConfig {
        conv_widths: vec![4, 4, 4, 8],
        hidden: vec![8, 6],
        ..DiscriminatorConfig::default()
    };
    let disc = Discriminator::new(dcfg, &cfg).unwrap();
    (
        net.clone(),
        disc.clone(),
        net.init_parameters(seed).unwrap(),
        disc.init_parameters(seed + 1).unwrap(),
    )
}

#[test]
fn discriminator_shape_and_zero_final_layer() {
    let (net, disc, sp, mut dp) = disc_setup(4);
    let mut g = Graph::new();
    let x = g.leaf(image(3, 16, 5));
    let mut sb = sp.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
    let out = net.forward(&mut g, &mut sb, x).unwrap();
    let mut db = dp.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
    let logits = disc
        .forward(&mut g, &mut db, out.penultimate, out.bottleneck)
        .unwrap();
    assert_eq!(g.shape(logits), &[3, 3]);
    let probs = g.softmax(logits).unwrap();
    for row in g.data(probs).chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    dp.get_mut("fc3.weight").unwrap().data_mut().fill(0.0);
    let mut g = Graph::new();
    let x = g.leaf(image(3, 16, 5));
    let mut sb = sp.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
    let out = net.forward(&mut g, &mut sb, x).unwrap();
    let mut db = dp.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
    let logits = disc
        .forward(&mut g, &mut db, out.penultimate, out.bottleneck)
        .unwrap();
    let probs = g.softmax(logits).unwrap();
    assert!(g.data(probs).iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn discriminator_rejects_batch_mismatch() {
    let (_, disc, _, dp) = disc_setup(4);
    let mut g = Graph::<f64>::new();
    let pen = g.leaf(Tensor::zeros(&[2, 2, 16, 16]));
    let bot = g.leaf(Tensor::zeros(&[3, 32, 1, 1]));
    let mut db = dp.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
    assert!(matches!(
        disc.forward(&mut g, &mut db, pen, bot),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn forward_is_deterministic_and_eval_is_pure() {
    let (net, _, sp, _) = disc_setup(9);
    let run = |mode| {
        let mut g = Graph::new();
        let x = g.leaf(image(2, 16, 3));
        let mut b = sp.bind(PartitionSet::NONE, mode, NormConfig::default());
        let out = net.forward(&mut g, &mut b, x).unwrap();
        (g.data(out.probs).to_vec(), b.into_running_updates())
    };
    let (a, ua) = run(Mode::Eval);
    let (b, _) = run(Mode::Eval);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(ua.is_empty());
    let (_, ut) = run(Mode::Train);
    assert_eq!(ut.len(), sp.running().len());
}

#[test]
fn domain_loss_reaches_every_segmenter_conv() {
    let (net, disc, sp, dp) = disc_setup(11);
    let mut g = Graph::new();
    let x = g.leaf(image(3, 16, 6));
    let mut sb = sp.bind(PartitionSet::SEG_CONV, Mode::Eval, NormConfig::default());
    let out = net.forward(&mut g, &mut sb, x).unwrap();
    let mut db = dp.bind(PartitionSet::NONE, Mode::Eval, NormConfig::default());
    let logits = disc
        .forward(&mut g, &mut db, out.penultimate, out.bottleneck)
        .unwrap();
    let probs = g.softmax(logits).unwrap();
    let target = Tensor::from_f64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let loss = g.cross_entropy(probs, &target).unwrap();
    g.backward(loss).unwrap();
    let grads = sb.gradients(&g);
    let conv_names = sp.names_in(PartitionSet::SEG_CONV);
    assert_eq!(grads.by_name.len(), conv_names.len());
    for name in conv_names {
        let gr = grads.get(name).unwrap();
        // the 1x1 head sits after both taps, so it is unreachable and gets zeros
        let reachable = !name.starts_with("head.") && name.ends_with(".weight");
        if reachable {
            assert!(
                gr.iter().any(|&v| v != 0.0),
                "{name} has an all-zero gradient"
            );
        } else if name.starts_with("head.") {
            assert!(gr.iter().all(|&v| v == 0.0));
        }
    }
    assert!(grads.get("enc0.block1.bn.gamma").is_none());
}

#[test]
fn unet_input_gradient_matches_finite_differences() {
    let cfg = UNetConfig {
        input_size: 4,
        base_channels: 2,
        depth: 2,
        ..UNetConfig::desk()
    };
    let net = UNet::new(cfg.clone()).unwrap();
    let params = net.init_parameters::<f64>(21).unwrap();
    let mut rng = rng_for(22, &[]);
    let mut t = vec![0.0; 2 * 4 * 16];
    for n in 0..2 {
        for i in 0..16 {
            t[(n * 4 + rng.random_range(0..4)) * 16 + i] = 1.0;
        }
    }
    let target = Tensor::new(&[2, 4, 4, 4], t).unwrap();
    let errs = gradcheck(&[image(2, 4, 23)], 1e-5, |g, v| {
        let mut b = params.bind(PartitionSet::NONE, Mode::Train, cfg.norm);
        let out = net.forward(g, &mut b, v[0])?;
        let ce = g.cross_entropy(out.probs, &target)?;
        let dl = g.soft_dice_loss(out.probs, &target)?;
        g.add(ce, dl)
    })
    .unwrap();
    assert!(errs[0] < 1e-4, "relative error {}", errs[0]);
}
