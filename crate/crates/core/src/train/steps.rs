use alloc::format;

use super::batch::{DomainBatch, SegBatch};
use super::optim::{sgd_step, AdamState, Direction};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Discriminator, Mode, NetworkParameters, PartitionSet, UNet};
use crate::real::Real;

/// Segmenter and, for adversarial training, discriminator with their
/// parameters. Without a discriminator `disc_params` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub unet: UNet,
    pub disc: Option<Discriminator>,
    pub seg_params: NetworkParameters<T>,
    pub disc_params: NetworkParameters<T>,
}

impl<T: Real> Model<T> {
    pub fn discriminator(&self) -> Result<&Discriminator> {
        self.disc
            .as_ref()
            .ok_or_else(|| Error::Config("model has no discriminator".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscOutcome {
    pub loss: f64,
    pub accuracy: f64,
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} is {value}")))
    }
}

fn accuracy<T: Real>(g: &Graph<T>, probs: Var, labels: &[usize]) -> f64 {
    let d = g.shape(probs)[1];
    let p = g.data(probs);
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| {
            let row = &p[i * d..(i + 1) * d];
            let mut best = 0;
            for k in 1..d {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == l
        })
        .count();
    hits as f64 / labels.len() as f64
}

/// Segmentation loss: soft Dice loss plus cross-entropy. One ADAM
/// descent step on every segmenter parameter; batch-norm statistics are
/// updated from the batch. Returns the loss before the step.
pub fn seg_step<T: Real>(
    model: &mut Model<T>,
    batch: &SegBatch<T>,
    lr: f64,
    opt: &mut AdamState<T>,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut bound = model.seg_params.bind(
        PartitionSet::SEGMENTER,
        Mode::Train,
        model.unet.config().norm,
    );
    let x = g.leaf(batch.images.clone());
    let out = model.unet.forward(&mut g, &mut bound, x)?;
    let dice = g.soft_dice_loss(out.probs, &batch.targets)?;
    let ce = g.cross_entropy(out.probs, &batch.targets)?;
    let loss = g.add(dice, ce)?;
    let value = finite(g.data(loss)[0].as_f64(), "segmentation loss")?;
    g.backward(loss)?;
    let grads = bound.gradients(&g);
    let running = bound.into_running_updates();
    model.seg_params.apply_running(running);
    opt.step(
        &mut model.seg_params,
        &grads,
        PartitionSet::SEGMENTER,
        lr,
        Direction::Descent,
    )?;
    Ok(value)
}

/// Domain cross-entropy of the discriminator on the segmenter's taps.
/// The segmenter normalises with batch statistics; its running statistics
/// are left alone. Returns graph, loss and softmax outputs.
fn domain_graph<'m, T: Real>(
    model: &'m Model<T>,
    batch: &DomainBatch<T>,
    seg_trainable: PartitionSet,
    disc_trainable: PartitionSet,
    disc_mode: Mode,
) -> Result<(Graph<T>, Var, Var, [crate::nn::Bound<'m, T>; 2])> {
    let mut g = Graph::new();
    let mut seg = model
        .seg_params
        .bind(seg_trainable, Mode::Train, model.unet.config().norm);
    let x = g.leaf(batch.images.clone());
    let out = model.unet.forward(&mut g, &mut seg, x)?;
    let (pen, bot) = if seg_trainable == PartitionSet::NONE {
        (g.detach(out.penultimate), g.detach(out.bottleneck))
    } else {
        (out.penultimate, out.bottleneck)
    };
    let net = model.discriminator()?;
    let mut disc = model
        .disc_params
        .bind(disc_trainable, disc_mode, net.config().norm);
    let logits = net.forward(&mut g, &mut disc, pen, bot)?;
    let probs = g.softmax(logits)?;
    let loss = g.cross_entropy(probs, &batch.targets)?;
    Ok((g, loss, probs, [seg, disc]))
}

fn check_domains<T: Real>(model: &Model<T>, batch: &DomainBatch<T>) -> Result<()> {
    let d = model.discriminator()?.domains();
    if batch.targets.shape()[1] != d {
        return Err(Error::shape(
            "domain_batch",
            format!(
                "batch has {} domains, discriminator {d}",
                batch.targets.shape()[1]
            ),
        ));
    }
    Ok(())
}

/// One ADAM descent step on the discriminator against frozen segmenter
/// features. Returns loss and accuracy before the step.
pub fn disc_step<T: Real>(
    model: &mut Model<T>,
    batch: &DomainBatch<T>,
    lr: f64,
    opt: &mut AdamState<T>,
) -> Result<DiscOutcome> {
    check_domains(model, batch)?;
    let (mut g, loss, probs, [_, disc]) = domain_graph(
        model,
        batch,
        PartitionSet::NONE,
        PartitionSet::DISCRIMINATOR,
        Mode::Train,
    )?;
    let value = finite(g.data(loss)[0].as_f64(), "discriminator loss")?;
    let acc = accuracy(&g, probs, &batch.labels);
    g.backward(loss)?;
    let grads = disc.gradients(&g);
    let running = disc.into_running_updates();
    model.disc_params.apply_running(running);
    opt.step(
        &mut model.disc_params,
        &grads,
        PartitionSet::DISCRIMINATOR,
        lr,
        Direction::Descent,
    )?;
    Ok(DiscOutcome {
        loss: value,
        accuracy: acc,
    })
}

/// Domain loss and accuracy with the discriminator in inference mode; the
/// quantity the adversarial step increases.
pub fn domain_loss<T: Real>(model: &Model<T>, batch: &DomainBatch<T>) -> Result<DiscOutcome> {
    check_domains(model, batch)?;
    let (g, loss, probs, _) = domain_graph(
        model,
        batch,
        PartitionSet::NONE,
        PartitionSet::NONE,
        Mode::Eval,
    )?;
    Ok(DiscOutcome {
        loss: g.data(loss)[0].as_f64(),
        accuracy: accuracy(&g, probs, &batch.labels),
    })
}

/// Gradient-reversal update of the segmenter's convolutions: ascend the
/// domain loss with step `α·lr`, the discriminator fixed. With `opt`, the
/// ascent uses ADAM on that separate state instead of the plain scaled
/// gradient. `α = 0` leaves every parameter untouched. Returns the loss
/// before the step.
pub fn adversarial_step<T: Real>(
    model: &mut Model<T>,
    batch: &DomainBatch<T>,
    alpha: f64,
    lr: f64,
    opt: Option<&mut AdamState<T>>,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    check_domains(model, batch)?;
    let (mut g, loss, _, [seg, _]) = domain_graph(
        model,
        batch,
        PartitionSet::SEG_CONV,
        PartitionSet::NONE,
        Mode::Eval,
    )?;
    let value = finite(g.data(loss)[0].as_f64(), "domain loss")?;
    if alpha == 0.0 {
        return Ok(value);
    }
    g.backward(loss)?;
    let grads = seg.gradients(&g);
    drop(seg);
    let step = alpha * lr;
    match opt {
        Some(state) => state.step(
            &mut model.seg_params,
            &grads,
            PartitionSet::SEG_CONV,
            step,
            Direction::Ascent,
        )?,
        None => sgd_step(
            &mut model.seg_params,
            &grads,
            PartitionSet::SEG_CONV,
            step,
            Direction::Ascent,
        )?,
    }
    Ok(value)
}
