use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};

use super::batch::{DomainBatch, SegBatch};
use super::config::{AdversarialOptimizer, TrainerConfig, TrainingMode};
use super::log::{EpochRecord, TrainingLog};
use super::optim::AdamState;
use super::steps::{adversarial_step, disc_step, seg_step, Model};
use crate::data::{augment, contrast_normalize, Image, Sample, Split, LV, MYO, RV};
use crate::error::{Error, Result};
use crate::metrics::{dice, sliding_window_predict, SegmenterPredictor};
use crate::nn::{Discriminator, DiscriminatorConfig, NetworkParameters, UNet, UNetConfig};
use crate::real::Real;
use crate::rng::{derive, rng_for};

const STREAM_INIT_SEG: u64 = 1;
const STREAM_INIT_DISC: u64 = 2;
const STREAM_ORDER: u64 = 3;
const STREAM_DISC_DRAW: u64 = 4;
const STREAM_AUGMENT: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Seg,
    Disc,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStage {
    Before,
    After,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState<T> {
    pub next_epoch: usize,
    pub model: Model<T>,
    pub seg_opt: AdamState<T>,
    pub disc_opt: AdamState<T>,
    pub adv_opt: AdamState<T>,
    pub log: TrainingLog,
}

/// Sample pools derived from a dataset.
struct Pools<'a> {
    /// Annotated training samples.
    labelled: Vec<&'a Sample>,
    /// Every training sample per discriminator domain.
    by_domain: Vec<Vec<&'a Sample>>,
    domains: Vec<String>,
    val: Vec<&'a Sample>,
}

impl<'a> Pools<'a> {
    fn new(samples: &'a [Sample], mode: TrainingMode) -> Result<Self> {
        let train: Vec<&Sample> = samples.iter().filter(|s| s.split == Split::Train).collect();
        let domains: Vec<String> = train
            .iter()
            .map(|s| s.domain_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labelled_domains: BTreeSet<&str> = train
            .iter()
            .filter(|s| s.is_labelled())
            .map(|s| s.domain_id.as_str())
            .collect();
        let unlabelled_domains = domains
            .iter()
            .filter(|d| !labelled_domains.contains(d.as_str()))
            .count();
        match mode {
            TrainingMode::Adversarial if labelled_domains.len() < 2 || unlabelled_domains < 1 => {
                return Err(Error::InsufficientSamples(format!(
                    "adversarial training needs at least 2 labelled and 1 unlabelled training domain, got {} and {unlabelled_domains}",
                    labelled_domains.len()
                )));
            }
            TrainingMode::Baseline if labelled_domains.is_empty() => {
                return Err(Error::InsufficientSamples(
                    "training needs at least one labelled domain".into(),
                ));
            }
            _ => {}
        }
        let labelled: Vec<&Sample> = train.iter().copied().filter(|s| s.is_labelled()).collect();
        if labelled.len() < 2 {
            return Err(Error::InsufficientSamples(format!(
                "{} labelled training samples, need at least 2",
                labelled.len()
            )));
        }
        let by_domain = domains
            .iter()
            .map(|d| {
                train
                    .iter()
                    .copied()
                    .filter(|s| &s.domain_id == d)
                    .collect()
            })
            .collect();
        let val = samples
            .iter()
            .filter(|s| {
                s.split == Split::Val
                    && s.is_labelled()
                    && labelled_domains.contains(s.domain_id.as_str())
            })
            .collect();
        Ok(Self {
            labelled,
            by_domain,
            domains,
            val,
        })
    }
}

fn params_finite<T: Real>(params: &NetworkParameters<T>, what: &str) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} parameters after the update"
        )))
    }
}

/// Runs the staged schedule one epoch at a time.
pub struct Trainer<'a, T> {
    config: TrainerConfig,
    pools: Pools<'a>,
    state: TrainerState<T>,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Fresh networks initialized from the configured seed. The
    /// discriminator's domain count must equal the number of training
    /// domains in `samples`; baseline training creates no discriminator.
    pub fn new(
        config: TrainerConfig,
        unet: UNetConfig,
        disc: DiscriminatorConfig,
        samples: &'a [Sample],
    ) -> Result<Self> {
        config.validate()?;
        let unet = UNet::new(unet)?;
        let seg_params = unet.init_parameters(derive(config.seed, &[STREAM_INIT_SEG]))?;
        let (disc, disc_params) = match config.mode {
            TrainingMode::Adversarial => {
                let disc = Discriminator::new(disc, unet.config())?;
                let params = disc.init_parameters(derive(config.seed, &[STREAM_INIT_DISC]))?;
                (Some(disc), params)
            }
            TrainingMode::Baseline => (None, NetworkParameters::new()),
        };
        let state = TrainerState {
            next_epoch: 0,
            model: Model {
                unet,
                disc,
                seg_params,
                disc_params,
            },
            seg_opt: AdamState::new(config.adam),
            disc_opt: AdamState::new(config.adam),
            adv_opt: AdamState::new(config.adam),
            log: TrainingLog::default(),
        };
        Self::resume(config, samples, state)
    }

    /// Continue from a saved state.
    pub fn resume(
        config: TrainerConfig,
        samples: &'a [Sample],
        state: TrainerState<T>,
    ) -> Result<Self> {
        config.validate()?;
        let pools = Pools::new(samples, config.mode)?;
        let s = state.model.unet.config().input_size;
        if let Some(bad) = samples.iter().find(|x| x.image.dims() != (s, s)) {
            return Err(Error::shape(
                "trainer",
                format!(
                    "sample {} is {:?}, network expects {s}x{s}",
                    bad.id,
                    bad.image.dims()
                ),
            ));
        }
        if config.mode == TrainingMode::Adversarial {
            let d = state.model.discriminator()?.domains();
            if d != pools.domains.len() {
                return Err(Error::Config(format!(
                    "discriminator has {d} outputs but the data has {} training domains {:?}",
                    pools.domains.len(),
                    pools.domains
                )));
            }
        }
        Ok(Self {
            config,
            pools,
            state,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<T> {
        &self.state.model
    }

    pub fn state(&self) -> &TrainerState<T> {
        &self.state
    }

    pub fn into_state(self) -> TrainerState<T> {
        self.state
    }

    pub fn log(&self) -> &TrainingLog {
        &self.state.log
    }

    /// Attach a checkpoint reference to the most recent log record.
    pub fn set_checkpoint(&mut self, reference: String) {
        if let Some(r) = self.state.log.records.last_mut() {
            r.checkpoint = Some(reference);
        }
    }

    /// Discriminator domain ids in label order.
    pub fn domains(&self) -> &[String] {
        &self.pools.domains
    }

    pub fn next_epoch(&self) -> usize {
        self.state.next_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.state.next_epoch >= self.config.total_epochs()
    }

    /// Augment a sample with its per-use seed and apply the final contrast
    /// normalization. The returned sample carries the augmented mask.
    fn prepare(
        &self,
        sample: &Sample,
        epoch: usize,
        iteration: usize,
        stream: u64,
        slot: usize,
    ) -> Sample {
        let seed = derive(
            self.config.seed,
            &[
                STREAM_AUGMENT,
                epoch as u64,
                iteration as u64,
                stream,
                slot as u64,
            ],
        );
        let mut aug = augment(sample, seed, &self.config.augment);
        aug.image = contrast_normalize(&aug.image, self.config.clahe.as_ref());
        aug
    }

    fn seg_batch(
        &self,
        order: &[usize],
        epoch: usize,
        iteration: usize,
        size: usize,
    ) -> Result<SegBatch<T>> {
        let prepared: Vec<Sample> = order[iteration * size..(iteration + 1) * size]
            .iter()
            .enumerate()
            .map(|(slot, &i)| self.prepare(self.pools.labelled[i], epoch, iteration, 0, slot))
            .collect();
        let pairs: Vec<(&Sample, Image)> = prepared.iter().map(|s| (s, s.image.clone())).collect();
        SegBatch::from_samples(&pairs, self.state.model.unet.config().classes)
    }

    fn domain_batch(&self, epoch: usize, iteration: usize) -> Result<DomainBatch<T>> {
        let d = self.pools.domains.len();
        let per = self.config.disc_batch.div_ceil(d);
        let mut rng = rng_for(
            self.config.seed,
            &[STREAM_DISC_DRAW, epoch as u64, iteration as u64],
        );
        let draws: Vec<Vec<&Sample>> = self
            .pools
            .by_domain
            .iter()
            .map(|pool| {
                if pool.len() >= per {
                    pool.choose_multiple(&mut rng, per).copied().collect()
                } else {
                    (0..per)
                        .map(|_| *pool.choose(&mut rng).expect("non-empty domain"))
                        .collect()
                }
            })
            .collect();
        // round-robin over domains, trimmed to the batch size
        let picked: Vec<&Sample> = (0..per)
            .flat_map(|k| draws.iter().map(move |v| v[k]))
            .take(self.config.disc_batch)
            .collect();
        let prepared: Vec<Sample> = picked
            .iter()
            .enumerate()
            .map(|(slot, &s)| self.prepare(s, epoch, iteration, 1, slot))
            .collect();
        let pairs: Vec<(&Sample, Image)> = prepared.iter().map(|s| (s, s.image.clone())).collect();
        DomainBatch::from_samples(&pairs, &self.pools.domains)
    }

    fn validation_dice(&self) -> Result<Option<[f64; 3]>> {
        if self.pools.val.is_empty() {
            return Ok(None);
        }
        let predictor = SegmenterPredictor {
            unet: &self.state.model.unet,
            params: &self.state.model.seg_params,
        };
        let mut sums = [0.0; 3];
        for s in &self.pools.val {
            let input = contrast_normalize(&s.image, self.config.clahe.as_ref());
            let pred = sliding_window_predict(&predictor, &input)?.argmax();
            let truth = s.mask.as_ref().expect("validation samples are labelled");
            for (acc, class) in sums.iter_mut().zip([LV, MYO, RV]) {
                *acc += dice(&pred, truth, class)?;
            }
        }
        let n = self.pools.val.len() as f64;
        Ok(Some(sums.map(|v| v / n)))
    }

    /// Run the next epoch and append its record to the log.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        self.run_epoch_observed(|_, _, _| {})
    }

    /// [`Trainer::run_epoch`], calling `observe` with the model before and
    /// after every optimization step.
    pub fn run_epoch_observed(
        &mut self,
        mut observe: impl FnMut(StepKind, StepStage, &Model<T>),
    ) -> Result<&EpochRecord> {
        let epoch = self.state.next_epoch;
        if self.is_finished() {
            return Err(Error::Config(format!(
                "schedule of {} epochs already complete",
                self.config.total_epochs()
            )));
        }
        let phase = self.config.phase_of(epoch);
        let adversarial = self.config.mode == TrainingMode::Adversarial;
        let alpha = if adversarial {
            self.config.alpha(epoch)
        } else {
            0.0
        };
        let n = self.pools.labelled.len();
        let size = self.config.seg_batch.min(n);
        let iterations = n / size;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(
            self.config.seed,
            &[STREAM_ORDER, epoch as u64],
        ));

        let (mut seg_sum, mut seg_n) = (0.0, 0usize);
        let (mut disc_sum, mut acc_sum, mut disc_n) = (0.0, 0.0, 0usize);
        let seg_lr = if phase == 1 {
            self.config.seg_lr_pretrain
        } else {
            self.config.seg_lr_joint
        };
        let disc_lr = if phase == 2 {
            self.config.disc_lr_pretrain
        } else {
            self.config.disc_lr_joint
        };
        let context = |e: Error, what: &str, it: usize| match e {
            Error::NonFinite(m) => {
                Error::NonFinite(format!("{m} in {what} step, epoch {epoch}, batch {it}"))
            }
            other => other,
        };
        for it in 0..iterations {
            if phase != 2 {
                let batch = self.seg_batch(&order, epoch, it, size)?;
                observe(StepKind::Seg, StepStage::Before, &self.state.model);
                let loss = seg_step(
                    &mut self.state.model,
                    &batch,
                    seg_lr,
                    &mut self.state.seg_opt,
                )
                .and_then(|l| params_finite(&self.state.model.seg_params, "segmenter").map(|_| l))
                .map_err(|e| context(e, "segmentation", it))?;
                observe(StepKind::Seg, StepStage::After, &self.state.model);
                seg_sum += loss;
                seg_n += 1;
            }
            if adversarial && phase != 1 {
                let batch = self.domain_batch(epoch, it)?;
                observe(StepKind::Disc, StepStage::Before, &self.state.model);
                let out = disc_step(
                    &mut self.state.model,
                    &batch,
                    disc_lr,
                    &mut self.state.disc_opt,
                )
                .and_then(|o| {
                    params_finite(&self.state.model.disc_params, "discriminator").map(|_| o)
                })
                .map_err(|e| context(e, "discriminator", it))?;
                observe(StepKind::Disc, StepStage::After, &self.state.model);
                disc_sum += out.loss;
                acc_sum += out.accuracy;
                disc_n += 1;
                if phase == 3 {
                    let opt = match self.config.adversarial_optimizer {
                        AdversarialOptimizer::Plain => None,
                        AdversarialOptimizer::Adam => Some(&mut self.state.adv_opt),
                    };
                    observe(StepKind::Adversarial, StepStage::Before, &self.state.model);
                    adversarial_step(
                        &mut self.state.model,
                        &batch,
                        alpha,
                        self.config.seg_lr_joint,
                        opt,
                    )
                    .and_then(|_| params_finite(&self.state.model.seg_params, "segmenter"))
                    .map_err(|e| context(e, "adversarial", it))?;
                    observe(StepKind::Adversarial, StepStage::After, &self.state.model);
                }
            }
        }
        let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
        let record = EpochRecord {
            epoch,
            phase,
            alpha,
            seg_loss: mean(seg_sum, seg_n),
            disc_loss: mean(disc_sum, disc_n),
            disc_acc: mean(acc_sum, disc_n),
            dice: self.validation_dice()?,
            checkpoint: None,
        };
        self.state.log.push(record);
        self.state.next_epoch += 1;
        Ok(self.state.log.last().expect("just pushed"))
    }

    /// Run every remaining epoch.
    pub fn run(&mut self) -> Result<&TrainingLog> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(&self.state.log)
    }
}
