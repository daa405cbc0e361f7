use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use dannseg_core::data::{
    contrast_normalize, default_domains, generate_dataset, DomainSpec, GeneratorConfig, Sample,
    Split,
};
use dannseg_core::metrics::{
    domain_probe, evaluate_samples, extract_embeddings, MetricsReport, MwMethod, ProbeResult,
    SegmenterPredictor,
};
use dannseg_core::nn::{NetworkParameters, UNet};
use dannseg_core::train::{early_stop_select, EarlyStopChoice, Trainer, TrainingLog};
use dannseg_core::{Error as CoreError, Real};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint};
use crate::cli::{EvalArgs, GenerateArgs, ProbeArgs, TrainArgs};
use crate::config::{env_seed, Precision, RunConfig};
use crate::dataset::{is_empty_dir, read_dataset, write_dataset, write_json};
use crate::error::{CliError, Result};
use crate::logs::{write_log, LogDocument};
use crate::report::{embeddings_csv, write_metrics, EmbeddingRow, MetricsDocument};

pub const RUN_CONFIG: &str = "run_config.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("{CHECKPOINT_DIR}/epoch_{epoch:04}.ckpt")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// Reject output directories that coincide with or lie inside the dataset.
fn check_out_dir(data: &Path, out: &Path) -> Result<()> {
    let data = fs::canonicalize(data).map_err(CliError::io(data))?;
    let mut probe = out.to_path_buf();
    let resolved = loop {
        if let Ok(p) = fs::canonicalize(&probe) {
            break Some(p);
        }
        if !probe.pop() || probe.as_os_str().is_empty() {
            break None;
        }
    };
    let resolved = resolved.unwrap_or_else(|| std::env::current_dir().unwrap_or_default());
    if resolved.starts_with(&data) {
        return Err(CliError::Usage(format!(
            "output directory {} must lie outside the dataset {}",
            out.display(),
            data.display()
        )));
    }
    Ok(())
}

fn load_samples(data: &Path) -> Result<Vec<Sample>> {
    if !data.join(crate::dataset::MANIFEST).is_file() {
        return Err(CliError::Data(format!(
            "{} holds no dataset manifest",
            data.display()
        )));
    }
    Ok(read_dataset(data)?.1)
}

// ---- generate ----

#[derive(Serialize)]
struct GenerateEcho<'a> {
    command: &'static str,
    generator: &'a GeneratorConfig,
}

fn parse_domains(spec: &str) -> Result<Vec<DomainSpec>> {
    let spec = spec.trim();
    if spec == "default" {
        return Ok(default_domains());
    }
    let from_json = |text: &str, origin: &str| {
        serde_json::from_str::<Vec<DomainSpec>>(text)
            .map_err(|e| CliError::Config(format!("domain specs in {origin}: {e}")))
    };
    if spec.starts_with('[') {
        return from_json(spec, "--domains");
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return from_json(&text, &path.display().to_string());
    }
    let defaults = default_domains();
    spec.split(',')
        .map(|id| {
            let id = id.trim();
            defaults
                .iter()
                .find(|d| d.id == id)
                .cloned()
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "--domains: `{id}` is neither a default domain, a file nor JSON"
                    ))
                })
        })
        .collect()
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut config = GeneratorConfig {
        domains: parse_domains(&args.domains)?,
        per_domain: args.per_domain,
        size: args.size,
        seed,
        ..GeneratorConfig::desk(seed)
    };
    if let Some(s) = args.spacing {
        config.spacing = s;
    }
    config.validate()?;
    if !is_empty_dir(&args.out)? && !args.force {
        return Err(CliError::Usage(format!(
            "output directory {} is not empty (use --force)",
            args.out.display()
        )));
    }
    create_dir(&args.out)?;
    write_json(
        &args.out.join("generate_config.json"),
        &GenerateEcho {
            command: "generate",
            generator: &config,
        },
    )?;
    let samples = generate_dataset(&config)?;
    write_dataset(&args.out, &samples, Some(&config), true)
}

// ---- train ----

/// Configuration of a fresh run: defaults, environment seed, file, flags.
pub fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::resolve(env_seed()?, args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.mode {
        cfg.trainer.mode = m.into();
    }
    if let Some(p) = args.precision {
        cfg.precision = p.into();
    }
    if let Some(p) = &args.phase_epochs {
        cfg.trainer.phase_epochs = p.as_slice().try_into().map_err(|_| {
            CliError::Usage(format!("--phase-epochs needs 3 values, got {}", p.len()))
        })?;
    }
    if let Some(r) = args.alpha_ramp {
        cfg.trainer.alpha_ramp = r;
    }
    if let Some(c) = args.checkpoint_every {
        cfg.checkpoint_every = c;
    }
    cfg.sync();
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct Failure {
    error: &'static str,
    epoch: usize,
    batch: Option<usize>,
    message: String,
}

fn batch_of(message: &str) -> Option<usize> {
    message
        .rsplit_once("batch ")
        .and_then(|(_, n)| n.trim().parse().ok())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    check_out_dir(&args.data, &args.out)?;
    let resume_from = args.resume.as_ref().map(|p| {
        p.clone()
            .unwrap_or_else(|| args.out.join(CHECKPOINT_DIR).join(LAST_CHECKPOINT))
    });
    let (config, checkpoint) = match &resume_from {
        Some(path) => {
            let flags = args.config.is_some()
                || args.seed.is_some()
                || args.mode.is_some()
                || args.precision.is_some()
                || args.phase_epochs.is_some()
                || args.alpha_ramp.is_some()
                || args.checkpoint_every.is_some();
            if flags {
                return Err(CliError::Usage("a resumed run keeps its checkpoint's configuration; drop the configuration flags".into()));
            }
            let ckpt = Checkpoint::load(path)?;
            if !ckpt.can_resume() {
                return Err(CliError::Usage(format!(
                    "{} holds no optimizer state and cannot be resumed",
                    path.display()
                )));
            }
            (ckpt.header.config.clone(), Some(ckpt))
        }
        None => (resolve_train_config(args)?, None),
    };
    if checkpoint.is_none() && args.out.join(RUN_CONFIG).exists() && !args.force {
        return Err(CliError::Usage(format!(
            "{} already holds a run (use --resume or --force)",
            args.out.display()
        )));
    }
    create_dir(&args.out)?;
    write_json(&args.out.join(RUN_CONFIG), &config)?;
    let samples = load_samples(&args.data)?;
    match config.precision {
        Precision::F32 => train_typed::<f32>(args, &config, checkpoint.as_ref(), &samples),
        Precision::F64 => train_typed::<f64>(args, &config, checkpoint.as_ref(), &samples),
    }
}

fn log_document(
    config: &RunConfig,
    domains: &[String],
    log: &TrainingLog,
    selection: Option<EarlyStopChoice>,
) -> LogDocument {
    LogDocument {
        config: config.clone(),
        domains: domains.to_vec(),
        records: log.records.clone(),
        selection,
    }
}

fn train_typed<T: Real>(
    args: &TrainArgs,
    config: &RunConfig,
    checkpoint: Option<&Checkpoint>,
    samples: &[Sample],
) -> Result<()> {
    let mut trainer = match checkpoint {
        Some(c) => Trainer::<T>::resume(config.trainer.clone(), samples, c.state::<T>()?)?,
        None => Trainer::<T>::new(
            config.trainer.clone(),
            config.unet.clone(),
            config.discriminator.clone(),
            samples,
        )?,
    };
    let domains = trainer.domains().to_vec();
    if let Some(c) = checkpoint {
        if c.header.domains != domains {
            return Err(CliError::Data(format!(
                "checkpoint was trained on domains {:?}, the data has {domains:?}",
                c.header.domains
            )));
        }
    }
    let ckpt_dir = args.out.join(CHECKPOINT_DIR);
    create_dir(&ckpt_dir)?;
    let mut ran = 0;
    while !trainer.is_finished() && args.max_epochs.is_none_or(|m| ran < m) {
        let epoch = trainer.next_epoch();
        if let Err(e) = trainer.run_epoch() {
            if let CoreError::NonFinite(message) = &e {
                let failure = Failure {
                    error: "non-finite value",
                    epoch,
                    batch: batch_of(message),
                    message: message.clone(),
                };
                write_json(&args.out.join("failure.json"), &failure)?;
            }
            return Err(e.into());
        }
        ran += 1;
        let last_epoch = trainer.is_finished();
        let every = config.checkpoint_every;
        if (every > 0 && (epoch + 1) % every == 0) || last_epoch {
            let name = epoch_checkpoint_name(epoch);
            trainer.set_checkpoint(name.clone());
            checkpoint::save(
                &args.out.join(&name),
                trainer.state(),
                config,
                &domains,
                false,
            )?;
        }
        checkpoint::save(
            &ckpt_dir.join(LAST_CHECKPOINT),
            trainer.state(),
            config,
            &domains,
            true,
        )?;
        write_log(
            &args.out,
            &log_document(config, &domains, trainer.log(), None),
        )?;
    }
    if trainer.is_finished() {
        let selection = early_stop_select(trainer.log(), domains.len(), &config.trainer.early_stop);
        write_log(
            &args.out,
            &log_document(config, &domains, trainer.log(), selection),
        )?;
        if let Some(s) = selection {
            if s.warning {
                eprintln!(
                    "warning: validation Dice never plateaued; selected the last epoch {}",
                    s.epoch
                );
            }
            write_json(&args.out.join("selection.json"), &s)?;
        }
    }
    Ok(())
}

// ---- eval ----

#[derive(Serialize)]
struct EvalEcho<'a> {
    command: &'static str,
    checkpoint: &'a Path,
    compare: Option<&'a Path>,
    split: Split,
    mann_whitney: MwMethod,
    config: &'a RunConfig,
}

/// The configuration an evaluation uses: the checkpoint's, or the file
/// given with `--config` whose architecture the checkpoint must match.
fn analysis_config(ckpt: &Checkpoint, file: Option<&Path>) -> Result<RunConfig> {
    match file {
        Some(f) => {
            let cfg = RunConfig::resolve(env_seed()?, Some(f))?;
            cfg.validate()?;
            Ok(cfg)
        }
        None => Ok(ckpt.header.config.clone()),
    }
}

fn score<T: Real>(
    ckpt: &Checkpoint,
    config: &RunConfig,
    samples: &[&Sample],
) -> Result<MetricsReport> {
    let (unet, params) = ckpt.segmenter::<T>(&config.unet)?;
    let predictor = SegmenterPredictor {
        unet: &unet,
        params: &params,
    };
    let rows = evaluate_samples(&predictor, samples, config.trainer.clahe.as_ref())?;
    Ok(MetricsReport::from_rows(rows)?)
}

fn score_any(ckpt: &Checkpoint, config: &RunConfig, samples: &[&Sample]) -> Result<MetricsReport> {
    match ckpt.header.dtype {
        Precision::F32 => score::<f32>(ckpt, config, samples),
        Precision::F64 => score::<f64>(ckpt, config, samples),
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    check_out_dir(&args.data, &args.out)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let config = analysis_config(&ckpt, args.config.as_deref())?;
    let split = args.split.map(Split::from).unwrap_or(config.eval.split);
    let method = args
        .mann_whitney
        .map(MwMethod::from)
        .unwrap_or(config.eval.mann_whitney);
    create_dir(&args.out)?;
    write_json(
        &args.out.join("eval_config.json"),
        &EvalEcho {
            command: "eval",
            checkpoint: &args.checkpoint,
            compare: args.compare.as_deref(),
            split,
            mann_whitney: method,
            config: &config,
        },
    )?;
    let samples = load_samples(&args.data)?;
    let selected: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.split == split && s.is_labelled())
        .collect();
    if selected.is_empty() {
        return Err(CliError::Data(format!(
            "no labelled samples in the {split:?} split"
        )));
    }
    let mut report = score_any(&ckpt, &config, &selected)?;
    if let Some(other) = &args.compare {
        let second = Checkpoint::load(other)?;
        let second_report = score_any(
            &second,
            &analysis_config(&second, args.config.as_deref())?,
            &selected,
        )?;
        report.compare(&second_report, method)?;
    }
    let doc = MetricsDocument {
        config,
        checkpoint: args.checkpoint.display().to_string(),
        split,
        aggregates: report.aggregates.clone(),
        probe: None,
        compared_with: args.compare.as_ref().map(|p| p.display().to_string()),
        comparisons: report.comparisons.clone(),
    };
    write_metrics(&args.out, &report, &doc)
}

// ---- probe ----

#[derive(Serialize)]
struct ProbeEcho<'a> {
    command: &'static str,
    checkpoint: &'a Path,
    domains: &'a [String],
    seed: u64,
    config: &'a RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ProbeDocument {
    pub checkpoint: String,
    pub domains: Vec<String>,
    pub seed: u64,
    pub result: ProbeResult,
}

fn embed<T: Real>(
    ckpt: &Checkpoint,
    config: &RunConfig,
    samples: &[Sample],
) -> Result<Vec<Vec<f64>>> {
    let (unet, params): (UNet, NetworkParameters<T>) = ckpt.segmenter(&config.unet)?;
    let images: Vec<_> = samples
        .iter()
        .map(|s| contrast_normalize(&s.image, config.trainer.clahe.as_ref()))
        .collect();
    Ok(extract_embeddings(&unet, &params, &images)?)
}

pub fn probe(args: &ProbeArgs) -> Result<()> {
    check_out_dir(&args.data, &args.out)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let config = analysis_config(&ckpt, args.config.as_deref())?;
    let seed = args.seed.unwrap_or(config.seed);
    let samples = load_samples(&args.data)?;
    let present: BTreeSet<&str> = samples.iter().map(|s| s.domain_id.as_str()).collect();
    let domains: Vec<String> = match args
        .domains
        .clone()
        .or_else(|| config.eval.probe_domains.clone())
    {
        Some(list) => {
            let unique: BTreeSet<&String> = list.iter().collect();
            if unique.len() != list.len() {
                return Err(CliError::Usage(format!(
                    "repeated probe domain in {list:?}"
                )));
            }
            if let Some(missing) = list.iter().find(|d| !present.contains(d.as_str())) {
                return Err(CliError::Data(format!(
                    "probe domain `{missing}` has no samples"
                )));
            }
            list
        }
        None => present.iter().map(|d| d.to_string()).collect(),
    };
    if domains.len() < 2 {
        return Err(CliError::Data(format!(
            "the probe needs at least 2 domains, got {domains:?}"
        )));
    }
    create_dir(&args.out)?;
    write_json(
        &args.out.join("probe_config.json"),
        &ProbeEcho {
            command: "probe",
            checkpoint: &args.checkpoint,
            domains: &domains,
            seed,
            config: &config,
        },
    )?;
    let embeddings = match ckpt.header.dtype {
        Precision::F32 => embed::<f32>(&ckpt, &config, &samples)?,
        Precision::F64 => embed::<f64>(&ckpt, &config, &samples)?,
    };
    let rows: Vec<EmbeddingRow> = samples
        .iter()
        .zip(&embeddings)
        .map(|(s, e)| EmbeddingRow {
            id: &s.id,
            domain: &s.domain_id,
            values: e,
        })
        .collect();
    let path = args.out.join("embeddings.csv");
    fs::write(&path, embeddings_csv(&rows)?).map_err(CliError::io(&path))?;
    let (features, labels): (Vec<Vec<f64>>, Vec<usize>) = samples
        .iter()
        .zip(embeddings)
        .filter_map(|(s, e)| {
            domains
                .iter()
                .position(|d| *d == s.domain_id)
                .map(|l| (e, l))
        })
        .unzip();
    let result = domain_probe(&features, &labels, seed, &config.eval.probe)?;
    println!(
        "probe accuracy {:.4} over {} domains (chance {:.4})",
        result.accuracy, result.domains, result.chance
    );
    let doc = ProbeDocument {
        checkpoint: args.checkpoint.display().to_string(),
        domains,
        seed,
        result,
    };
    write_json(&args.out.join("probe.json"), &doc)
}

/// Output directory a resumed run reads its state from by default.
pub fn default_resume_path(out: &Path) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(LAST_CHECKPOINT)
}
