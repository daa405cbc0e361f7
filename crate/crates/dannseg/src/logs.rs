//! TrainingLog as CSV and as JSON with the run configuration embedded.

use std::fs;
use std::path::Path;

use dannseg_core::train::{EarlyStopChoice, EpochRecord, TrainingLog};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::write_json;
use crate::error::{CliError, Result};

pub const LOG_COLUMNS: [&str; 10] = [
    "epoch",
    "phase",
    "alpha",
    "seg_loss",
    "disc_loss",
    "disc_acc",
    "dice_lv",
    "dice_myo",
    "dice_rv",
    "checkpoint_path",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDocument {
    pub config: RunConfig,
    /// Discriminator domain ids in label order.
    pub domains: Vec<String>,
    pub records: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<EarlyStopChoice>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text of a log; missing values are empty fields.
pub fn log_csv(log: &TrainingLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Data(format!("writing log CSV: {e}"));
    w.write_record(LOG_COLUMNS).map_err(fail)?;
    for r in &log.records {
        let [lv, myo, rv] = r.dice.map_or([None; 3], |d| d.map(Some));
        w.write_record([
            r.epoch.to_string(),
            r.phase.to_string(),
            r.alpha.to_string(),
            opt(r.seg_loss),
            opt(r.disc_loss),
            opt(r.disc_acc),
            opt(lv),
            opt(myo),
            opt(rv),
            r.checkpoint.clone().unwrap_or_default(),
        ])
        .map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Data(format!("writing log CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

/// Parse a log CSV written by [`log_csv`].
pub fn parse_log_csv(text: &str) -> Result<TrainingLog> {
    let bad = |m: String| CliError::Data(format!("malformed log CSV: {m}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| bad(e.to_string()))?;
    if headers.iter().ne(LOG_COLUMNS) {
        return Err(bad(format!("columns {headers:?}")));
    }
    let num = |s: &str, col: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| bad(format!("{col} value {s:?}")))
    };
    let mut log = TrainingLog::default();
    for row in r.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let dice = match (
            num(&row[6], "dice_lv")?,
            num(&row[7], "dice_myo")?,
            num(&row[8], "dice_rv")?,
        ) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            (None, None, None) => None,
            _ => return Err(bad("partial Dice triple".into())),
        };
        log.push(EpochRecord {
            epoch: row[0]
                .parse()
                .map_err(|_| bad(format!("epoch {:?}", &row[0])))?,
            phase: row[1]
                .parse()
                .map_err(|_| bad(format!("phase {:?}", &row[1])))?,
            alpha: num(&row[2], "alpha")?.ok_or_else(|| bad("empty alpha".into()))?,
            seg_loss: num(&row[3], "seg_loss")?,
            disc_loss: num(&row[4], "disc_loss")?,
            disc_acc: num(&row[5], "disc_acc")?,
            dice,
            checkpoint: (!row[9].is_empty()).then(|| row[9].to_string()),
        });
    }
    Ok(log)
}

/// Write `training_log.csv` and `training_log.json` into `dir`.
pub fn write_log(dir: &Path, doc: &LogDocument) -> Result<()> {
    let log = TrainingLog {
        records: doc.records.clone(),
    };
    let path = dir.join("training_log.csv");
    fs::write(&path, log_csv(&log)?).map_err(CliError::io(&path))?;
    write_json(&dir.join("training_log.json"), doc)
}
