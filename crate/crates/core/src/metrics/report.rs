use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::mann_whitney::{mann_whitney_u, MannWhitney, MwMethod};
use super::overlap::{dice, hausdorff_mm};
use super::probe::ProbeResult;
use super::window::{sliding_window_predict, Predictor};
use crate::data::{contrast_normalize, ClaheConfig, Sample, CLASS_NAMES};
use crate::error::{Error, Result};

/// Group label of the all-domain aggregate.
pub const ALL_DOMAINS: &str = "All";

/// Metrics of one labelled sample, one entry per foreground class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub domain: String,
    pub dice: Vec<f64>,
    /// `None` when the class is missing from the prediction or the truth.
    pub hausdorff_mm: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    pub dice_mean: f64,
    pub dice_sd: f64,
    pub hausdorff_mean: Option<f64>,
    pub hausdorff_sd: Option<f64>,
    /// Samples whose Hausdorff distance was undefined.
    pub hausdorff_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub count: usize,
    pub classes: Vec<ClassStats>,
    /// Mean over classes of the per-class mean Dice.
    pub mean_foreground_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub group: String,
    pub class: String,
    pub metric: String,
    pub test: MannWhitney,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<SampleMetrics>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default)]
    pub probe: Option<ProbeResult>,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

/// Mean and sample standard deviation (`n − 1`; zero for one value).
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

fn foreground_names() -> impl Iterator<Item = &'static str> {
    CLASS_NAMES[1..].iter().copied()
}

fn aggregate(group: &str, rows: &[&SampleMetrics]) -> Aggregate {
    let classes: Vec<ClassStats> = foreground_names()
        .enumerate()
        .map(|(c, name)| {
            let d: Vec<f64> = rows.iter().map(|r| r.dice[c]).collect();
            let h: Vec<f64> = rows.iter().filter_map(|r| r.hausdorff_mm[c]).collect();
            let (dice_mean, dice_sd) = mean_sd(&d);
            let (hm, hs) = if h.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sd(&h);
                (Some(m), Some(s))
            };
            ClassStats {
                class: name.to_string(),
                dice_mean,
                dice_sd,
                hausdorff_mean: hm,
                hausdorff_sd: hs,
                hausdorff_excluded: rows.len() - h.len(),
            }
        })
        .collect();
    let mean_foreground_dice =
        classes.iter().map(|c| c.dice_mean).sum::<f64>() / classes.len() as f64;
    Aggregate {
        group: group.to_string(),
        count: rows.len(),
        classes,
        mean_foreground_dice,
    }
}

impl MetricsReport {
    /// Per-domain aggregates in domain order, then the all-domain row.
    pub fn from_rows(rows: Vec<SampleMetrics>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InsufficientSamples(
                "no labelled samples to evaluate".into(),
            ));
        }
        let aggregates = Self::aggregate_rows(&rows);
        Ok(Self {
            rows,
            aggregates,
            probe: None,
            comparisons: Vec::new(),
        })
    }

    fn aggregate_rows(rows: &[SampleMetrics]) -> Vec<Aggregate> {
        let domains: BTreeSet<&str> = rows.iter().map(|r| r.domain.as_str()).collect();
        let mut out: Vec<Aggregate> = domains
            .iter()
            .map(|d| {
                let sel: Vec<&SampleMetrics> = rows.iter().filter(|r| r.domain == *d).collect();
                aggregate(d, &sel)
            })
            .collect();
        out.push(aggregate(ALL_DOMAINS, &rows.iter().collect::<Vec<_>>()));
        out
    }

    /// True when every aggregate equals its recomputation from the rows.
    pub fn is_consistent(&self) -> bool {
        Self::aggregate_rows(&self.rows) == self.aggregates
    }

    pub fn aggregate(&self, group: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == group)
    }

    /// Per-group, per-class Mann-Whitney tests of Dice and defined
    /// Hausdorff values of this report against `other`, matching groups
    /// by name.
    pub fn compare(&mut self, other: &MetricsReport, method: MwMethod) -> Result<()> {
        let mut out = Vec::new();
        for agg in &self.aggregates {
            let select = |rows: &[SampleMetrics]| -> Vec<SampleMetrics> {
                rows.iter()
                    .filter(|r| agg.group == ALL_DOMAINS || r.domain == agg.group)
                    .cloned()
                    .collect()
            };
            let (a, b) = (select(&self.rows), select(&other.rows));
            if b.is_empty() {
                continue;
            }
            for (c, name) in foreground_names().enumerate() {
                let da: Vec<f64> = a.iter().map(|r| r.dice[c]).collect();
                let db: Vec<f64> = b.iter().map(|r| r.dice[c]).collect();
                out.push(Comparison {
                    group: agg.group.clone(),
                    class: name.to_string(),
                    metric: "dice".to_string(),
                    test: mann_whitney_u(&da, &db, method)?,
                });
                let ha: Vec<f64> = a.iter().filter_map(|r| r.hausdorff_mm[c]).collect();
                let hb: Vec<f64> = b.iter().filter_map(|r| r.hausdorff_mm[c]).collect();
                if !ha.is_empty() && !hb.is_empty() {
                    out.push(Comparison {
                        group: agg.group.clone(),
                        class: name.to_string(),
                        metric: "hausdorff".to_string(),
                        test: mann_whitney_u(&ha, &hb, method)?,
                    });
                }
            }
        }
        self.comparisons = out;
        Ok(())
    }
}

/// Predict every labelled sample with sliding windows and score it.
/// Unlabelled samples are skipped.
pub fn evaluate_samples<P: Predictor + ?Sized>(
    predictor: &P,
    samples: &[&Sample],
    clahe: Option<&ClaheConfig>,
) -> Result<Vec<SampleMetrics>> {
    let mut rows = Vec::new();
    for s in samples {
        let Some(truth) = &s.mask else { continue };
        let input = contrast_normalize(&s.image, clahe);
        let pred = sliding_window_predict(predictor, &input)?.argmax();
        let mut d = Vec::new();
        let mut h = Vec::new();
        for class in 1..CLASS_NAMES.len() as u8 {
            d.push(dice(&pred, truth, class)?);
            h.push(hausdorff_mm(&pred, truth, class, s.spacing)?);
        }
        rows.push(SampleMetrics {
            id: s.id.clone(),
            domain: s.domain_id.clone(),
            dice: d,
            hausdorff_mm: h,
        });
    }
    Ok(rows)
}
