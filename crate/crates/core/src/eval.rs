//! Confusion counts, precision / recall / F-measure, and aggregation over
//! frames, sequences and categories.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{GroundTruthFrame, Label};
use crate::error::{shape_err, Error, Result};
use crate::mask::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Neither the prediction nor the ground truth contains foreground.
    pub fn is_empty_frame(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Counts over pixels whose ground-truth label is not `Ignore`.
pub fn confusion(pred: &BinaryMask, gt: &GroundTruthFrame) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(shape_err(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in pred.bits().iter().zip(gt.labels()) {
        match (l, p == 1) {
            (Label::Ignore, _) => {}
            (Label::Foreground, true) => c.tp += 1,
            (Label::Foreground, false) => c.fn_ += 1,
            (Label::Background, true) => c.fp += 1,
            (Label::Background, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Precision, recall and F-measure; every zero denominator scores 0.
pub fn metrics(c: &ConfusionCounts) -> Scores {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    // 2PR / (P + R) written in counts, which avoids compounding rounding
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
    };
    Scores {
        precision,
        recall,
        f_measure,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Average of per-frame scores.
    #[default]
    MeanOfFrames,
    /// Scores of the summed counts.
    PooledCounts,
}

/// Aggregates per-frame counts into one set of scores.
///
/// Under `MeanOfFrames`, frames where both prediction and ground truth are
/// empty carry no information and are left out of the average; if every
/// frame is such a frame, all scores are 0.
pub fn aggregate(frames: &[ConfusionCounts], mode: Aggregation) -> Result<Scores> {
    if frames.is_empty() {
        return Err(Error::Parameter("cannot aggregate an empty list of frames".into()));
    }
    Ok(match mode {
        Aggregation::PooledCounts => metrics(&frames.iter().copied().fold(ConfusionCounts::default(), |a, b| a + b)),
        Aggregation::MeanOfFrames => {
            let scored: Vec<Scores> = frames.iter().filter(|c| !c.is_empty_frame()).map(metrics).collect();
            mean_scores(&scored)
        }
    })
}

/// Component-wise mean; zeros for an empty slice.
pub fn mean_scores(scores: &[Scores]) -> Scores {
    if scores.is_empty() {
        return Scores::default();
    }
    let n = scores.len() as f64;
    Scores {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f_measure: scores.iter().map(|s| s.f_measure).sum::<f64>() / n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub index: usize,
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

impl FrameEval {
    pub fn new(index: usize, counts: ConfusionCounts) -> Self {
        Self {
            index,
            counts,
            scores: metrics(&counts),
        }
    }
}

/// One method's results on one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEval {
    pub sequence: String,
    pub category: String,
    pub method: String,
    pub frames: Vec<FrameEval>,
    pub summary: Scores,
}

impl SequenceEval {
    pub fn new(
        sequence: impl Into<String>,
        category: impl Into<String>,
        method: impl Into<String>,
        frames: Vec<FrameEval>,
        mode: Aggregation,
    ) -> Result<Self> {
        let counts: Vec<ConfusionCounts> = frames.iter().map(|f| f.counts).collect();
        let summary = aggregate(&counts, mode)?;
        Ok(Self {
            sequence: sequence.into(),
            category: category.into(),
            method: method.into(),
            frames,
            summary,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregation: Aggregation,
    pub sequences: Vec<SequenceEval>,
    /// category → method → mean of that category's sequence scores.
    pub categories: BTreeMap<String, BTreeMap<String, Scores>>,
    /// method → mean over categories.
    pub overall: BTreeMap<String, Scores>,
}

impl EvalReport {
    pub fn new(aggregation: Aggregation, sequences: Vec<SequenceEval>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Parameter("no evaluated sequences".into()));
        }
        let mut grouped: BTreeMap<String, BTreeMap<String, Vec<Scores>>> = BTreeMap::new();
        for s in &sequences {
            grouped
                .entry(s.category.clone())
                .or_default()
                .entry(s.method.clone())
                .or_default()
                .push(s.summary);
        }
        let categories: BTreeMap<String, BTreeMap<String, Scores>> = grouped
            .into_iter()
            .map(|(cat, methods)| (cat, methods.into_iter().map(|(m, v)| (m, mean_scores(&v))).collect()))
            .collect();
        let mut per_method: BTreeMap<String, Vec<Scores>> = BTreeMap::new();
        for methods in categories.values() {
            for (m, s) in methods {
                per_method.entry(m.clone()).or_default().push(*s);
            }
        }
        let overall = per_method.into_iter().map(|(m, v)| (m, mean_scores(&v))).collect();
        Ok(Self {
            aggregation,
            sequences,
            categories,
            overall,
        })
    }

    pub fn methods(&self) -> Vec<String> {
        self.overall.keys().cloned().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table of F-measures: one row per category plus an average row,
    /// one column per method.
    pub fn to_table(&self) -> String {
        let methods = self.methods();
        let first = self
            .categories
            .keys()
            .map(String::len)
            .chain(["category".len(), "average".len()])
            .max()
            .unwrap_or(8);
        let widths: Vec<usize> = methods.iter().map(|m| m.len().max(6)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "category");
        for (m, w) in methods.iter().zip(&widths) {
            let _ = write!(out, "  {m:>w$}");
        }
        out.push('\n');
        let row = |out: &mut String, name: &str, scores: &BTreeMap<String, Scores>| {
            let _ = write!(out, "{name:<first$}");
            for (m, w) in methods.iter().zip(&widths) {
                match scores.get(m) {
                    Some(s) => {
                        let _ = write!(out, "  {:>w$.4}", s.f_measure);
                    }
                    None => {
                        let _ = write!(out, "  {:>w$}", "-");
                    }
                }
            }
            out.push('\n');
        };
        for (cat, scores) in &self.categories {
            row(&mut out, cat, scores);
        }
        row(&mut out, "average", &self.overall);
        out
    }
}
