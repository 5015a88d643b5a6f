//! Set-based answer metrics, aggregation with Super-Section and page-range
//! breakdowns, report rendering, and embedding analyses.

mod analysis;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::SplitTable;
use crate::docmodel::{PredictionSet, QASample, SuperSection};
use crate::error::{Error, Result};

pub use analysis::{
    cosine_mean, evaluate, export_entity_embeddings, qa_correlation, write_embeddings_csv, EmbeddingRow, QaCorrelation,
    Scored, PROBE_QUESTION,
};
pub use report::{read_report, render_breakdowns, render_comparison, write_report};

fn check_gt(gt: &BTreeSet<u32>) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::InvalidInput("gold answer set is empty".into()));
    }
    Ok(())
}

/// 1 iff the sets are equal.
pub fn exact_match(pred: &BTreeSet<u32>, gt: &BTreeSet<u32>) -> Result<u8> {
    check_gt(gt)?;
    Ok((pred == gt) as u8)
}

/// 1 iff `pred` is a non-empty subset of `gt`.
pub fn partial_match(pred: &BTreeSet<u32>, gt: &BTreeSet<u32>) -> Result<u8> {
    check_gt(gt)?;
    Ok((!pred.is_empty() && pred.is_subset(gt)) as u8)
}

/// `|pred ∩ gt| / |gt|`.
pub fn multilabel_recall(pred: &BTreeSet<u32>, gt: &BTreeSet<u32>) -> Result<f64> {
    check_gt(gt)?;
    Ok(pred.intersection(gt).count() as f64 / gt.len() as f64)
}

/// Page-range width bucket, 1..=9 with wider ranges folded into 9.
pub fn page_bucket(n_pages: usize) -> usize {
    n_pages.clamp(1, 9)
}

/// Scores of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub question_id: u64,
    pub em: u8,
    pub pm: u8,
    pub mr: f64,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub super_section: SuperSection,
    pub n_pages: usize,
    /// False when gold entities were cut from the model input; such questions
    /// leave the EM/PM denominators and score mr = 0.
    pub scorable: bool,
}

/// Scores one prediction against its sample.
pub fn score_question(sample: &QASample, pred: &BTreeSet<u32>, scorable: bool) -> Result<MetricResult> {
    let gt = &sample.answer_objt_ids;
    check_gt(gt)?;
    let tp = pred.intersection(gt).count();
    let base = MetricResult {
        question_id: sample.id,
        em: 0,
        pm: 0,
        mr: 0.0,
        tp: 0,
        fn_: gt.len(),
        fp: pred.difference(gt).count(),
        super_section: sample.super_section,
        n_pages: sample.n_pages(),
        scorable,
    };
    if !scorable {
        return Ok(base);
    }
    Ok(MetricResult {
        em: exact_match(pred, gt)?,
        pm: partial_match(pred, gt)?,
        mr: multilabel_recall(pred, gt)?,
        tp,
        fn_: gt.len() - tp,
        ..base
    })
}

/// Scores predictions against a split; every row needs exactly one prediction.
pub fn score_split(table: &SplitTable, preds: &[PredictionSet], unscorable: &BTreeSet<u64>) -> Result<Vec<MetricResult>> {
    let mut by_id = BTreeMap::new();
    for p in preds {
        if by_id.insert(p.question_id, &p.predicted_ids).is_some() {
            return Err(Error::InvalidInput(format!("duplicate prediction for question {}", p.question_id)));
        }
    }
    let out = table
        .rows
        .iter()
        .map(|s| {
            let pred = by_id
                .remove(&s.id)
                .ok_or_else(|| Error::InvalidInput(format!("no prediction for question {}", s.id)))?;
            score_question(s, pred, !unscorable.contains(&s.id))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(id) = by_id.keys().next() {
        return Err(Error::InvalidInput(format!("prediction for unknown question {id}")));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    /// Mean of per-question recall.
    #[default]
    Macro,
    /// Pooled `ΣTP / Σ(TP + FN)`.
    Micro,
}

impl FromStr for RecallMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(RecallMode::Macro),
            "micro" => Ok(RecallMode::Micro),
            _ => Err(Error::Config(format!("unknown recall mode {s:?}, expected macro|micro"))),
        }
    }
}

impl fmt::Display for RecallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecallMode::Macro => "macro",
            RecallMode::Micro => "micro",
        })
    }
}

/// Aggregates of a group of questions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// All questions of the group.
    pub n: usize,
    /// Questions in the EM/PM denominators.
    pub n_scored: usize,
    pub em: f64,
    pub pm: f64,
    pub mr: f64,
}

#[derive(Debug, Default)]
struct Acc {
    n: usize,
    n_scored: usize,
    em: usize,
    pm: usize,
    mr_sum: f64,
    tp: usize,
    gold: usize,
}

impl Acc {
    fn add(&mut self, r: &MetricResult) {
        self.n += 1;
        if r.scorable {
            self.n_scored += 1;
            self.em += r.em as usize;
            self.pm += r.pm as usize;
        }
        self.mr_sum += r.mr;
        self.tp += r.tp;
        self.gold += r.tp + r.fn_;
    }

    fn ratio(num: f64, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num / den as f64
        }
    }

    fn macro_mr(&self) -> f64 {
        Acc::ratio(self.mr_sum, self.n)
    }

    fn micro_mr(&self) -> f64 {
        Acc::ratio(self.tp as f64, self.gold)
    }

    fn cell(&self, mode: RecallMode) -> Cell {
        Cell {
            n: self.n,
            n_scored: self.n_scored,
            em: Acc::ratio(self.em as f64, self.n_scored),
            pm: Acc::ratio(self.pm as f64, self.n_scored),
            mr: match mode {
                RecallMode::Macro => self.macro_mr(),
                RecallMode::Micro => self.micro_mr(),
            },
        }
    }
}

/// Aggregate scores of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub split: String,
    pub recall_mode: RecallMode,
    pub overall: Cell,
    pub mr_macro: f64,
    pub mr_micro: f64,
    pub n_unscorable: usize,
    pub by_super_section: BTreeMap<SuperSection, Cell>,
    pub by_pages: BTreeMap<usize, Cell>,
    pub notes: Vec<String>,
}

/// One pass over the records. Errors on an empty list or a repeated question id.
pub fn aggregate(records: &[MetricResult], model: &str, split: &str, mode: RecallMode) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("no questions to aggregate for split {split}")));
    }
    let mut seen = HashSet::new();
    let mut all = Acc::default();
    let mut by_ss: BTreeMap<SuperSection, Acc> = BTreeMap::new();
    let mut by_pages: BTreeMap<usize, Acc> = BTreeMap::new();
    for r in records {
        if !seen.insert(r.question_id) {
            return Err(Error::InvalidInput(format!("duplicate question id {}", r.question_id)));
        }
        all.add(r);
        by_ss.entry(r.super_section).or_default().add(r);
        by_pages.entry(page_bucket(r.n_pages)).or_default().add(r);
    }
    let n_unscorable = all.n - all.n_scored;
    let mut notes = vec![format!("MR is the {mode} mean")];
    if n_unscorable > 0 {
        notes.push(format!(
            "{n_unscorable} of {} questions lost gold entities to input truncation; excluded from EM/PM, scored mr = 0",
            all.n
        ));
    }
    Ok(MetricReport {
        model: model.to_string(),
        split: split.to_string(),
        recall_mode: mode,
        overall: all.cell(mode),
        mr_macro: all.macro_mr(),
        mr_micro: all.micro_mr(),
        n_unscorable,
        by_super_section: by_ss.into_iter().map(|(k, a)| (k, a.cell(mode))).collect(),
        by_pages: by_pages.into_iter().map(|(k, a)| (k, a.cell(mode))).collect(),
        notes,
    })
}
