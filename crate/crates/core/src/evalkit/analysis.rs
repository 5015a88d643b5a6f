use std::path::Path;

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use super::{score_question, MetricResult};
use crate::dataio::{write_locked, MetadataStore};
use crate::docmodel::{EntityCategory, PredictionSet};
use crate::error::{Error, Result};
use crate::featbank::DocumentFeatures;
use crate::retriever::{document_inputs, InputEncoders, PreparedSample, Retriever};

/// Prediction and score of one prepared question.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub prediction: PredictionSet,
    pub result: MetricResult,
}

/// Predicts and scores every sample on up to `threads` workers; output
/// follows input order.
pub fn evaluate(model: &Retriever, samples: &[PreparedSample], threads: usize) -> Result<Vec<Scored>> {
    let one = |p: &PreparedSample| -> Result<Scored> {
        let (prediction, _) = model.predict(&p.input)?;
        let result = score_question(&p.sample, &prediction.predicted_ids, p.scorable)?;
        Ok(Scored { prediction, result })
    };
    let threads = threads.max(1);
    if threads == 1 || samples.len() < 2 {
        return samples.iter().map(one).collect();
    }
    let chunk = samples.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Scored>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples.chunks(chunk).map(|c| s.spawn(move || c.iter().map(one).collect())).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Question used when exporting embeddings: empty, so every encoder sees its
/// empty-text sentinel.
pub const PROBE_QUESTION: &str = "";

/// Final decoder row of one entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub document_id: String,
    pub object_id: u32,
    pub category: EntityCategory,
    pub embedding: Vec<f64>,
}

/// One row per entity of every document, in document then reading order.
pub fn export_entity_embeddings(
    model: &Retriever,
    features: &[&DocumentFeatures],
    docs: &MetadataStore,
    enc: &InputEncoders,
) -> Result<Vec<EmbeddingRow>> {
    let mut out = Vec::new();
    for f in features {
        for input in document_inputs(&model.config, f, docs, enc, PROBE_QUESTION)? {
            let (e, _) = model.embeddings(&input)?;
            for (row, id) in e.axis_iter(Axis(0)).zip(&input.object_ids) {
                let ent = f.entity(*id).ok_or(Error::UnknownEntity(*id))?;
                out.push(EmbeddingRow {
                    document_id: f.document_id.clone(),
                    object_id: *id,
                    category: ent.category,
                    embedding: row.to_vec(),
                });
            }
        }
    }
    Ok(out)
}

/// `document_id,object_id,category,e0,e1,...`
pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.embedding.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Csv { row: 0, message: e.to_string() };
    let mut header = vec!["document_id".to_string(), "object_id".to_string(), "category".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.document_id.clone(), r.object_id.to_string(), r.category.as_str().to_string()];
        rec.extend(r.embedding.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv { row: 0, message: e.to_string() })?;
    write_locked(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaCorrelation {
    pub mean_cosine: f64,
    pub n_used: usize,
    /// Pairs dropped for a zero-norm vector or no gold entity in the input.
    pub n_skipped: usize,
}

/// Mean cosine over the pairs, skipping any with a zero-norm side.
pub fn cosine_mean<I: IntoIterator<Item = (Array1<f64>, Array1<f64>)>>(pairs: I) -> Result<QaCorrelation> {
    let (mut sum, mut used, mut skipped) = (0.0, 0, 0);
    for (a, b) in pairs {
        let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
        if na == 0.0 || nb == 0.0 {
            log::warn!("zero-norm vector in cosine correlation, pair skipped");
            skipped += 1;
            continue;
        }
        sum += a.dot(&b) / (na * nb);
        used += 1;
    }
    if used + skipped == 0 {
        return Err(Error::InvalidInput("no question-answer pairs".into()));
    }
    Ok(QaCorrelation { mean_cosine: if used == 0 { 0.0 } else { sum / used as f64 }, n_used: used, n_skipped: skipped })
}

/// Cosine between the pooled encoded question and the mean decoder row of
/// the gold entities present in the input, averaged over questions.
pub fn qa_correlation(model: &Retriever, samples: &[PreparedSample]) -> Result<QaCorrelation> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty split".into()));
    }
    let mut pairs = Vec::with_capacity(samples.len());
    let mut missing = 0;
    for p in samples {
        let gold: Vec<usize> = p.labels.iter().enumerate().filter(|(_, l)| **l == 1).map(|(i, _)| i).collect();
        if gold.is_empty() {
            log::warn!("question {}: no gold entity in the model input, skipped", p.sample.id);
            missing += 1;
            continue;
        }
        let (e, q) = model.embeddings(&p.input)?;
        let target = e.select(Axis(0), &gold).mean_axis(Axis(0)).expect("gold rows");
        pairs.push((q, target));
    }
    let mut c = if pairs.is_empty() {
        QaCorrelation { mean_cosine: 0.0, n_used: 0, n_skipped: 0 }
    } else {
        cosine_mean(pairs)?
    };
    c.n_skipped += missing;
    Ok(c)
}
