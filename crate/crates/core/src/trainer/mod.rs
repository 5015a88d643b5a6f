//! Supervised training of the retriever: per-entity cross-entropy, Adam,
//! per-epoch validation and best-checkpoint selection.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{stable_hash, KvConfig};
use crate::dataio::write_locked;
use crate::error::{Error, Result};
use crate::evalkit::{aggregate, evaluate, MetricReport, RecallMode};
use crate::nn::{Gradients, Graph, Var};
use crate::retriever::{Checkpoint, EncoderHashes, PreparedSample, Retriever, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMetric {
    EM,
    PM,
    MR,
}

impl SelectionMetric {
    pub fn of(&self, r: &MetricReport) -> f64 {
        match self {
            SelectionMetric::EM => r.overall.em,
            SelectionMetric::PM => r.overall.pm,
            SelectionMetric::MR => r.overall.mr,
        }
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "em" => Ok(SelectionMetric::EM),
            "pm" => Ok(SelectionMetric::PM),
            "mr" => Ok(SelectionMetric::MR),
            _ => Err(Error::Config(format!("unknown selection metric {s:?}, expected em|pm|mr"))),
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::EM => "em",
            SelectionMetric::PM => "pm",
            SelectionMetric::MR => "mr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    /// Loss weight of label-1 entities; 1 gives the plain mean.
    pub positive_weight: f64,
    /// Stop once the validation selection metric reaches this value.
    pub target_metric: Option<f64>,
    /// A step loss above this aborts training as diverged.
    pub divergence_ceiling: f64,
    /// Workers for per-sample gradients and validation.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_variant(Variant::Base)
    }
}

impl TrainConfig {
    /// Defaults with the batch size of the variant (32 base and RoI, 16 patch, 8 joint-grained).
    pub fn for_variant(v: Variant) -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            max_epochs: 15,
            batch_size: match v {
                Variant::Base | Variant::Roi => 32,
                Variant::Patch => 16,
                Variant::JointGrained => 8,
            },
            seed: 0,
            selection_metric: SelectionMetric::EM,
            positive_weight: 1.0,
            target_metric: None,
            divergence_ceiling: 1e3,
            threads: 1,
        }
    }

    pub const KEYS: &'static [&'static str] = &[
        "learning_rate",
        "max_epochs",
        "batch_size",
        "seed",
        "selection_metric",
        "positive_weight",
        "target_metric",
        "divergence_ceiling",
        "threads",
    ];

    pub fn from_kv(c: &KvConfig, variant: Variant) -> Result<Self> {
        let mut cfg = TrainConfig::for_variant(variant);
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = c.parse_value(stringify!($field))? {
                    cfg.$field = v;
                }
            };
        }
        take!(learning_rate);
        take!(max_epochs);
        take!(batch_size);
        take!(seed);
        take!(selection_metric);
        take!(positive_weight);
        take!(divergence_ceiling);
        take!(threads);
        if let Some(t) = c.parse_value::<f64>("target_metric")? {
            cfg.target_metric = Some(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (k, v) in [("learning_rate", self.learning_rate), ("positive_weight", self.positive_weight), ("divergence_ceiling", self.divergence_ceiling)] {
            if !(v > 0.0 && v.is_finite()) {
                bad.push(format!("{k} must be positive, got {v}"));
            }
        }
        for (k, v) in [("max_epochs", self.max_epochs), ("batch_size", self.batch_size), ("threads", self.threads)] {
            if v == 0 {
                bad.push(format!("{k} must be positive"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Mean 2-class cross-entropy over rows whose mask is set.
pub fn entity_loss(logits: &Array2<f64>, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let n = logits.nrows();
    if logits.ncols() != 2 || labels.len() != n || mask.len() != n {
        return Err(Error::Shape(format!("{:?} logits, {} labels, {} mask entries", logits.dim(), labels.len(), mask.len())));
    }
    let denom = mask.iter().filter(|m| **m).count();
    if denom == 0 {
        return Err(Error::InvalidInput("every entity is masked".into()));
    }
    let params = Default::default();
    let mut g = Graph::new(&params);
    let l = g.input(logits.clone());
    let w: Vec<f64> = mask.iter().map(|m| *m as u8 as f64).collect();
    let loss = g.cross_entropy(l, labels, &w, denom as f64)?;
    Ok(g.value(loss)[[0, 0]])
}

fn sample_loss(g: &mut Graph, model: &Retriever, p: &PreparedSample, positive_weight: f64, denom: f64) -> Result<Var> {
    let out = model.forward(g, &p.input)?;
    let (labels, weights) = p.targets(positive_weight);
    g.cross_entropy(out.logits, &labels, &weights, denom)
}

fn loss_rows(p: &PreparedSample) -> usize {
    p.labels.len()
}

fn add_into(acc: &mut Gradients, g: Gradients) {
    for (k, v) in g {
        match acc.get_mut(&k) {
            Some(a) => *a += &v,
            None => {
                acc.insert(k, v);
            }
        }
    }
}

/// Batch loss (mean over every loss-bearing entity of the batch) and its gradients.
pub fn batch_gradients(model: &Retriever, batch: &[&PreparedSample], positive_weight: f64, threads: usize) -> Result<(f64, Gradients)> {
    let denom = batch.iter().map(|p| loss_rows(p)).sum::<usize>();
    if denom == 0 {
        return Err(Error::InvalidInput("every entity of the batch is masked".into()));
    }
    let denom = denom as f64;
    let run = |chunk: &[&PreparedSample]| -> Result<(f64, Gradients)> {
        let mut loss = 0.0;
        let mut grads = Gradients::new();
        for p in chunk {
            let mut g = Graph::new(&model.params);
            let l = sample_loss(&mut g, model, p, positive_weight, denom)?;
            loss += g.value(l)[[0, 0]];
            add_into(&mut grads, g.backward(l)?);
        }
        Ok((loss, grads))
    };
    let threads = threads.clamp(1, batch.len().max(1));
    if threads == 1 {
        return run(batch);
    }
    let chunk = batch.len().div_ceil(threads);
    let parts: Vec<Result<(f64, Gradients)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
        handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
    });
    let mut loss = 0.0;
    let mut grads = Gradients::new();
    for p in parts {
        let (l, g) = p?;
        loss += l;
        add_into(&mut grads, g);
    }
    Ok((loss, grads))
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam without weight decay or schedule.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub learning_rate: f64,
    t: i32,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam { learning_rate, ..Default::default() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Parameters without a gradient keep their moments and values.
    pub fn step(&mut self, model: &mut Retriever, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let lr = self.learning_rate;
        for (name, p) in model.params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.to_string()).or_insert_with(|| Array2::zeros(g.dim()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Array2::zeros(g.dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, g| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            });
        }
    }
}

/// One epoch's training loss and validation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_em: f64,
    pub val_pm: f64,
    pub val_mr: f64,
    pub selection: f64,
    pub best: bool,
}

/// Index of the first record with the highest selection value.
pub fn select_best(history: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in history.iter().enumerate() {
        if best.is_none_or(|b| r.selection > history[b].selection) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn diverged(epoch: usize, step: usize, reason: String) -> Error {
    Error::Divergence { epoch, step, reason }
}

/// Trains for at most `max_epochs`, validating after each epoch and keeping
/// the parameters of the best epoch. `history_path` receives one JSON line
/// per epoch, rewritten after every epoch.
pub fn train(
    mut model: Retriever,
    train_set: &[PreparedSample],
    val_set: &[PreparedSample],
    cfg: &TrainConfig,
    encoders: EncoderHashes,
    history_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(format!("train ({}) and validation ({}) splits must be non-empty", train_set.len(), val_set.len())));
    }
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, Retriever)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[b"shuffle", &cfg.seed.to_le_bytes(), &(epoch as u64).to_le_bytes()]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_steps = 0;
        for idx in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&PreparedSample> = idx.iter().map(|i| &train_set[*i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch, cfg.positive_weight, cfg.threads)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, step, format!("loss is {loss}")));
            }
            if loss > cfg.divergence_ceiling {
                return Err(diverged(epoch, step, format!("loss {loss:.4e} above ceiling {:.1e}", cfg.divergence_ceiling)));
            }
            if grads.values().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(diverged(epoch, step, "non-finite gradient".into()));
            }
            adam.step(&mut model, &grads);
            if !model.params.all_finite() {
                return Err(diverged(epoch, step, "non-finite parameter after update".into()));
            }
            loss_sum += loss;
            n_steps += 1;
        }
        let scored = evaluate(&model, val_set, cfg.threads)?;
        let records: Vec<_> = scored.into_iter().map(|s| s.result).collect();
        let report = aggregate(&records, "train", "validation", RecallMode::Macro)?;
        let selection = cfg.selection_metric.of(&report);
        let is_best = best.as_ref().is_none_or(|(b, _)| selection > history[*b - 1].selection);
        if is_best {
            best = Some((epoch, model.clone()));
        }
        let rec = EpochRecord {
            epoch,
            steps: n_steps,
            train_loss: loss_sum / n_steps as f64,
            val_em: report.overall.em,
            val_pm: report.overall.pm,
            val_mr: report.overall.mr,
            selection,
            best: is_best,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val em {:.4} pm {:.4} mr {:.4}{}",
            rec.train_loss,
            rec.val_em,
            rec.val_pm,
            rec.val_mr,
            if is_best { " (best)" } else { "" }
        );
        history.push(rec);
        if let Some(p) = history_path {
            write_history(p, &history)?;
        }
        if cfg.target_metric.is_some_and(|t| selection >= t) {
            break;
        }
    }
    let (best_epoch, retriever) = best.expect("at least one epoch");
    let mut info = BTreeMap::new();
    info.insert("best_epoch".to_string(), best_epoch.to_string());
    info.insert("selection_metric".to_string(), cfg.selection_metric.to_string());
    info.insert("selection_value".to_string(), history[best_epoch - 1].selection.to_string());
    info.insert("seed".to_string(), cfg.seed.to_string());
    info.insert("steps".to_string(), adam.steps().to_string());
    Ok(TrainOutcome { best: Checkpoint { retriever, encoders, info }, best_epoch, history })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in history {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_locked(path, text.as_bytes())
}

/// One sampled scalar of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(|a|, |n|, 1e-8)`.
    pub rel_error: f64,
}

/// Compares analytic gradients of one sample's loss with central differences
/// of step `h` on `n` scalars: each draw picks a tensor uniformly by name, then
/// an element uniformly.
pub fn gradient_check(model: &Retriever, sample: &PreparedSample, n: usize, seed: u64, h: f64) -> Result<Vec<GradCheck>> {
    let denom = loss_rows(sample) as f64;
    if denom == 0.0 {
        return Err(Error::InvalidInput("sample has no loss-bearing entity".into()));
    }
    let loss_of = |m: &Retriever| -> Result<f64> {
        let mut g = Graph::new(&m.params);
        let l = sample_loss(&mut g, m, sample, 1.0, denom)?;
        Ok(g.value(l)[[0, 0]])
    };
    let mut g = Graph::new(&model.params);
    let l = sample_loss(&mut g, model, sample, 1.0, denom)?;
    let grads = g.backward(l)?;
    let names: Vec<String> = model.params.iter().map(|(k, _)| k.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let name = &names[rng.random_range(0..names.len())];
        let (r, c) = model.params.get(name).expect("listed").dim();
        let index = (rng.random_range(0..r), rng.random_range(0..c));
        let orig = model.params.get(name).expect("listed")[index];
        probe.params.get_mut(name).expect("listed")[index] = orig + h;
        let up = loss_of(&probe)?;
        probe.params.get_mut(name).expect("listed")[index] = orig - h;
        let down = loss_of(&probe)?;
        probe.params.get_mut(name).expect("listed")[index] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(name).map_or(0.0, |g| g[index]);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        out.push(GradCheck { name: name.clone(), index, analytic, numeric, rel_error });
    }
    Ok(out)
}
