use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use docent::config::KvConfig;
use docent::dataio::{
    make_splits, read_metadata, read_split, read_split_bundle, write_metadata, write_split, write_split_bundle, MetadataStore,
    SplitTable,
};
use docent::docmodel::PredictionSet;
use docent::evalkit::{
    aggregate, evaluate, export_entity_embeddings, qa_correlation, read_report, render_breakdowns, render_comparison, score_split,
    write_embeddings_csv, write_report, RecallMode,
};
use docent::featbank::{
    featurize_corpus, DirImageSource, DocumentFeatures, Encoders, FeatureCache, HashingTextEncoder, PageImageSource,
    PixelStatsEncoder, SyntheticRaster, TextEncoder, VisualEncoder,
};
use docent::ingest::{extract_layout, ingest_document, parse_article_xml, read_region_dump, AlignmentConfig};
use docent::qgen::{append_records, generate_questions, GeneratorClient, PromptSet, QGenConfig, RemoteClient, RemoteConfig, TemplateGenerator};
use docent::retriever::{
    load_checkpoint, prepare_samples, save_checkpoint, EncoderHashes, GridPatchEmbedder, InputEncoders, PatchEmbedder, PreparedSample,
    Retriever, RetrieverConfig,
};
use docent::trainer::{train, TrainConfig};
use docent::Error;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{Command, Common, EXIT_DATA, EXIT_RUNTIME, EXIT_USAGE};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => EXIT_USAGE,
            CliError::Core(e) if e.is_data() => EXIT_DATA,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

const QGEN_KEYS: &[&str] = &["in_flight", "visual_questions", "id_start", "prompts", "endpoint", "model", "api_key_env", "timeout_secs", "retries"];
const MISC_KEYS: &[&str] = &["similarity_threshold", "split_ratios"];

fn load_config(common: &Common) -> Result<KvConfig> {
    let c = match &common.config {
        Some(p) => {
            need(p)?;
            KvConfig::load(p)?
        }
        None => KvConfig::default(),
    };
    let known: Vec<&str> = RetrieverConfig::KEYS.iter().chain(TrainConfig::KEYS).chain(QGEN_KEYS).chain(MISC_KEYS).copied().collect();
    c.check_known(&known)?;
    let mut c = c;
    if let Some(s) = common.seed {
        c.set("seed", s.to_string());
    }
    if let Some(t) = common.threads {
        c.set("threads", t.to_string());
    }
    Ok(c)
}

fn need(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist", p.display())))
    }
}

fn seed_of(c: &KvConfig) -> Result<u64> {
    Ok(c.parse_value("seed")?.unwrap_or(0))
}

fn threads_of(c: &KvConfig) -> Result<usize> {
    Ok(c.parse_value("threads")?.unwrap_or(1))
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn write_file(p: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_dir(p);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    std::fs::write(p, bytes).map_err(|e| Error::io(p, e).into())
}

fn json_lines<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for i in items {
        serde_json::to_writer(&mut out, i).map_err(Error::from)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Frozen stub encoders plus the page image source.
struct Stubs {
    text: HashingTextEncoder,
    visual: PixelStatsEncoder,
    images: Box<dyn PageImageSource>,
}

impl Stubs {
    fn new(images: Option<&Path>) -> Result<Self> {
        let images: Box<dyn PageImageSource> = match images {
            Some(d) => {
                need(d)?;
                Box::new(DirImageSource { dir: d.to_path_buf(), fallback: SyntheticRaster::default() })
            }
            None => Box::new(SyntheticRaster::default()),
        };
        Ok(Stubs { text: HashingTextEncoder::new(0), visual: PixelStatsEncoder, images })
    }

    fn hashes(&self, cfg: &RetrieverConfig) -> EncoderHashes {
        EncoderHashes {
            text: self.text.version(),
            visual: self.visual.version(),
            images: self.images.version(),
            patch: cfg.uses_patches().then(|| GridPatchEmbedder::new(cfg.patch_grid.0, cfg.patch_grid.1).version()),
        }
    }

    fn input(&self) -> InputEncoders<'_> {
        InputEncoders { text: &self.text, patch: None, images: Some(self.images.as_ref()) }
    }

    fn features(&self, store: &MetadataStore, cfg: &RetrieverConfig, cache: &Path, threads: usize) -> Result<BTreeMap<String, DocumentFeatures>> {
        let enc = Encoders { text: &self.text, visual: &self.visual, images: self.images.as_ref(), fine_grained_cap: cfg.fine_grained_cap };
        let docs: Vec<_> = store.values().collect();
        let cache = FeatureCache::new(cache);
        let feats = featurize_corpus(&docs, &enc, Some(&cache), threads)?;
        Ok(feats.into_iter().map(|f| (f.document_id.clone(), f)).collect())
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { docs, out, common } => synth(docs, &out, &common),
        Command::Ingest { pdf_dir, regions_dir, xml_dir, out, common } => ingest(pdf_dir.as_deref(), regions_dir.as_deref(), &xml_dir, &out, &common),
        Command::Genq { metadata, client, out, records, common } => genq(&metadata, &client, &out, records, &common),
        Command::Split { metadata, questions, out, ratios, common } => split(&metadata, &questions, &out, ratios, &common),
        Command::Train { data, variant, out, scale, epochs, lr, batch_size, images, cache, common } => {
            let mut overrides = Vec::new();
            if let Some(v) = variant {
                overrides.push(("variant", if v == "jg" { "joint_grained".to_string() } else { v }));
            }
            if let Some(s) = scale {
                overrides.push(("scale", s));
            }
            if let Some(e) = epochs {
                overrides.push(("max_epochs", e.to_string()));
            }
            if let Some(l) = lr {
                overrides.push(("learning_rate", l.to_string()));
            }
            if let Some(b) = batch_size {
                overrides.push(("batch_size", b.to_string()));
            }
            train_cmd(&data, &out, &overrides, images.as_deref(), cache, &common)
        }
        Command::Eval { checkpoint, predictions, data, split, report_out, table_out, model_name, recall, images, cache, common } => eval_cmd(
            EvalArgs { checkpoint, predictions, data, split, report_out, table_out, model_name, recall: recall.parse()?, images, cache },
            &common,
        ),
        Command::Report { reports, table_out } => report_cmd(&reports, &table_out),
        Command::Export { checkpoint, data, split, out, qa_out, images, cache, common } => {
            export_cmd(&checkpoint, &data, &split, &out, qa_out.as_deref(), images.as_deref(), cache, &common)
        }
    }
}

fn synth(n: usize, out: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let seed = seed_of(&cfg)?;
    let mut m = RunManifest::start("synth");
    m.seed = Some(seed);
    m.config_path = common.config.clone();
    for doc in docent::synth::synth_corpus(n, seed)? {
        let (pages, xml) = docent::synth::ingest_inputs(&doc);
        let mut json = serde_json::to_string_pretty(&pages).map_err(Error::from)?;
        json.push('\n');
        write_file(&out.join("regions").join(format!("{}.json", doc.document_id)), json.as_bytes())?;
        write_file(&out.join("xml").join(format!("{}.xml", doc.document_id)), xml.as_bytes())?;
    }
    m.output("regions", &out.join("regions"));
    m.output("xml", &out.join("xml"));
    m.finish(out)?;
    println!("wrote {n} synthetic documents to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct IngestLogLine {
    document_id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<docent::ingest::IngestReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn ingest(pdf_dir: Option<&Path>, regions_dir: Option<&Path>, xml_dir: &Path, out: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let align = AlignmentConfig::new(cfg.parse_value("similarity_threshold")?.unwrap_or(AlignmentConfig::default().similarity_threshold))?;
    need(xml_dir)?;
    let layout_dir = pdf_dir.or(regions_dir).ok_or_else(|| CliError::Usage("one of --pdf-dir or --regions-dir is required".into()))?;
    need(layout_dir)?;
    let mut m = RunManifest::start("ingest");
    m.config_path = common.config.clone();
    m.input("xml_dir", xml_dir);
    m.input("layout_dir", layout_dir);

    let mut ids: Vec<String> = std::fs::read_dir(xml_dir)
        .map_err(|e| Error::io(xml_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!("no .xml files in {}", xml_dir.display())).into());
    }
    let mut store = MetadataStore::new();
    let mut log_lines = Vec::new();
    for id in &ids {
        let one = || -> docent::Result<_> {
            let layouts = match pdf_dir {
                Some(d) => {
                    let p = d.join(format!("{id}.pdf"));
                    extract_layout(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?
                }
                None => read_region_dump(&layout_dir.join(format!("{id}.json")))?,
            };
            let xp = xml_dir.join(format!("{id}.xml"));
            let xml = std::fs::read_to_string(&xp).map_err(|e| Error::io(&xp, e))?;
            ingest_document(id, &layouts, &parse_article_xml(&xml)?, &align)
        };
        match one() {
            Ok((doc, report)) => {
                store.insert(id.clone(), doc);
                log_lines.push(IngestLogLine { document_id: id.clone(), status: "ok", report: Some(report), error: None });
            }
            Err(e) => {
                let status = if matches!(e, Error::NoTextLayer) { "skipped" } else { "failed" };
                log::warn!("{id}: {status}: {e}");
                log_lines.push(IngestLogLine { document_id: id.clone(), status, report: None, error: Some(e.to_string()) });
            }
        }
    }
    let dir = parent_dir(out);
    let log_path = dir.join("ingest_log.jsonl");
    write_file(&log_path, &json_lines(&log_lines)?)?;
    m.output("log", &log_path);
    if store.is_empty() {
        m.finish(&dir)?;
        return Err(Error::InvalidInput(format!("all {} documents failed to ingest", ids.len())).into());
    }
    write_metadata(&store, out)?;
    m.output("metadata", out);
    m.finish(&dir)?;
    println!("ingested {} of {} documents into {}", store.len(), ids.len(), out.display());
    Ok(())
}

fn genq(metadata: &Path, client: &str, out: &Path, records: Option<PathBuf>, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    need(metadata)?;
    let seed = seed_of(&cfg)?;
    let store = read_metadata(metadata)?;
    let prompts = match cfg.get("prompts") {
        Some(p) => PromptSet::from_config(&KvConfig::load(Path::new(p))?)?,
        None => PromptSet::default(),
    };
    let defaults = QGenConfig::default();
    let qcfg = QGenConfig {
        in_flight: cfg.parse_value("in_flight")?.unwrap_or(defaults.in_flight),
        visual_questions: cfg.parse_value("visual_questions")?.unwrap_or(defaults.visual_questions),
        id_start: cfg.parse_value("id_start")?.unwrap_or(defaults.id_start),
    };
    let gen: Box<dyn GeneratorClient> = match client {
        "template" => Box::new(TemplateGenerator::new(seed)),
        _ => {
            let d = RemoteConfig::default();
            Box::new(RemoteClient::new(RemoteConfig {
                endpoint: cfg.get("endpoint").map_or(d.endpoint, str::to_string),
                api_key_env: cfg.get("api_key_env").map_or(d.api_key_env, str::to_string),
                model: cfg.get("model").map_or(d.model, str::to_string),
                timeout: cfg.parse_value("timeout_secs")?.map_or(d.timeout, Duration::from_secs),
                retries: cfg.parse_value("retries")?.unwrap_or(d.retries),
                backoff: d.backoff,
            })?)
        }
    };
    let mut m = RunManifest::start("genq");
    m.seed = Some(seed);
    m.config_path = common.config.clone();
    m.input("metadata", metadata);
    m.tool("generator", gen.name());
    m.tool("prompts", prompts.version.clone());
    let docs: Vec<_> = store.values().collect();
    let (samples, recs) = generate_questions(&docs, gen.as_ref(), &prompts, &qcfg)?;
    let n = samples.len();
    write_split(&SplitTable::new(samples), out)?;
    let rec_path = records.unwrap_or_else(|| parent_dir(out).join("qgen_records.jsonl"));
    if rec_path.exists() {
        std::fs::remove_file(&rec_path).map_err(|e| Error::io(&rec_path, e))?;
    }
    append_records(&rec_path, &recs)?;
    m.output("questions", out);
    m.output("records", &rec_path);
    m.finish(&parent_dir(out))?;
    println!("generated {n} questions over {} documents into {}", store.len(), out.display());
    Ok(())
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("ratios {s:?}: {e}")))?;
    match v[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Usage(format!("ratios {s:?}: expected three comma-separated numbers"))),
    }
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

fn split(metadata: &Path, questions: &Path, out: &Path, ratios: Option<String>, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    need(metadata)?;
    need(questions)?;
    let seed = seed_of(&cfg)?;
    let ratios = match ratios.or_else(|| cfg.get("split_ratios").map(str::to_string)) {
        Some(r) => parse_ratios(&r)?,
        None => docent::dataio::default_split_ratios(),
    };
    let store = read_metadata(metadata)?;
    let table = read_split(questions)?;
    if let Some(r) = table.rows.iter().find(|r| !store.contains_key(&r.document_id)) {
        return Err(Error::InvalidInput(format!("question {} refers to unknown document {}", r.id, r.document_id)).into());
    }
    let ids: Vec<String> = store.keys().cloned().collect();
    let splits = make_splits(&ids, ratios, seed)?;
    let mut m = RunManifest::start("split");
    m.seed = Some(seed);
    m.config_path = common.config.clone();
    m.input("metadata", metadata);
    m.input("questions", questions);
    let mut counts = Vec::new();
    for name in SPLITS {
        let docs: BTreeSet<&str> = splits.get(name).expect("known split").iter().map(String::as_str).collect();
        let rows = table.rows.iter().filter(|r| docs.contains(r.document_id.as_str())).cloned().collect();
        let sub: MetadataStore = store.iter().filter(|(k, _)| docs.contains(k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
        let t = SplitTable::new(rows);
        counts.push(format!("{name}: {} documents, {} questions", sub.len(), t.len()));
        write_split_bundle(out, name, &t, &sub)?;
        let (csv, meta) = docent::dataio::split_paths(out, name);
        m.output(&format!("{name}_questions"), &csv);
        m.output(&format!("{name}_metadata"), &meta);
    }
    m.finish(out)?;
    println!("{}", counts.join("\n"));
    Ok(())
}

fn train_cmd(data: &Path, out: &Path, overrides: &[(&str, String)], images: Option<&Path>, cache: Option<PathBuf>, common: &Common) -> Result<()> {
    let mut cfg = load_config(common)?;
    for (k, v) in overrides {
        cfg.set(k, v.clone());
    }
    need(data)?;
    let rcfg = RetrieverConfig::from_kv(&cfg)?;
    let tcfg = TrainConfig::from_kv(&cfg, rcfg.variant)?;
    let stubs = Stubs::new(images)?;
    let (train_t, train_s) = read_split_bundle(data, "train")?;
    let (val_t, val_s) = read_split_bundle(data, "val")?;
    let mut store = train_s;
    store.extend(val_s);
    let cache = cache.unwrap_or_else(|| out.join("features"));
    let feats = stubs.features(&store, &rcfg, &cache, tcfg.threads)?;
    let prep = |t: &SplitTable| prepare_samples(&rcfg, &t.rows, &feats, &store, &stubs.input());
    let (train_p, val_p) = (prep(&train_t)?, prep(&val_t)?);

    let mut m = RunManifest::start("train");
    m.seed = Some(tcfg.seed);
    m.config_path = common.config.clone();
    m.input("data", data);
    let hashes = stubs.hashes(&rcfg);
    m.tool("text_encoder", hashes.text.clone());
    m.tool("visual_encoder", hashes.visual.clone());
    m.tool("images", hashes.images.clone());
    let history = out.join("history.jsonl");
    let model = Retriever::new(rcfg, tcfg.seed)?;
    log::info!("training {} on {} questions, validating on {}", model.config.variant, train_p.len(), val_p.len());
    let outcome = train(model, &train_p, &val_p, &tcfg, hashes, Some(&history))?;
    let ck_path = out.join("model.ckpt");
    save_checkpoint(&ck_path, &outcome.best)?;
    m.output("checkpoint", &ck_path);
    m.output("history", &history);
    m.finish(out)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "best epoch {} of {}: val EM {:.4} PM {:.4} MR {:.4}; checkpoint {}",
        outcome.best_epoch,
        outcome.history.len(),
        best.val_em,
        best.val_pm,
        best.val_mr,
        ck_path.display()
    );
    Ok(())
}

struct EvalArgs {
    checkpoint: Option<PathBuf>,
    predictions: Option<PathBuf>,
    data: PathBuf,
    split: String,
    report_out: PathBuf,
    table_out: Option<PathBuf>,
    model_name: Option<String>,
    recall: RecallMode,
    images: Option<PathBuf>,
    cache: Option<PathBuf>,
}

fn load_model(path: &Path, stubs: &Stubs) -> Result<Retriever> {
    need(path)?;
    let ck = load_checkpoint(path, None)?;
    let want = stubs.hashes(&ck.retriever.config);
    if ck.encoders != want {
        return Err(Error::Checkpoint(format!("checkpoint encoders {:?} differ from the current ones {:?}", ck.encoders, want)).into());
    }
    Ok(ck.retriever)
}

fn read_nonempty_split(data: &Path, split: &str) -> Result<(SplitTable, MetadataStore)> {
    need(data)?;
    let (t, s) = read_split_bundle(data, split)?;
    if t.is_empty() {
        return Err(Error::InvalidInput(format!("split {split} in {} has no questions", data.display())).into());
    }
    Ok((t, s))
}

fn eval_cmd(a: EvalArgs, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let threads = threads_of(&cfg)?;
    let (table, store) = read_nonempty_split(&a.data, &a.split)?;
    let mut m = RunManifest::start("eval");
    m.config_path = common.config.clone();
    m.input("data", &a.data);
    let (name, records, preds) = match (&a.checkpoint, &a.predictions) {
        (Some(ck), _) => {
            let stubs = Stubs::new(a.images.as_deref())?;
            let model = load_model(ck, &stubs)?;
            m.input("checkpoint", ck);
            let cache = a.cache.clone().unwrap_or_else(|| parent_dir(ck).join("features"));
            let feats = stubs.features(&store, &model.config, &cache, threads)?;
            let prepared = prepare_samples(&model.config, &table.rows, &feats, &store, &stubs.input())?;
            let scored = evaluate(&model, &prepared, threads)?;
            let (preds, records): (Vec<_>, Vec<_>) = scored.into_iter().map(|s| (s.prediction, s.result)).unzip();
            (model.config.variant.to_string(), records, preds)
        }
        (None, Some(p)) => {
            need(p)?;
            m.input("predictions", p);
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let preds = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str::<PredictionSet>(l).map_err(Error::from))
                .collect::<docent::Result<Vec<_>>>()?;
            let records = score_split(&table, &preds, &BTreeSet::new())?;
            ("predictions".to_string(), records, preds)
        }
        (None, None) => return Err(CliError::Usage("one of --checkpoint or --predictions is required".into())),
    };
    let report = aggregate(&records, a.model_name.as_deref().unwrap_or(&name), &a.split, a.recall)?;
    write_report(&a.report_out, &report)?;
    m.output("report", &a.report_out);
    if a.checkpoint.is_some() {
        let pp = a.report_out.with_extension("predictions.jsonl");
        write_file(&pp, &json_lines(&preds)?)?;
        m.output("predictions", &pp);
    }
    let text = render_breakdowns(&report);
    if let Some(t) = &a.table_out {
        write_file(t, text.as_bytes())?;
        m.output("table", t);
    }
    m.finish(&parent_dir(&a.report_out))?;
    print!("{text}");
    Ok(())
}

fn report_cmd(reports: &[PathBuf], table_out: &Path) -> Result<()> {
    let mut m = RunManifest::start("report");
    let mut all = Vec::with_capacity(reports.len());
    for (i, p) in reports.iter().enumerate() {
        need(p)?;
        all.push(read_report(p)?);
        m.input(&format!("report_{i}"), p);
    }
    let text = render_comparison(&all);
    write_file(table_out, text.as_bytes())?;
    m.output("table", table_out);
    m.finish(&parent_dir(table_out))?;
    print!("{text}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn export_cmd(checkpoint: &Path, data: &Path, split: &str, out: &Path, qa_out: Option<&Path>, images: Option<&Path>, cache: Option<PathBuf>, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let threads = threads_of(&cfg)?;
    let stubs = Stubs::new(images)?;
    let model = load_model(checkpoint, &stubs)?;
    let (table, store) = read_nonempty_split(data, split)?;
    let cache = cache.unwrap_or_else(|| parent_dir(checkpoint).join("features"));
    let feats = stubs.features(&store, &model.config, &cache, threads)?;
    let mut m = RunManifest::start("export");
    m.config_path = common.config.clone();
    m.input("checkpoint", checkpoint);
    m.input("data", data);
    let fs: Vec<&DocumentFeatures> = feats.values().collect();
    let rows = export_entity_embeddings(&model, &fs, &store, &stubs.input())?;
    write_embeddings_csv(out, &rows)?;
    m.output("embeddings", out);
    if let Some(q) = qa_out {
        let prepared: Vec<PreparedSample> = prepare_samples(&model.config, &table.rows, &feats, &store, &stubs.input())?;
        let c = qa_correlation(&model, &prepared)?;
        let mut text = serde_json::to_string_pretty(&c).map_err(Error::from)?;
        text.push('\n');
        write_file(q, text.as_bytes())?;
        m.output("qa_correlation", q);
        println!("question-answer cosine {:.6} over {} questions ({} skipped)", c.mean_cosine, c.n_used, c.n_skipped);
    }
    m.finish(&parent_dir(out))?;
    println!("wrote {} entity embeddings to {}", rows.len(), out.display());
    Ok(())
}
