//! Question generation: paragraph questions sized by sentence count, and
//! table/figure questions built from a caption summary, both filtered by
//! fixed quality heuristics.

mod client;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::docmodel::{section_page_span, DocEntity, DocumentRecord, EntityCategory, QASample, SuperSection};
use crate::error::{Error, Result};
use crate::ingest::{map_super_section, pair_visual_captions};

pub use client::{
    parse_completion_items, GenerationRequest, GeneratorClient, RemoteClient, RemoteConfig, TaskKind, TemplateGenerator,
};

/// Words a kept question may start with when it lacks a question mark.
const INTERROGATIVE_LEADS: &[&str] = &[
    "what", "which", "who", "whom", "whose", "when", "where", "why", "how", "can", "could", "does", "do", "did", "is",
    "are", "was", "were", "will", "would", "should", "may", "might", "has", "have", "had",
];
/// Phrases that point at layout instead of content.
const POSITIONAL_PHRASES: &[&str] = &["this paragraph"];
const POSITIONAL_WORDS: &[&str] = &["above", "below"];
const MIN_QUESTION_TOKENS: usize = 5;
/// Words that mark a question as being about a visual entity.
pub const VISUAL_LEXICON: &[&str] = &["table", "figure", "graphic", "diagram", "chart", "plot", "image", "illustration"];

/// Sentences split after `.`, `!` or `?` when followed by whitespace and a
/// capital, digit, or opening bracket/quote, or by the end of the text.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start = 0;
    for (k, &(i, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let end = i + c.len_utf8();
        let next = chars[k + 1..].iter().find(|(_, c)| !c.is_whitespace());
        let had_space = chars.get(k + 1).is_some_and(|(_, c)| c.is_whitespace());
        let boundary = match next {
            None => true,
            Some((_, n)) => had_space && (n.is_uppercase() || n.is_ascii_digit() || matches!(n, '(' | '[' | '"' | '\'')),
        };
        if boundary {
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// Number of questions for a paragraph: 1 for up to 3 sentences, 2 for 4 to 6, 3 beyond.
pub fn question_quota(paragraph_text: &str) -> Result<usize> {
    let n = split_sentences(paragraph_text).len();
    match n {
        0 => Err(Error::InvalidInput("paragraph text is empty".into())),
        1..=3 => Ok(1),
        4..=6 => Ok(2),
        _ => Ok(3),
    }
}

/// Removes a leading "Figure 2." / "Table S1:" style label.
pub fn strip_caption_label(caption: &str) -> &str {
    let t = caption.trim_start();
    let mut parts = t.splitn(3, char::is_whitespace);
    let (Some(kind), Some(number)) = (parts.next(), parts.next()) else {
        return t;
    };
    let kind_l = kind.trim_end_matches('.').to_lowercase();
    let is_kind = matches!(kind_l.as_str(), "figure" | "fig" | "table" | "tab" | "scheme" | "chart");
    if !is_kind || !number.chars().any(|c| c.is_ascii_digit()) {
        return t;
    }
    let rest = &t[kind.len()..].trim_start()[number.len()..];
    rest.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ':' | '|' | '-' | '\u{2013}' | '\u{2014}'))
}

fn normalize_question(q: &str) -> String {
    q.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ").trim_end_matches(['?', '.', '!']).trim().to_string()
}

/// Why a candidate question was dropped, if it was.
pub fn rejection_reason(q: &str) -> Option<&'static str> {
    let norm = normalize_question(q);
    let words: Vec<&str> = norm.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    if q.split_whitespace().count() < MIN_QUESTION_TOKENS {
        return Some("too short");
    }
    let lead = words.first().copied().unwrap_or("");
    if !q.trim_end().ends_with('?') && !INTERROGATIVE_LEADS.contains(&lead) {
        return Some("not a question");
    }
    if POSITIONAL_PHRASES.iter().any(|p| norm.contains(p)) || words.iter().any(|w| POSITIONAL_WORDS.contains(w)) {
        return Some("positional reference");
    }
    None
}

/// Drops normalized duplicates, short questions, non-questions, and
/// positional references. Keeps first occurrences in order.
pub fn filter_questions(candidates: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for q in candidates {
        let q = q.trim();
        if rejection_reason(q).is_some() {
            continue;
        }
        if seen.insert(normalize_question(q)) {
            kept.push(q.to_string());
        }
    }
    kept
}

/// Versioned prompt templates with `{text}` and `{n}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub version: String,
    pub paragraph: String,
    pub caption_summary: String,
    pub table: String,
    pub figure: String,
}

const DEFAULT_PROMPTS: &str = include_str!("../../assets/prompts.conf");

impl PromptSet {
    pub fn from_config(c: &KvConfig) -> Result<Self> {
        c.check_known(&["version", "paragraph", "caption_summary", "table", "figure"])?;
        let get = |k: &str| c.get(k).map(str::to_string).ok_or_else(|| Error::Config(format!("prompt set lacks {k}")));
        Ok(PromptSet {
            version: get("version")?,
            paragraph: get("paragraph")?,
            caption_summary: get("caption_summary")?,
            table: get("table")?,
            figure: get("figure")?,
        })
    }

    fn render(template: &str, text: &str, n: usize) -> String {
        template.replace("{n}", &n.to_string()).replace("{text}", text)
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::from_config(&KvConfig::parse(DEFAULT_PROMPTS).expect("bundled prompts parse")).expect("bundled prompts complete")
    }
}

/// Candidate questions for one paragraph (all of its split parts).
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphQuestions {
    pub entity_ids: BTreeSet<u32>,
    pub prompt: String,
    pub questions: Vec<String>,
}

/// Asks the client for up to `quota` questions on a paragraph whose split parts are `parts`.
pub fn generate_paragraph_questions(
    parts: &[&DocEntity],
    quota: usize,
    client: &dyn GeneratorClient,
    prompts: &PromptSet,
) -> Result<ParagraphQuestions> {
    if !(1..=3).contains(&quota) {
        return Err(Error::InvalidInput(format!("quota {quota} outside 1..=3")));
    }
    if parts.is_empty() || parts.iter().any(|p| p.category != EntityCategory::Paragraph) {
        return Err(Error::InvalidInput("paragraph questions need Paragraph entities".into()));
    }
    let text = paragraph_text(parts);
    let prompt = PromptSet::render(&prompts.paragraph, &text, quota);
    let request = GenerationRequest { task: TaskKind::ParagraphQuestions, payload: text, prompt: prompt.clone(), max_items: quota };
    let mut questions = client.generate(&request)?;
    questions.truncate(quota);
    Ok(ParagraphQuestions { entity_ids: parts.iter().map(|p| p.object_id).collect(), prompt, questions })
}

fn paragraph_text(parts: &[&DocEntity]) -> String {
    let mut texts: Vec<&str> = Vec::new();
    for p in parts {
        if !texts.contains(&p.text.as_str()) {
            texts.push(&p.text);
        }
    }
    texts.join(" ")
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// One summary sentence for a caption, strictly shorter than the caption.
pub fn summarize_caption(caption: &str, client: &dyn GeneratorClient, prompts: &PromptSet) -> Result<String> {
    let caption = caption.trim();
    if caption.is_empty() {
        return Err(Error::InvalidInput("caption is empty".into()));
    }
    let prompt = PromptSet::render(&prompts.caption_summary, caption, 1);
    let request = GenerationRequest { task: TaskKind::CaptionSummary, payload: caption.into(), prompt, max_items: 1 };
    let summary = client.generate(&request)?.into_iter().map(|s| s.trim().to_string()).find(|s| !s.is_empty());
    let mut summary = summary.ok_or_else(|| Error::Generator("empty caption summary".into()))?;
    let caption_len = normalize_question(caption).chars().count();
    if normalize_question(&summary).chars().count() >= caption_len {
        let mut words: Vec<&str> = summary.split_whitespace().collect();
        while words.len() > 1 && normalize_question(&words.join(" ")).chars().count() >= caption_len {
            words.pop();
        }
        summary = words.join(" ");
        if word_count(&summary) >= word_count(caption) && word_count(caption) <= 1 {
            return Err(Error::Generator("caption too short to summarise".into()));
        }
    }
    Ok(summary)
}

/// Questions locating a table or figure; each must name the visual kind.
pub fn generate_visual_questions(
    summary: &str,
    target: &DocEntity,
    max_items: usize,
    client: &dyn GeneratorClient,
    prompts: &PromptSet,
) -> Result<Vec<String>> {
    let (task, template) = match target.category {
        EntityCategory::Table => (TaskKind::TableQuestions, &prompts.table),
        EntityCategory::Figure => (TaskKind::FigureQuestions, &prompts.figure),
        other => return Err(Error::InvalidInput(format!("visual questions need a Table or Figure, got {other}"))),
    };
    let prompt = PromptSet::render(template, summary, max_items);
    let request = GenerationRequest { task, payload: summary.into(), prompt, max_items };
    let mut out: Vec<String> = client
        .generate(&request)?
        .into_iter()
        .filter(|q| {
            let l = q.to_lowercase();
            VISUAL_LEXICON.iter().any(|w| l.split(|c: char| !c.is_alphanumeric()).any(|t| t == *w))
        })
        .collect();
    out.truncate(max_items);
    Ok(out)
}

/// Log entry for one source entity (or split paragraph).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGenRecord {
    pub document_id: String,
    pub source_entity_ids: BTreeSet<u32>,
    pub super_section: SuperSection,
    pub prompt_version: String,
    pub prompt: String,
    pub raw_questions: Vec<String>,
    pub kept_questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGenConfig {
    /// Maximum concurrent client calls.
    pub in_flight: usize,
    /// Questions per table or figure.
    pub visual_questions: usize,
    /// First question id to assign.
    pub id_start: u64,
}

impl Default for QGenConfig {
    fn default() -> Self {
        QGenConfig { in_flight: 4, visual_questions: 1, id_start: 0 }
    }
}

enum Job<'a> {
    Paragraph(Vec<&'a DocEntity>),
    Visual { target: &'a DocEntity, caption: &'a str },
}

/// Split parts of one paragraph share a `source_node`.
fn paragraph_groups(doc: &DocumentRecord) -> Vec<Vec<&DocEntity>> {
    let mut by_node: BTreeMap<u32, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<&DocEntity>> = Vec::new();
    for e in doc.ordered_entities().filter(|e| e.category == EntityCategory::Paragraph) {
        match e.source_node.and_then(|n| by_node.get(&n).copied()) {
            Some(g) => groups[g].push(e),
            None => {
                if let Some(n) = e.source_node {
                    by_node.insert(n, groups.len());
                }
                groups.push(vec![e]);
            }
        }
    }
    groups
}

fn visual_jobs(doc: &DocumentRecord) -> Vec<(&DocEntity, Option<&str>)> {
    let entities: Vec<&DocEntity> = doc.ordered_entities().collect();
    let items: Vec<_> = entities.iter().map(|e| (e.category, e.bbox, e.page_index)).collect();
    let pairs = pair_visual_captions(&items);
    entities
        .iter()
        .enumerate()
        .filter(|(_, e)| e.category.is_visual())
        .map(|(i, e)| (*e, pairs[i].map(|c| entities[c].text.as_str())))
        .collect()
}

/// Text of the whole first-level section, in reading order.
fn section_context(doc: &DocumentRecord, parts: &[&DocEntity]) -> String {
    match parts[0].first_level_section() {
        Some(title) => doc
            .section_entities(title)
            .filter(|e| !e.category.is_visual() && !e.text.is_empty())
            .map(|e| e.text.as_str())
            .collect::<Vec<_>>()
            .join(" "),
        None => paragraph_text(parts),
    }
}

struct JobOutput {
    record: QGenRecord,
    samples: Vec<(String, QASample)>,
}

fn run_job(doc: &DocumentRecord, job: &Job, client: &dyn GeneratorClient, prompts: &PromptSet, cfg: &QGenConfig) -> Result<JobOutput> {
    match job {
        Job::Paragraph(parts) => {
            let text = paragraph_text(parts);
            let quota = question_quota(&text)?;
            let out = generate_paragraph_questions(parts, quota, client, prompts)?;
            let kept = filter_questions(&out.questions);
            let super_section = parts[0].first_level_section().map(map_super_section).unwrap_or(SuperSection::Other);
            let page_range = section_page_span(doc, &out.entity_ids)?;
            let context = section_context(doc, parts);
            let samples = kept
                .iter()
                .map(|q| {
                    let s = QASample {
                        question: q.clone(),
                        document_id: doc.document_id.clone(),
                        answer_objt_ids: out.entity_ids.clone(),
                        super_section,
                        id: 0,
                        page_range,
                        context: Some(context.clone()),
                    };
                    (q.clone(), s)
                })
                .collect();
            Ok(JobOutput {
                record: QGenRecord {
                    document_id: doc.document_id.clone(),
                    source_entity_ids: out.entity_ids,
                    super_section,
                    prompt_version: prompts.version.clone(),
                    prompt: out.prompt,
                    raw_questions: out.questions,
                    kept_questions: kept,
                },
                samples,
            })
        }
        Job::Visual { target, caption } => {
            let summary = summarize_caption(caption, client, prompts)?;
            let raw = generate_visual_questions(&summary, target, cfg.visual_questions, client, prompts)?;
            let kept = filter_questions(&raw);
            let super_section = if target.category == EntityCategory::Table { SuperSection::Table } else { SuperSection::Figure };
            let ids: BTreeSet<u32> = [target.object_id].into();
            let page_range = section_page_span(doc, &ids)?;
            let template = if target.category == EntityCategory::Table { &prompts.table } else { &prompts.figure };
            let samples = kept
                .iter()
                .map(|q| {
                    let s = QASample {
                        question: q.clone(),
                        document_id: doc.document_id.clone(),
                        answer_objt_ids: ids.clone(),
                        super_section,
                        id: 0,
                        page_range,
                        context: None,
                    };
                    (q.clone(), s)
                })
                .collect();
            Ok(JobOutput {
                record: QGenRecord {
                    document_id: doc.document_id.clone(),
                    source_entity_ids: ids,
                    super_section,
                    prompt_version: prompts.version.clone(),
                    prompt: PromptSet::render(template, &summary, cfg.visual_questions),
                    raw_questions: raw,
                    kept_questions: kept,
                },
                samples,
            })
        }
    }
}

/// Full generation pass over documents. Client calls run on up to
/// `cfg.in_flight` threads; output order and ids follow document and
/// reading order regardless of scheduling.
pub fn generate_questions(
    docs: &[&DocumentRecord],
    client: &dyn GeneratorClient,
    prompts: &PromptSet,
    cfg: &QGenConfig,
) -> Result<(Vec<QASample>, Vec<QGenRecord>)> {
    let mut jobs: Vec<(&DocumentRecord, Job)> = Vec::new();
    let mut records_without_job: Vec<(usize, QGenRecord)> = Vec::new();
    for doc in docs {
        for parts in paragraph_groups(doc) {
            jobs.push((doc, Job::Paragraph(parts)));
        }
        for (target, caption) in visual_jobs(doc) {
            match caption.filter(|c| !c.trim().is_empty()) {
                Some(caption) => jobs.push((doc, Job::Visual { target, caption })),
                None => {
                    log::info!("{}: {} {} has no caption, skipped", doc.document_id, target.category, target.object_id);
                    let super_section = if target.category == EntityCategory::Table { SuperSection::Table } else { SuperSection::Figure };
                    records_without_job.push((
                        jobs.len(),
                        QGenRecord {
                            document_id: doc.document_id.clone(),
                            source_entity_ids: [target.object_id].into(),
                            super_section,
                            prompt_version: prompts.version.clone(),
                            prompt: String::new(),
                            raw_questions: vec![],
                            kept_questions: vec![],
                        },
                    ));
                }
            }
        }
    }

    let results: Vec<Mutex<Option<Result<JobOutput>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.in_flight.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (doc, job) = &jobs[i];
                let r = run_job(doc, job, client, prompts, cfg);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut samples = Vec::new();
    let mut records = Vec::new();
    let mut next_id = cfg.id_start;
    let mut skipped = records_without_job.into_iter().peekable();
    for (i, slot) in results.into_iter().enumerate() {
        while let Some((_, r)) = skipped.next_if(|(at, _)| *at <= i) {
            records.push(r);
        }
        let out = slot.into_inner().expect("result slot").expect("every job ran")?;
        for (_, mut s) in out.samples {
            s.id = next_id;
            next_id += 1;
            samples.push(s);
        }
        records.push(out.record);
    }
    records.extend(skipped.map(|(_, r)| r));
    Ok((samples, records))
}

/// Appends records as JSON lines.
pub fn append_records(path: &Path, records: &[QGenRecord]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
