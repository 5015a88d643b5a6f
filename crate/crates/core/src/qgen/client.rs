//! Text-generation clients: a seeded template generator and a remote
//! chat-completions client.

use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::stable_hash;
use crate::error::{Error, Result};

use super::{split_sentences, strip_caption_label};

/// What a request asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ParagraphQuestions,
    CaptionSummary,
    TableQuestions,
    FigureQuestions,
}

/// One generation call. Remote clients send `prompt`; the template
/// generator works from `task` and `payload` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub task: TaskKind,
    /// Paragraph text, caption text, or caption summary.
    pub payload: String,
    pub prompt: String,
    pub max_items: usize,
}

pub trait GeneratorClient: Send + Sync {
    /// At most `request.max_items` strings.
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>>;

    /// Short identifier recorded in run manifests.
    fn name(&self) -> String;
}

/// Deterministic generator; output depends only on the seed and the request.
#[derive(Debug, Clone)]
pub struct TemplateGenerator {
    pub seed: u64,
}

const PARAGRAPH_TEMPLATES: &[&str] = &[
    "What is {s}?",
    "What does the study report about {s}?",
    "How is {s} characterised in the study?",
    "Which findings are reported regarding {s}?",
];
const TABLE_TEMPLATES: &[&str] = &[
    "Can you locate the table comparing {s}?",
    "Which table summarises {s}?",
    "Where is the table that reports {s}?",
];
const FIGURE_TEMPLATES: &[&str] = &[
    "Can you locate the graphic that depicts {s}?",
    "Which figure illustrates {s}?",
    "Where is the diagram showing {s}?",
];

const STOP_LEADS: &[&str] = &["the", "a", "an", "in", "this", "these", "however", "moreover", "furthermore", "thus", "here", "we"];

/// Lowercases the leading letter unless the first word looks like an acronym or name.
fn decapitalize(s: &str) -> String {
    let first = s.split_whitespace().next().unwrap_or("");
    let upper = first.chars().filter(|c| c.is_uppercase()).count();
    if upper > 1 || first.len() <= 1 {
        return s.to_string();
    }
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

/// A noun-phrase-like subject from a sentence: leading filler dropped, at most 12 words.
fn subject_of(sentence: &str) -> String {
    let words: Vec<&str> = sentence
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| matches!(c, ',' | ';' | ':' | '.' | '?' | '!' | '(' | ')' | '"')))
        .filter(|w| !w.is_empty())
        .collect();
    let mut start = 0;
    while start + 3 < words.len() && STOP_LEADS.contains(&words[start].to_lowercase().as_str()) {
        start += 1;
    }
    let chosen: Vec<&str> = words[start..].iter().take(12).copied().collect();
    decapitalize(&chosen.join(" "))
}

impl TemplateGenerator {
    pub fn new(seed: u64) -> Self {
        TemplateGenerator { seed }
    }

    fn rng(&self, r: &GenerationRequest) -> ChaCha8Rng {
        let task = format!("{:?}", r.task);
        ChaCha8Rng::seed_from_u64(stable_hash(&[&self.seed.to_le_bytes(), task.as_bytes(), r.payload.as_bytes()]))
    }
}

impl GeneratorClient for TemplateGenerator {
    fn generate(&self, r: &GenerationRequest) -> Result<Vec<String>> {
        let mut rng = self.rng(r);
        let out = match r.task {
            TaskKind::ParagraphQuestions => split_sentences(&r.payload)
                .iter()
                .map(|s| subject_of(s))
                .filter(|s| s.split_whitespace().count() >= 3)
                .take(r.max_items)
                .map(|s| PARAGRAPH_TEMPLATES.choose(&mut rng).expect("templates").replace("{s}", &s))
                .collect(),
            TaskKind::CaptionSummary => {
                let body = strip_caption_label(&r.payload);
                split_sentences(body)
                    .first()
                    .map(|s| s.trim_end_matches(['.', '!', '?', ';', ':']).trim().to_string())
                    .filter(|s| !s.is_empty())
                    .into_iter()
                    .collect()
            }
            TaskKind::TableQuestions | TaskKind::FigureQuestions => {
                let templates = if r.task == TaskKind::TableQuestions { TABLE_TEMPLATES } else { FIGURE_TEMPLATES };
                let subject = decapitalize(r.payload.trim().trim_end_matches(['.', '?', '!']));
                let mut picks: Vec<&str> = templates.to_vec();
                let mut out = Vec::new();
                while out.len() < r.max_items && !picks.is_empty() {
                    let i = (rand::Rng::random::<u32>(&mut rng) as usize) % picks.len();
                    out.push(picks.remove(i).replace("{s}", &subject));
                }
                out
            }
        };
        Ok(out)
    }

    fn name(&self) -> String {
        format!("template(seed={})", self.seed)
    }
}

/// Connection settings of a chat-completions-style service.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub timeout: Duration,
    /// Attempts after the first failure.
    pub retries: u32,
    pub backoff: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            api_key_env: "DOCENT_GENERATOR_API_KEY".into(),
            model: "default".into(),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

pub struct RemoteClient {
    cfg: RemoteConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// Splits a completion into items, dropping list markers such as `1.`, `2)` or `-`.
pub fn parse_completion_items(content: &str) -> Vec<String> {
    content
        .lines()
        .map(|l| {
            let t = l.trim();
            let t = t.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
            let rest = &t[digits..];
            if digits > 0 && (rest.starts_with('.') || rest.starts_with(')')) {
                rest[1..].trim().to_string()
            } else {
                t.to_string()
            }
        })
        .filter(|l| !l.is_empty())
        .collect()
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::Generator(e.to_string()))?;
        Ok(RemoteClient { cfg, api_key, http })
    }

    fn attempt(&self, r: &GenerationRequest) -> std::result::Result<Vec<String>, (bool, String)> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": r.prompt}],
            "temperature": 0,
        });
        let mut req = self.http.post(&self.cfg.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, format!("bad response body: {e}")))?;
        let content = parsed.choices.into_iter().next().map(|c| c.message.content).unwrap_or_default();
        let mut items = parse_completion_items(&content);
        items.truncate(r.max_items);
        Ok(items)
    }
}

impl GeneratorClient for RemoteClient {
    fn generate(&self, r: &GenerationRequest) -> Result<Vec<String>> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * attempt);
            }
            match self.attempt(r) {
                Ok(items) => return Ok(items),
                Err((retryable, msg)) => {
                    log::warn!("generator attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(Error::Generator(format!("{}: {last}", self.cfg.endpoint)))
    }

    fn name(&self) -> String {
        format!("remote({})", self.cfg.model)
    }
}
