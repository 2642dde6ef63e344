//! Chat-model access, QA prompt rendering and answer parsing.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{LazyLock, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::QaItem;
use crate::http::{Endpoint, HttpError};
use crate::text::{SegmenterKind, TokenCounter};

pub const QA_TEMPLATE_EN: &str = include_str!("../../../templates/qa_en.txt");
pub const QA_TEMPLATE_ZH: &str = include_str!("../../../templates/qa_zh.txt");

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("prompt exceeds the model context window: {0}")]
    ContextOverflow(String),
    #[error("provider returned HTTP {status}: {message}")]
    Status { status: u16, message: String },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
    #[error("template error: {0}")]
    Template(String),
    #[error("could not parse an option index from reply {0:?}")]
    Unparseable(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

impl From<HttpError> for LlmError {
    fn from(e: HttpError) -> Self {
        match &e {
            HttpError::MissingApiKey(_) => LlmError::Auth(e.to_string()),
            HttpError::Status { status: 401 | 403, body, .. } => LlmError::Auth(body.clone()),
            HttpError::Status { status: 400 | 413, body, .. }
                if body.contains("context_length") || body.contains("maximum context") =>
            {
                LlmError::ContextOverflow(body.clone())
            }
            HttpError::Status { status, body, .. } => LlmError::Status { status: *status, message: body.clone() },
            HttpError::Transport { message, .. } => LlmError::Transport(message.clone()),
            HttpError::InvalidResponse { message, .. } => LlmError::InvalidResponse(message.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChatReply {
    pub text: String,
    /// Usage reported by the provider, when it reports any.
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

impl ChatReply {
    pub fn text(text: impl Into<String>) -> Self {
        ChatReply { text: text.into(), ..Default::default() }
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatReply, LlmError>;
}

/// OpenAI-compatible chat completions endpoint.
#[derive(Debug, Clone)]
pub struct RemoteChat {
    pub endpoint: Endpoint,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: Option<u32>,
}

impl ChatProvider for RemoteChat {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatReply, LlmError> {
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        });
        if let Some(max) = self.max_output_tokens {
            body["max_tokens"] = json!(max);
        }
        let resp = self.endpoint.post_json(&body)?;
        parse_chat_response(&resp)
    }
}

fn parse_chat_response(resp: &Value) -> Result<ChatReply, LlmError> {
    let text = resp
        .pointer("/choices/0/message/content")
        .or_else(|| resp.get("text"))
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::InvalidResponse("no message content".into()))?;
    let usage = |key: &str| resp.pointer(&format!("/usage/{key}")).and_then(Value::as_u64);
    Ok(ChatReply {
        text: text.to_string(),
        input_tokens: usage("prompt_tokens"),
        output_tokens: usage("completion_tokens"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Matches when the last user message contains this substring.
    pub contains: String,
    pub reply: String,
}

/// Canned replies: the first matching rule wins, otherwise `reply`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedChat {
    pub reply: String,
    pub rules: Vec<ScriptRule>,
}

fn last_user(messages: &[ChatMessage]) -> &str {
    messages.iter().rev().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("")
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatReply, LlmError> {
        let prompt = last_user(messages);
        let reply = self
            .rules
            .iter()
            .find(|r| prompt.contains(&r.contains))
            .map_or(&self.reply, |r| &r.reply);
        Ok(ChatReply::text(reply.clone()))
    }
}

/// Token a context can carry to tell [`ContextEchoChat`] the right option.
pub fn answer_marker(option: u8) -> String {
    format!("answerkey{option}")
}

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"answerkey([123])").expect("valid regex"));

/// Answers with the option index found in an `answerkey<N>` marker of the
/// prompt, or declines when there is none.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContextEchoChat;

impl ChatProvider for ContextEchoChat {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatReply, LlmError> {
        let text = match MARKER.captures(last_user(messages)) {
            Some(c) => format!("The answer is ({}).", &c[1]),
            None => "I cannot decide.".to_string(),
        };
        Ok(ChatReply::text(text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryStubMode {
    /// First `word_budget` words of the text.
    #[default]
    Budget,
    /// First half (rounded down, at least one) of the text's words.
    Halve,
    /// The text unchanged.
    Echo,
}

static BUDGET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").expect("valid regex"));

/// Offline summarizer for the shipped summarize/shorten templates: the word
/// budget is the first integer of the prompt, the text is whatever follows
/// the label (`Text:`, `Summary:`, `文字：`, `总结：`) after the last blank line.
#[derive(Debug, Clone, Copy, Default)]
pub struct SummaryStubChat {
    pub mode: SummaryStubMode,
    pub segmenter: SegmenterKind,
}

fn prompt_body(prompt: &str) -> &str {
    let tail = prompt.rsplit("\n\n").next().unwrap_or(prompt);
    let cut = [": ", "：", ":"].iter().filter_map(|sep| tail.find(sep).map(|i| i + sep.len())).min();
    cut.map_or(tail, |i| &tail[i..])
}

impl ChatProvider for SummaryStubChat {
    fn chat(&self, messages: &[ChatMessage]) -> Result<ChatReply, LlmError> {
        let prompt = last_user(messages);
        let seg = self.segmenter.segmenter();
        let words = seg.segment_words(prompt_body(prompt));
        let keep = match self.mode {
            SummaryStubMode::Budget => BUDGET
                .find(prompt)
                .and_then(|m| m.as_str().parse::<usize>().ok())
                .ok_or_else(|| LlmError::InvalidResponse("prompt carries no word budget".into()))?,
            SummaryStubMode::Halve => (words.len() / 2).max(1),
            SummaryStubMode::Echo => words.len(),
        };
        Ok(ChatReply::text(seg.join(&words[..keep.min(words.len())])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { max_retries: 0, base_delay_ms: 0, max_delay_ms: 0 }
    }

    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy { max_retries, base_delay_ms: 0, max_delay_ms: 0 }
    }

    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(32)).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChatKind {
    RemoteHttp { endpoint: Endpoint, model: String },
    StubScripted {
        reply: String,
        #[serde(default)]
        rules: Vec<ScriptRule>,
    },
    StubContextEcho,
    StubSummary {
        #[serde(default)]
        mode: SummaryStubMode,
        #[serde(default)]
        segmenter: SegmenterKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSpec {
    #[serde(flatten)]
    pub kind: ChatKind,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl ChatSpec {
    pub fn stub_context_echo() -> Self {
        ChatSpec { kind: ChatKind::StubContextEcho, temperature: 0.0, max_output_tokens: None, retry: RetryPolicy::none() }
    }

    pub fn stub_summary(mode: SummaryStubMode) -> Self {
        ChatSpec {
            kind: ChatKind::StubSummary { mode, segmenter: SegmenterKind::default() },
            temperature: 0.0,
            max_output_tokens: None,
            retry: RetryPolicy::none(),
        }
    }

    pub fn stub_scripted(reply: impl Into<String>) -> Self {
        ChatSpec {
            kind: ChatKind::StubScripted { reply: reply.into(), rules: Vec::new() },
            temperature: 0.0,
            max_output_tokens: None,
            retry: RetryPolicy::none(),
        }
    }

    pub fn provider(&self) -> Box<dyn ChatProvider> {
        match &self.kind {
            ChatKind::RemoteHttp { endpoint, model } => Box::new(RemoteChat {
                endpoint: endpoint.clone(),
                model: model.clone(),
                temperature: self.temperature,
                max_output_tokens: self.max_output_tokens,
            }),
            ChatKind::StubScripted { reply, rules } => {
                Box::new(ScriptedChat { reply: reply.clone(), rules: rules.clone() })
            }
            ChatKind::StubContextEcho => Box::new(ContextEchoChat),
            ChatKind::StubSummary { mode, segmenter } => {
                Box::new(SummaryStubChat { mode: *mode, segmenter: *segmenter })
            }
        }
    }

    pub fn client(&self, counter: TokenCounter) -> LlmClient {
        LlmClient::new(self.provider(), self.retry, counter)
    }
}

/// One model call as recorded in the call log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub prompt_hash: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub retries: u32,
    pub latency: Duration,
    pub prompt_hash: String,
}

impl Completion {
    pub fn record(&self) -> CallRecord {
        CallRecord {
            prompt_hash: self.prompt_hash.clone(),
            input_tokens: self.input_tokens,
            output_tokens: self.output_tokens,
            latency_ms: self.latency.as_millis() as u64,
            retries: self.retries,
        }
    }
}

pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(format!("{:?}\u{0}", m.role).as_bytes());
        h.update(m.content.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Wraps a provider with retries, token accounting and an in-memory call log.
pub struct LlmClient {
    provider: Box<dyn ChatProvider>,
    retry: RetryPolicy,
    counter: TokenCounter,
    log: Mutex<Vec<CallRecord>>,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient").field("retry", &self.retry).field("counter", &self.counter).finish()
    }
}

impl LlmClient {
    pub fn new(provider: Box<dyn ChatProvider>, retry: RetryPolicy, counter: TokenCounter) -> Self {
        LlmClient { provider, retry, counter, log: Mutex::new(Vec::new()) }
    }

    pub fn counter(&self) -> TokenCounter {
        self.counter
    }

    pub fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        self.chat(&[ChatMessage::user(prompt)])
    }

    pub fn chat(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let start = Instant::now();
        let mut retries = 0u32;
        let reply = loop {
            match self.provider.chat(messages) {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && retries < self.retry.max_retries => {
                    log::warn!("retrying model call after: {e}");
                    std::thread::sleep(self.retry.delay(retries));
                    retries += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(LlmError::RetriesExhausted { attempts: retries + 1, last: Box::new(e) })
                }
                Err(e) => return Err(e),
            }
        };
        let input_tokens = reply.input_tokens.unwrap_or_else(|| {
            messages.iter().map(|m| self.counter.count(&m.content) as u64).sum()
        });
        let output_tokens = reply.output_tokens.unwrap_or_else(|| self.counter.count(&reply.text) as u64);
        let completion = Completion {
            text: reply.text,
            input_tokens,
            output_tokens,
            retries,
            latency: start.elapsed(),
            prompt_hash: prompt_hash(messages),
        };
        self.log.lock().expect("call log poisoned").push(completion.record());
        Ok(completion)
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log poisoned").clone()
    }

    /// Appends the call log as JSON Lines.
    pub fn write_call_log(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        for r in self.call_log() {
            writeln!(f, "{}", serde_json::to_string(&r).expect("serializable"))?;
        }
        Ok(())
    }
}

pub fn complete(client: &LlmClient, prompt: &str) -> Result<Completion, LlmError> {
    client.complete(prompt)
}

/// Single-pass `{name}` substitution; unknown braces are left untouched and
/// substituted values are never re-scanned.
pub fn fill_placeholders(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for (name, value) in values {
            let ph_len = name.len() + 2;
            if tail.len() >= ph_len && &tail[1..ph_len - 1] == *name && tail.as_bytes()[ph_len - 1] == b'}' {
                out.push_str(value);
                rest = &tail[ph_len..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

const CONTEXT_OPEN: &str = "{#context}";
const CONTEXT_CLOSE: &str = "{/context}";

/// QA prompt template with `{context}`, `{question}` and `{options}`, each
/// exactly once. Text between `{#context}` and `{/context}` is emitted only
/// when the context is non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    source: String,
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self, LlmError> {
        for ph in ["{context}", "{question}", "{options}"] {
            match source.matches(ph).count() {
                1 => {}
                0 => return Err(LlmError::Template(format!("missing placeholder {ph}"))),
                n => return Err(LlmError::Template(format!("placeholder {ph} appears {n} times"))),
            }
        }
        match (source.find(CONTEXT_OPEN), source.find(CONTEXT_CLOSE)) {
            (None, None) => {}
            (Some(o), Some(c)) if o < c => {}
            _ => return Err(LlmError::Template("unbalanced {#context}...{/context} block".into())),
        }
        Ok(PromptTemplate { source: source.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LlmError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn english() -> Self {
        Self::parse(QA_TEMPLATE_EN).expect("bundled template is valid")
    }

    pub fn chinese() -> Self {
        Self::parse(QA_TEMPLATE_ZH).expect("bundled template is valid")
    }

    pub fn render(&self, context: &str, question: &str, options: &[String]) -> String {
        let body = match (self.source.find(CONTEXT_OPEN), self.source.find(CONTEXT_CLOSE)) {
            (Some(o), Some(c)) => {
                let inner = &self.source[o + CONTEXT_OPEN.len()..c];
                let after = &self.source[c + CONTEXT_CLOSE.len()..];
                let kept = if context.is_empty() { "" } else { inner };
                format!("{}{}{}", &self.source[..o], kept, after)
            }
            _ => self.source.clone(),
        };
        let options = render_options(options);
        fill_placeholders(&body, &[("context", context), ("question", question), ("options", &options)])
    }
}

/// `(1) a, (2) b, (3) c`
pub fn render_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("({}) {}", i + 1, o))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPrompt {
    pub context: String,
    pub question: String,
    pub options: Vec<String>,
    pub rendered: String,
}

pub fn build_prompt(context: &str, qa: &QaItem, template: &PromptTemplate) -> QaPrompt {
    QaPrompt {
        context: context.to_string(),
        question: qa.question.clone(),
        options: qa.options.clone(),
        rendered: template.render(context, &qa.question, &qa.options),
    }
}

static EXPLICIT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[(（]\s*([123])\s*[)）]").expect("valid regex"));
static CUE_BEFORE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:answer|option|choice|答案|选项|选择)\s*(?:is|:|：|是|=)?\s*(?:number|no\.?)?\s*([123])(?:[^0-9]|$)")
        .expect("valid regex")
});
static CUE_AFTER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:^|[^0-9])([123])\s+is\s+the\s+(?:best\s+|correct\s+)?(?:answer|option|choice)").expect("valid regex")
});
static BARE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*([123])\s*[.)。]?\s*$").expect("valid regex"));

/// Maps a model reply to a 1-based option index.
///
/// Tried in order: an explicit `(N)`, a digit next to an answer-like cue (or
/// a reply that is just the digit), then a reply equal to one option's text.
pub fn parse_answer(text: &str, options: &[String]) -> Result<u8, LlmError> {
    let digit = |c: regex::Captures| c[1].parse::<u8>().ok();
    if let Some(n) = EXPLICIT.captures(text).and_then(digit) {
        return Ok(n);
    }
    let cue = [&*CUE_BEFORE, &*CUE_AFTER, &*BARE]
        .iter()
        .filter_map(|re| re.captures(text).map(|c| (c.get(1).map_or(0, |m| m.start()), c)))
        .min_by_key(|(pos, _)| *pos)
        .and_then(|(_, c)| digit(c));
    if let Some(n) = cue {
        return Ok(n);
    }
    let norm = |s: &str| {
        s.trim()
            .trim_end_matches(|c: char| c.is_ascii_punctuation() || "。！".contains(c))
            .to_lowercase()
    };
    let reply = norm(text);
    if let Some(i) = options.iter().position(|o| !o.is_empty() && norm(o) == reply) {
        return Ok(i as u8 + 1);
    }
    Err(LlmError::Unparseable(text.to_string()))
}
