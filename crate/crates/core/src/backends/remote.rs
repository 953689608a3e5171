//! HTTP JSON clients for OpenAI-style endpoints: `/chat/completions` for
//! extraction, augmentation and judging, `/completions` with echoed
//! log-probabilities for likelihood scoring, and `/embeddings`.

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::templates::PromptTemplates;
use super::{
    parse_extraction_output, Embedder, EntityContext, EntityExtractor, ExtractionRecord, JudgeOutcome,
    LikelihoodScorer, PairJudge, QueryAugmenter, TokenLogProbs,
};
use crate::corpus::{Chunk, QaPair};
use crate::embedding::Embedding;
use crate::error::{Capability, Error, Result};
use crate::evalx::{Criterion, PairVerdict, Winner};

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Append every request and response to this JSONL file.
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
    /// Embedding dimension; required for embedding backends.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Whether the completion endpoint returns token log-probabilities.
    #[serde(default = "default_true")]
    pub supports_logprobs: bool,
}

impl BackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
            audit_log: None,
            dim: None,
            supports_logprobs: true,
        }
    }

    /// Problems with this config, each prefixed by `prefix`.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            p.push(format!(
                "{prefix}.endpoint: must be an http(s) URL, got {:?}",
                self.endpoint
            ));
        }
        if self.model.trim().is_empty() {
            p.push(format!("{prefix}.model: must not be empty"));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            p.push(format!("{prefix}.timeout_secs: must be > 0"));
        }
        if self.max_in_flight == 0 {
            p.push(format!("{prefix}.max_in_flight: must be >= 1"));
        }
        if self.dim == Some(0) {
            p.push(format!("{prefix}.dim: must be >= 1"));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems("backend");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigFields(p))
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Shared transport: auth, retries with exponential backoff, in-flight
/// limit and audit logging.
pub struct HttpClient {
    cfg: BackendConfig,
    agent: ureq::Agent,
    key: Option<String>,
    gate: Gate,
    audit: Option<Mutex<File>>,
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fail(String),
}

impl HttpClient {
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} (API key) is not set")))?,
            ),
            None => None,
        };
        let audit = match &cfg.audit_log {
            Some(path) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            )),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            gate: Gate::new(cfg.max_in_flight),
            cfg,
            agent,
            key,
            audit,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    fn log(&self, capability: Capability, url: &str, request: &Value, outcome: &Value) {
        let Some(audit) = &self.audit else { return };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let line = json!({
            "ts_ms": ts,
            "capability": capability,
            "url": url,
            "request": request,
            "response": outcome,
        });
        let mut f = audit.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            log::warn!("audit log write failed: {e}");
        }
    }

    fn attempt(&self, url: &str, body: &Value) -> Attempt {
        let mut req = self.agent.post(url);
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport error: {e}")),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body failed: {e}")),
        };
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}: {text}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fail(format!("HTTP {status}: {text}"));
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fail(format!("response is not JSON ({e}): {text}")),
        }
    }

    /// POSTs `body` to `path`, retrying transport errors, 429 and 5xx.
    pub fn post(&self, capability: Capability, path: &str, body: &Value) -> Result<Value> {
        let url = self.url(path);
        let _permit = self.gate.acquire();
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&url, body) {
                Attempt::Done(v) => {
                    self.log(capability, &url, body, &v);
                    return Ok(v);
                }
                Attempt::Retry(msg) => {
                    log::warn!("{capability} request to {url} failed (attempt {}): {msg}", attempt + 1);
                    self.log(capability, &url, body, &json!({ "error": msg }));
                    last = msg;
                }
                Attempt::Fail(msg) => {
                    self.log(capability, &url, body, &json!({ "error": msg }));
                    return Err(Error::backend(capability, msg));
                }
            }
        }
        Err(Error::backend(
            capability,
            format!("gave up after {} attempts: {last}", self.cfg.max_retries + 1),
        ))
    }

    /// Single-turn chat completion returning the assistant message text.
    pub fn chat(&self, capability: Capability, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": 0,
        });
        let v = self.post(capability, "chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::ResponseParse {
                capability,
                message: "missing choices[0].message.content".into(),
                raw: v.to_string(),
            })
    }
}

pub struct RemoteExtractor {
    client: HttpClient,
    templates: PromptTemplates,
}

impl RemoteExtractor {
    pub fn new(cfg: BackendConfig, templates: PromptTemplates) -> Result<Self> {
        Ok(Self {
            client: HttpClient::new(cfg)?,
            templates,
        })
    }
}

impl EntityExtractor for RemoteExtractor {
    fn id(&self) -> String {
        format!("remote-extract:{}", self.client.cfg.model)
    }

    fn extract(&self, chunk: &Chunk) -> Result<ExtractionRecord> {
        let prompt = self.templates.render_extract(&chunk.text);
        let content = self
            .client
            .chat(Capability::Extract, &prompt)
            .map_err(|e| e.for_chunk(&chunk.id))?;
        let parsed = parse_extraction_output(&content);
        if parsed.entities.is_empty() && parsed.relations.is_empty() && parsed.skipped > 0 {
            return Err(Error::ResponseParse {
                capability: Capability::Extract,
                message: format!(
                    "no well-formed tuples for chunk {} ({} malformed records)",
                    chunk.id, parsed.skipped
                ),
                raw: content,
            });
        }
        if parsed.skipped > 0 {
            log::warn!(
                "chunk {}: skipped {} malformed extraction records",
                chunk.id,
                parsed.skipped
            );
        }
        Ok(parsed.into_record(&chunk.id))
    }
}

/// Log-probabilities of the target tokens from an echoed completion: the
/// tokens whose character offset is at or past the end of the prompt.
pub fn parse_echo_logprobs(v: &Value, prompt_chars: usize) -> Result<TokenLogProbs> {
    let bad = |message: &str| Error::ResponseParse {
        capability: Capability::Likelihood,
        message: message.to_string(),
        raw: v.to_string(),
    };
    let lp = v
        .pointer("/choices/0/logprobs")
        .ok_or_else(|| bad("missing choices[0].logprobs"))?;
    let values = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing token_logprobs"))?;
    let offsets = lp
        .get("text_offset")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing text_offset"))?;
    if values.len() != offsets.len() {
        return Err(bad("token_logprobs and text_offset differ in length"));
    }
    let mut out = Vec::new();
    for (value, offset) in values.iter().zip(offsets) {
        let offset = offset.as_u64().ok_or_else(|| bad("non-integer text_offset"))? as usize;
        if offset < prompt_chars {
            continue;
        }
        out.push(
            value
                .as_f64()
                .ok_or_else(|| bad("null log-probability for a target token"))?,
        );
    }
    if out.is_empty() {
        return Err(bad("no target tokens in echoed completion"));
    }
    TokenLogProbs::new(out)
}

pub struct RemoteScorer {
    client: HttpClient,
}

impl RemoteScorer {
    /// Fails when the endpoint is configured without log-probability
    /// support, so the problem surfaces before any scoring run.
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        if !cfg.supports_logprobs {
            return Err(Error::Unsupported {
                capability: Capability::Likelihood,
                feature: "token log-probabilities",
            });
        }
        Ok(Self {
            client: HttpClient::new(cfg)?,
        })
    }

    /// Sends one tiny request and checks that log-probabilities come back.
    pub fn probe(&self) -> Result<()> {
        self.score("Say:", " ok").map(|_| ()).map_err(|e| match e {
            Error::ResponseParse { .. } => Error::Unsupported {
                capability: Capability::Likelihood,
                feature: "echoed token log-probabilities",
            },
            other => other,
        })
    }
}

impl LikelihoodScorer for RemoteScorer {
    fn id(&self) -> String {
        format!("remote-likelihood:{}", self.client.cfg.model)
    }

    fn score(&self, prompt: &str, target: &str) -> Result<TokenLogProbs> {
        if target.trim().is_empty() {
            return Err(Error::Precondition("likelihood target is empty".into()));
        }
        let body = json!({
            "model": self.client.cfg.model,
            "prompt": format!("{prompt}{target}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0,
        });
        let v = self.client.post(Capability::Likelihood, "completions", &body)?;
        parse_echo_logprobs(&v, prompt.chars().count())
    }
}

pub struct RemoteEmbedder {
    client: HttpClient,
    dim: usize,
}

impl RemoteEmbedder {
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        let dim = cfg
            .dim
            .ok_or_else(|| Error::Config("embedding backend requires `dim`".into()))?;
        Ok(Self {
            client: HttpClient::new(cfg)?,
            dim,
        })
    }
}

/// Vectors from an `/embeddings` response, ordered by their `index` field.
pub fn parse_embeddings(v: &Value, expected: usize, dim: usize) -> Result<Vec<Embedding>> {
    let bad = |message: String| Error::ResponseParse {
        capability: Capability::Embed,
        message,
        raw: v.to_string(),
    };
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing data array".into()))?;
    if data.len() != expected {
        return Err(bad(format!("expected {expected} embeddings, got {}", data.len())));
    }
    let mut rows: Vec<(u64, Vec<f32>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        let vec: Vec<f32> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| bad(format!("item {pos} has no embedding")))?
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| bad(format!("item {pos} has a non-numeric component")))?;
        rows.push((index, vec));
    }
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter()
        .map(|(_, v)| {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            Embedding::normalized(v)
        })
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote-embed:{}:d{}", self.client.cfg.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::Precondition("cannot embed an empty string".into()));
        }
        let body = json!({ "model": self.client.cfg.model, "input": texts });
        let v = self.client.post(Capability::Embed, "embeddings", &body)?;
        parse_embeddings(&v, texts.len(), self.dim)
    }
}

/// Extracts the outermost JSON object from model output, tolerating code
/// fences and surrounding prose.
fn json_object(content: &str) -> Option<Value> {
    let start = content.find('{')?;
    let end = content.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&content[start..=end]).ok()
}

pub fn parse_augment_response(content: &str) -> Result<Vec<String>> {
    let bad = |message: &str| Error::ResponseParse {
        capability: Capability::Augment,
        message: message.to_string(),
        raw: content.to_string(),
    };
    let v = json_object(content).ok_or_else(|| bad("no JSON object in response"))?;
    let list = v
        .get("confusing_questions")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing confusing_questions list"))?;
    Ok(list.iter().filter_map(Value::as_str).map(str::to_string).collect())
}

pub struct RemoteAugmenter {
    client: HttpClient,
    templates: PromptTemplates,
}

impl RemoteAugmenter {
    pub fn new(cfg: BackendConfig, templates: PromptTemplates) -> Result<Self> {
        Ok(Self {
            client: HttpClient::new(cfg)?,
            templates,
        })
    }
}

impl QueryAugmenter for RemoteAugmenter {
    fn id(&self) -> String {
        format!("remote-augment:{}", self.client.cfg.model)
    }

    fn propose(&self, qa: &QaPair, entities: &[EntityContext], n: usize) -> Result<Vec<String>> {
        let input = json!({
            "question": qa.question,
            "answer": qa.answer,
            "entities": entities,
        });
        let input = serde_json::to_string_pretty(&input).expect("json value serializes");
        let prompt = self.templates.render_augment(&input, n);
        let content = self.client.chat(Capability::Augment, &prompt)?;
        parse_augment_response(&content)
    }
}

/// Parses a judge reply. Criteria that cannot be read become
/// [`Winner::None`] and the raw text is kept.
pub fn parse_judge_response(content: &str) -> JudgeOutcome {
    let v = json_object(content);
    let read = |key: &str| -> Option<Winner> {
        let field = v.as_ref()?.get(key)?;
        let label = match field {
            Value::String(s) => s.as_str(),
            other => other.get("Winner")?.as_str()?,
        };
        Winner::parse(label)
    };
    let mut complete = true;
    let mut get = |c: Criterion| {
        let key = match c {
            Criterion::Faithfulness => "Faithfulness",
            Criterion::Conciseness => "Conciseness",
            Criterion::Overall => "Overall Winner",
        };
        read(key).unwrap_or_else(|| {
            complete = false;
            Winner::None
        })
    };
    let verdict = PairVerdict {
        faithfulness: get(Criterion::Faithfulness),
        conciseness: get(Criterion::Conciseness),
        overall: get(Criterion::Overall),
    };
    if !complete {
        log::warn!("judge response could not be fully parsed; missing criteria recorded as None");
    }
    JudgeOutcome {
        verdict,
        raw: (!complete).then(|| content.to_string()),
    }
}

pub struct RemoteJudge {
    client: HttpClient,
    templates: PromptTemplates,
}

impl RemoteJudge {
    pub fn new(cfg: BackendConfig, templates: PromptTemplates) -> Result<Self> {
        Ok(Self {
            client: HttpClient::new(cfg)?,
            templates,
        })
    }
}

impl PairJudge for RemoteJudge {
    fn id(&self) -> String {
        format!("remote-judge:{}", self.client.cfg.model)
    }

    fn judge(&self, question: &str, truth: &str, a1: &str, a2: &str) -> Result<JudgeOutcome> {
        let prompt = self.templates.render_judge(question, truth, a1, a2);
        let content = self.client.chat(Capability::Judge, &prompt)?;
        Ok(parse_judge_response(&content))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves the canned `(status, body)` responses in order, one per
    /// connection, and records each request body.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn cfg(endpoint: &str) -> BackendConfig {
        let mut c = BackendConfig::new(endpoint, "test-model");
        c.backoff_ms = 1;
        c.timeout_secs = 5.0;
        c
    }

    fn chat_reply(content: &str) -> String {
        json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
    }

    #[test]
    fn extractor_retries_server_errors() {
        let (url, seen) = serve(vec![
            (500, "{}".into()),
            (
                200,
                chat_reply("(\"entity\"<|>Paris<|>LOCATION<|>capital city)<|COMPLETE|>"),
            ),
        ]);
        let ex = RemoteExtractor::new(cfg(&url), PromptTemplates::default()).unwrap();
        let chunk = Chunk {
            id: "d#00000".into(),
            doc_id: "d".into(),
            index: 0,
            text: "Paris is a city.".into(),
            token_start: 0,
            token_end: 5,
        };
        let r = ex.extract(&chunk).unwrap();
        assert_eq!(r.entities[0].name, "Paris");
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert!(seen[1].contains("Paris is a city."));
    }

    #[test]
    fn exhausted_retries_carry_chunk_id() {
        let (url, _) = serve(vec![(503, "{}".into()), (503, "{}".into())]);
        let mut c = cfg(&url);
        c.max_retries = 1;
        let ex = RemoteExtractor::new(c, PromptTemplates::default()).unwrap();
        let chunk = Chunk {
            id: "d#00003".into(),
            doc_id: "d".into(),
            index: 3,
            text: "x".into(),
            token_start: 0,
            token_end: 1,
        };
        match ex.extract(&chunk) {
            Err(Error::Backend { chunk_id, .. }) => assert_eq!(chunk_id.as_deref(), Some("d#00003")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
        let j = RemoteJudge::new(cfg(&url), PromptTemplates::default()).unwrap();
        assert!(matches!(j.judge("q", "g", "a", "b"), Err(Error::Backend { .. })));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn echo_logprobs_select_target_tokens() {
        let v = json!({ "choices": [{ "logprobs": {
            "tokens": ["Say", ":", " ok", " then"],
            "token_logprobs": [null, -0.5, -0.25, -1.0],
            "text_offset": [0, 3, 4, 7],
        }}]});
        let lp = parse_echo_logprobs(&v, 4).unwrap();
        assert_eq!(lp.0, vec![-0.25, -1.0]);
        assert!(parse_echo_logprobs(&v, 100).is_err());
        assert!(parse_echo_logprobs(&json!({"choices": [{}]}), 0).is_err());
    }

    #[test]
    fn scorer_round_trip_and_capability_check() {
        let body = json!({ "choices": [{ "logprobs": {
            "token_logprobs": [null, -0.5, -0.25],
            "text_offset": [0, 3, 4],
        }}]});
        let (url, seen) = serve(vec![(200, body.to_string())]);
        let s = RemoteScorer::new(cfg(&url)).unwrap();
        assert_eq!(s.score("Say:", " ok").unwrap().0, vec![-0.25]);
        let req: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(req["echo"], json!(true));
        assert_eq!(req["prompt"], json!("Say: ok"));

        let mut c = cfg(&url);
        c.supports_logprobs = false;
        assert!(matches!(RemoteScorer::new(c), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn embeddings_are_ordered_and_dimension_checked() {
        let v = json!({ "data": [
            { "index": 1, "embedding": [0.0, 2.0] },
            { "index": 0, "embedding": [3.0, 4.0] },
        ]});
        let e = parse_embeddings(&v, 2, 2).unwrap();
        assert_eq!(e[0].as_slice(), &[0.6, 0.8]);
        assert_eq!(e[1].as_slice(), &[0.0, 1.0]);
        assert!(matches!(
            parse_embeddings(&v, 2, 3),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn augment_response_parsing() {
        let content = "```json\n{\"confusing_questions\": [\"a?\", \"b?\"]}\n```";
        assert_eq!(parse_augment_response(content).unwrap(), vec!["a?", "b?"]);
        assert!(matches!(
            parse_augment_response("no json"),
            Err(Error::ResponseParse { .. })
        ));
    }

    #[test]
    fn judge_response_parsing() {
        let ok = r#"{"Faithfulness": {"Winner": "Answer 1", "Explanation": "x"},
                     "Conciseness": {"Winner": "Tie", "Explanation": "y"},
                     "Overall Winner": {"Winner": "Answer 2", "Explanation": "z"}}"#;
        let o = parse_judge_response(ok);
        assert_eq!(o.raw, None);
        assert_eq!(o.verdict.faithfulness, Winner::Answer1);
        assert_eq!(o.verdict.conciseness, Winner::Tie);
        assert_eq!(o.verdict.overall, Winner::Answer2);

        let bad = parse_judge_response("I cannot decide");
        assert_eq!(bad.verdict, PairVerdict::uniform(Winner::None));
        assert_eq!(bad.raw.as_deref(), Some("I cannot decide"));
    }

    #[test]
    fn audit_log_records_requests() {
        let dir = tempfile::tempdir().unwrap();
        let (url, _) = serve(vec![(200, chat_reply("{\"confusing_questions\": [\"x?\"]}"))]);
        let mut c = cfg(&url);
        c.audit_log = Some(dir.path().join("audit.jsonl"));
        let a = RemoteAugmenter::new(c, PromptTemplates::default()).unwrap();
        let qa = QaPair {
            id: "q".into(),
            doc_id: "d".into(),
            question: "Who?".into(),
            answer: "Me".into(),
        };
        assert_eq!(a.propose(&qa, &[], 1).unwrap(), vec!["x?"]);
        let log = std::fs::read_to_string(dir.path().join("audit.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 1);
        assert!(log.contains("\"capability\":\"augment\""));
    }

    #[test]
    fn config_problems_are_aggregated() {
        let mut c = BackendConfig::new("ftp://x", " ");
        c.timeout_secs = 0.0;
        c.max_in_flight = 0;
        match c.validate() {
            Err(Error::ConfigFields(p)) => assert_eq!(p.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_key_variable_is_a_config_error() {
        let mut c = BackendConfig::new("http://localhost:1", "m");
        c.api_key_env = Some("RETUNE_TEST_KEY_THAT_IS_NOT_SET".into());
        assert!(matches!(HttpClient::new(c), Err(Error::Config(_))));
    }
}
