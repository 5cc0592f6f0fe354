//! LLM-backed generation over a generic chat-completion HTTP contract.
//!
//! Request: `{"model", "messages": [{"role", "content"}], "temperature"}`.
//! Response: the reply is read from `choices[0].message.content` and must
//! contain a JSON object `{"dysfluent_text": "..."}`; labels are then
//! recovered with [`derive_labels`] and checked with [`validate`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Generator, TextGenError};
use crate::annotation::{
    derive_labels, is_marker, tokenize_words, validate, AnnotatedUtterance, DysfluencyKind, Level,
};
use crate::lexicon::Lexicon;

const DEFAULT_TEMPLATE: &str = "\
Rewrite the clean sentence below so that it contains exactly one {kind}, \
as a person who stutters might say it. Keep everything else unchanged.

Clean text: {clean_text}
CMU phones: {cmu}
IPA: {ipa}

{level_rules}

Answer with a single JSON object and nothing else: {\"dysfluent_text\": \"...\"}";

const WORD_RULES: &str = "\
Answer with words. Write a pause as the token <pause> between two words.";

const PHONE_RULES: &str = "\
Answer with the CMU phone sequence, phones separated by spaces, without \
stress digits. Write a pause as the token <pause> and a prolonged phone as \
the phone followed by <prolong>.";

/// Configuration of the chat-completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmBackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key (never the key).
    pub api_key_env_var_name: String,
    /// Prompt template per kind short name (`word_rep`, `phn_pro`, ...).
    pub prompt_templates: BTreeMap<String, String>,
    pub system_prompt: Option<String>,
    pub max_retries: u32,
    pub timeout_s: f64,
    pub temperature: f64,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
}

impl Default for LlmBackendConfig {
    fn default() -> Self {
        LlmBackendConfig {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "default".into(),
            api_key_env_var_name: "DYSFLUENT_LLM_API_KEY".into(),
            prompt_templates: default_templates(),
            system_prompt: None,
            max_retries: 2,
            timeout_s: 60.0,
            temperature: 0.7,
            max_in_flight: 4,
        }
    }
}

/// The bundled template for every kind.
pub fn default_templates() -> BTreeMap<String, String> {
    DysfluencyKind::ALL
        .iter()
        .map(|k| {
            let rules = match k.level() {
                Level::Word => WORD_RULES,
                Level::Phoneme => PHONE_RULES,
            };
            (k.short_name(), DEFAULT_TEMPLATE.replace("{level_rules}", rules))
        })
        .collect()
}

impl LlmBackendConfig {
    /// Adds the bundled template for every kind that has none.
    pub fn fill_default_templates(&mut self) {
        for (k, t) in default_templates() {
            self.prompt_templates.entry(k).or_insert(t);
        }
    }

    pub fn check(&self) -> Result<(), TextGenError> {
        if let Some(k) = DysfluencyKind::ALL.iter().find(|k| !self.prompt_templates.contains_key(&k.short_name())) {
            return Err(TextGenError::InvalidSpec(format!("no prompt template for {}", k.short_name())));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(TextGenError::InvalidSpec(format!("timeout {} must be positive", self.timeout_s)));
        }
        if self.max_in_flight == 0 {
            return Err(TextGenError::InvalidSpec("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }

    /// Reads `<short_name>.txt` templates from `dir`, overriding the bundled ones.
    pub fn load_templates(&mut self, dir: &Path) -> std::io::Result<usize> {
        let mut loaded = 0;
        for k in DysfluencyKind::ALL {
            let path = dir.join(format!("{}.txt", k.short_name()));
            if path.exists() {
                self.prompt_templates.insert(k.short_name(), fs::read_to_string(path)?);
                loaded += 1;
            }
        }
        Ok(loaded)
    }

    fn template(&self, kind: DysfluencyKind) -> Result<&str, TextGenError> {
        self.prompt_templates
            .get(&kind.short_name())
            .map(String::as_str)
            .ok_or_else(|| TextGenError::InvalidSpec(format!("no prompt template for {}", kind.short_name())))
    }
}

/// Phonetic context sent alongside the clean text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhoneContext {
    /// ARPAbet phones per word.
    pub cmu: Vec<Vec<String>>,
    /// IPA phones per word.
    pub ipa: Vec<Vec<String>>,
}

impl PhoneContext {
    pub fn from_text(text: &str, lex: &Lexicon) -> Result<Self, TextGenError> {
        let mut ctx = PhoneContext::default();
        for w in tokenize_words(text) {
            let pron = lex
                .pronunciation(&w)
                .ok_or_else(|| crate::lexicon::LexiconError::OutOfVocabulary(w.clone()))?;
            let ipa = pron.iter().map(|p| lex.to_ipa(p).map(str::to_string)).collect::<Result<_, _>>()?;
            ctx.cmu.push(pron.to_vec());
            ctx.ipa.push(ipa);
        }
        Ok(ctx)
    }

    fn render(words: &[Vec<String>], sep: &str) -> String {
        words.iter().map(|w| w.join(sep)).collect::<Vec<_>>().join(" | ")
    }
}

/// Fills `{clean_text}`, `{cmu}`, `{ipa}` and `{kind}` in `template`.
pub fn render_prompt(template: &str, clean_text: &str, kind: DysfluencyKind, ctx: Option<&PhoneContext>) -> String {
    let (cmu, ipa) = match ctx {
        Some(c) => (PhoneContext::render(&c.cmu, " "), PhoneContext::render(&c.ipa, "")),
        None => ("(unavailable)".to_string(), "(unavailable)".to_string()),
    };
    template
        .replace("{clean_text}", clean_text)
        .replace("{cmu}", &cmu)
        .replace("{ipa}", &ipa)
        .replace("{kind}", &kind.describe())
}

/// One HTTP exchange: a JSON request body in, `(status, body text)` out.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &Value) -> Result<(u16, String), TextGenError>;
}

/// Live transport over HTTP with bearer-token auth.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint_url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// Reads the API key from the configured environment variable. A missing
    /// variable is allowed (local servers often need no key).
    pub fn from_config(cfg: &LlmBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport {
            agent,
            endpoint_url: cfg.endpoint_url.clone(),
            api_key: std::env::var(&cfg.api_key_env_var_name).ok(),
        }
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &Value) -> Result<(u16, String), TextGenError> {
        let mut req = self.agent.post(&self.endpoint_url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(request).map_err(|e| TextGenError::Provider(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| TextGenError::Provider(e.to_string()))?;
        Ok((status, body))
    }
}

/// A recorded exchange: `{"status": 200, "body": <json or string>}` or
/// `{"error": "connection refused"}`.
#[derive(Debug, Clone, Deserialize)]
struct Fixture {
    #[serde(default = "ok_status")]
    status: u16,
    #[serde(default)]
    body: Value,
    error: Option<String>,
}

fn ok_status() -> u16 {
    200
}

/// Replays recorded responses in order, recording every request it receives.
#[derive(Debug)]
pub struct FixtureTransport {
    fixtures: Vec<(PathBuf, Fixture)>,
    cursor: Mutex<usize>,
    requests: Mutex<Vec<Value>>,
}

impl FixtureTransport {
    /// Loads every `*.json` file in `dir`, in file-name order.
    pub fn from_dir(dir: &Path) -> Result<Self, TextGenError> {
        let io = |e: std::io::Error| TextGenError::Provider(format!("{}: {e}", dir.display()));
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut fixtures = Vec::with_capacity(paths.len());
        for p in paths {
            let text = fs::read_to_string(&p).map_err(io)?;
            let f: Fixture = serde_json::from_str(&text)
                .map_err(|e| TextGenError::Provider(format!("bad fixture {}: {e}", p.display())))?;
            fixtures.push((p, f));
        }
        Ok(Self::new(fixtures))
    }

    /// Replays chat replies whose message content is given directly.
    pub fn from_contents<S: AsRef<str>>(contents: &[S]) -> Self {
        let fixtures = contents
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let f = Fixture { status: 200, body: chat_body(c.as_ref()), error: None };
                (PathBuf::from(format!("inline-{i}")), f)
            })
            .collect();
        Self::new(fixtures)
    }

    fn new(fixtures: Vec<(PathBuf, Fixture)>) -> Self {
        FixtureTransport { fixtures, cursor: Mutex::new(0), requests: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().expect("poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.fixtures.len() - *self.cursor.lock().expect("poisoned")
    }
}

/// A chat-completion response body carrying `content`.
pub fn chat_body(content: &str) -> Value {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})
}

impl ChatTransport for FixtureTransport {
    fn send(&self, request: &Value) -> Result<(u16, String), TextGenError> {
        self.requests.lock().expect("poisoned").push(request.clone());
        let mut cursor = self.cursor.lock().expect("poisoned");
        let (path, f) = self
            .fixtures
            .get(*cursor)
            .ok_or_else(|| TextGenError::Provider("fixture replay exhausted".into()))?;
        *cursor += 1;
        if let Some(e) = &f.error {
            return Err(TextGenError::Provider(format!("{}: {e}", path.display())));
        }
        let body = match &f.body {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        Ok((f.status, body))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(limit: usize) -> Self {
        Limiter { in_flight: Mutex::new(0), freed: Condvar::new(), limit: limit.max(1) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// A failed attempt and what went wrong.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub number: usize,
    pub error: String,
    /// Whether the failure was a parse failure (otherwise a validation failure).
    pub parse_failure: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmOutcome {
    pub utterance: AnnotatedUtterance,
    /// Failed attempts that preceded the accepted one.
    pub failed_attempts: Vec<Attempt>,
}

/// Chat-completion client; safe to share between threads.
pub struct LlmClient<'a> {
    cfg: LlmBackendConfig,
    transport: Box<dyn ChatTransport + 'a>,
    lexicon: &'a Lexicon,
    limiter: Limiter,
}

impl<'a> LlmClient<'a> {
    pub fn new(
        cfg: LlmBackendConfig,
        transport: Box<dyn ChatTransport + 'a>,
        lexicon: &'a Lexicon,
    ) -> Result<Self, TextGenError> {
        cfg.check()?;
        let limiter = Limiter::new(cfg.max_in_flight);
        Ok(LlmClient { cfg, transport, lexicon, limiter })
    }

    /// Client talking to `cfg.endpoint_url` over HTTP.
    pub fn http(cfg: LlmBackendConfig, lexicon: &'a Lexicon) -> Result<Self, TextGenError> {
        let transport = HttpTransport::from_config(&cfg);
        Self::new(cfg, Box::new(transport), lexicon)
    }

    pub fn config(&self) -> &LlmBackendConfig {
        &self.cfg
    }

    /// Asks the model for one dysfluency of `kind` in `clean_text`, retrying
    /// on unparsable or invalid replies up to `max_retries` times.
    ///
    /// When every attempt failed to parse the error is `ParseFailure`,
    /// otherwise `ValidationExhausted`. Provider errors are not retried.
    pub fn generate(
        &self,
        id: &str,
        clean_text: &str,
        kind: DysfluencyKind,
        context: Option<&PhoneContext>,
    ) -> Result<LlmOutcome, TextGenError> {
        let clean = self.clean_tokens(clean_text, kind.level())?;
        if clean.len() < 2 {
            return Err(TextGenError::TooShort { len: clean.len() });
        }
        let owned_ctx;
        let ctx = match context {
            Some(c) => Some(c),
            None => {
                owned_ctx = PhoneContext::from_text(clean_text, self.lexicon).ok();
                owned_ctx.as_ref()
            }
        };
        let prompt = render_prompt(self.cfg.template(kind)?, clean_text, kind, ctx);
        let mut messages = Vec::new();
        if let Some(system) = &self.cfg.system_prompt {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": prompt}));
        let request = json!({
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
        });

        let mut failed = Vec::new();
        let attempts = self.cfg.max_retries as usize + 1;
        for number in 1..=attempts {
            let (status, body) = {
                let _permit = self.limiter.acquire();
                self.transport.send(&request)?
            };
            if !(200..300).contains(&status) {
                return Err(TextGenError::Provider(format!("HTTP {status}: {}", truncate(&body, 200))));
            }
            let result = parse_reply(&body).map_err(|e| (e, true)).and_then(|text| {
                self.check_reply(id, &clean, &text, kind).map_err(|e| (e, false))
            });
            match result {
                Ok(utterance) => return Ok(LlmOutcome { utterance, failed_attempts: failed }),
                Err((error, parse_failure)) => {
                    log::debug!("{id}: attempt {number} rejected: {error}");
                    failed.push(Attempt { number, error, parse_failure });
                }
            }
        }
        let last = failed.last().map(|a| a.error.clone()).unwrap_or_default();
        if failed.iter().all(|a| a.parse_failure) {
            Err(TextGenError::ParseFailure(last))
        } else {
            Err(TextGenError::ValidationExhausted { attempts, last })
        }
    }

    fn clean_tokens(&self, text: &str, level: Level) -> Result<Vec<String>, TextGenError> {
        let words = tokenize_words(text);
        Ok(match level {
            Level::Word => words,
            Level::Phoneme => self.lexicon.phonemize(&words)?.into_iter().map(|p| p.phone).collect(),
        })
    }

    fn check_reply(
        &self,
        id: &str,
        clean: &[String],
        text: &str,
        kind: DysfluencyKind,
    ) -> Result<AnnotatedUtterance, String> {
        let dys = match kind.level() {
            Level::Word => tokenize_words(text),
            Level::Phoneme => phone_tokens(text),
        };
        let labels = derive_labels(kind.level(), clean, &dys).map_err(|e| e.to_string())?;
        let u = AnnotatedUtterance {
            id: id.to_string(),
            level: kind.level(),
            clean_tokens: clean.to_vec(),
            dysfluent_tokens: dys,
            labels,
            pause_request_s: None,
            prolong_request_s: None,
        };
        let report = validate(&u, self.lexicon);
        if !report.is_valid() {
            return Err(format!("invalid annotation: {report}"));
        }
        let found: Vec<String> = u.labels.iter().map(|l| l.kind.short_name()).collect();
        if !super::expected_single_kind(&u, kind) {
            return Err(format!("expected exactly one {}, found [{}]", kind.short_name(), found.join(", ")));
        }
        Ok(u)
    }
}

impl Generator for LlmClient<'_> {
    fn generate(
        &self,
        id: &str,
        text: &str,
        kind: DysfluencyKind,
        _seed: u64,
    ) -> Result<AnnotatedUtterance, TextGenError> {
        LlmClient::generate(self, id, text, kind, None).map(|o| o.utterance)
    }
}

/// One-shot generation against the configured HTTP endpoint.
pub fn llm_generate(
    clean_text: &str,
    kind: DysfluencyKind,
    context: Option<&PhoneContext>,
    cfg: &LlmBackendConfig,
    lexicon: &Lexicon,
) -> Result<AnnotatedUtterance, TextGenError> {
    let client = LlmClient::http(cfg.clone(), lexicon)?;
    client.generate("llm", clean_text, kind, context).map(|o| o.utterance)
}

/// Extracts `dysfluent_text` from a chat-completion body.
pub fn parse_reply(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response body is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("response has no choices[0].message.content")?;
    let (start, end) = match (content.find('{'), content.rfind('}')) {
        (Some(s), Some(e)) if s < e => (s, e),
        _ => return Err(format!("no JSON object in reply: {}", truncate(content, 120))),
    };
    let obj: Value =
        serde_json::from_str(&content[start..=end]).map_err(|e| format!("reply object is not valid JSON: {e}"))?;
    let text = obj
        .get("dysfluent_text")
        .and_then(Value::as_str)
        .ok_or("reply object has no string field dysfluent_text")?;
    if text.trim().is_empty() {
        return Err("dysfluent_text is empty".into());
    }
    Ok(text.to_string())
}

/// Phone tokens from a model reply: stress digits stripped, `|` dropped,
/// markers kept.
fn phone_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .flat_map(|t| t.split('|'))
        .filter(|t| !t.is_empty())
        .map(|t| {
            if is_marker(t) {
                t.to_string()
            } else {
                t.trim_end_matches(['0', '1', '2']).to_uppercase()
            }
        })
        .collect()
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Category;

    fn kind(level: Level, category: Category) -> DysfluencyKind {
        DysfluencyKind::new(level, category).unwrap()
    }

    fn reply(text: &str) -> String {
        json!({"dysfluent_text": text}).to_string()
    }

    fn client<'a>(contents: &[String], retries: u32) -> LlmClient<'a> {
        let cfg = LlmBackendConfig { max_retries: retries, ..Default::default() };
        LlmClient::new(cfg, Box::new(FixtureTransport::from_contents(contents)), Lexicon::bundled()).unwrap()
    }

    #[test]
    fn happy_path_pause() {
        let c = client(&[reply("the <pause> cat sat")], 0);
        let out = c.generate("u", "The cat sat", kind(Level::Word, Category::Pause), None).unwrap();
        assert_eq!(out.utterance.labels.len(), 1);
        assert_eq!(out.utterance.labels[0].kind.category(), Category::Pause);
        assert!(out.failed_attempts.is_empty());
    }

    #[test]
    fn missing_marker_exhausts_retries() {
        let c = client(&vec![reply("the cat sat"); 3], 2);
        let err = c.generate("u", "the cat sat", kind(Level::Word, Category::Pause), None).unwrap_err();
        assert!(matches!(err, TextGenError::ValidationExhausted { attempts: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_then_valid() {
        let c = client(&["Sure! Here you go: the the cat sat".to_string(), reply("the the cat sat")], 1);
        let out = c.generate("u", "the cat sat", kind(Level::Word, Category::Repetition), None).unwrap();
        assert_eq!(out.failed_attempts.len(), 1);
        assert!(out.failed_attempts[0].parse_failure);
        assert_eq!(out.utterance.dysfluent_text(), "the the cat sat");
    }

    #[test]
    fn only_malformed_is_parse_failure() {
        let c = client(&["nope".to_string(), "{\"text\": 1}".to_string()], 1);
        let err = c.generate("u", "the cat sat", kind(Level::Word, Category::Repetition), None).unwrap_err();
        assert!(matches!(err, TextGenError::ParseFailure(_)));
    }

    #[test]
    fn phoneme_reply_with_stress_and_separators() {
        let c = client(&[reply("DH AH0 | K AE1 <prolong> T")], 0);
        let out = c.generate("u", "the cat", kind(Level::Phoneme, Category::Prolongation), None).unwrap();
        assert_eq!(out.utterance.dysfluent_tokens, ["DH", "AH", "K", "AE", "<prolong>", "T"]);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let c = client(&[reply("the the cat sat")], 0);
        let err = c.generate("u", "the cat sat", kind(Level::Word, Category::Insertion), None).unwrap_err();
        assert!(matches!(err, TextGenError::ValidationExhausted { attempts: 1, .. }));
    }

    #[test]
    fn http_error_is_provider_error() {
        let f = Fixture { status: 401, body: json!({"error": "bad key"}), error: None };
        let t = FixtureTransport::new(vec![(PathBuf::from("401"), f)]);
        let c = LlmClient::new(LlmBackendConfig::default(), Box::new(t), Lexicon::bundled()).unwrap();
        let err = c.generate("u", "the cat sat", kind(Level::Word, Category::Pause), None).unwrap_err();
        assert!(matches!(err, TextGenError::Provider(_)));
    }

    #[test]
    fn prompt_carries_context() {
        let t = FixtureTransport::from_contents(&[reply("the <pause> cat")]);
        let c = LlmClient::new(LlmBackendConfig::default(), Box::new(t), Lexicon::bundled()).unwrap();
        c.generate("u", "the cat", kind(Level::Word, Category::Pause), None).unwrap();
        let ctx = PhoneContext::from_text("the cat", Lexicon::bundled()).unwrap();
        let prompt = render_prompt("{clean_text} / {cmu} / {ipa} / {kind}", "the cat", kind(Level::Word, Category::Pause), Some(&ctx));
        assert!(prompt.starts_with("the cat / DH AH | K AE T / "));
        assert!(!prompt.contains('{'));
    }

    #[test]
    fn config_requires_every_template() {
        let mut cfg = LlmBackendConfig::default();
        cfg.prompt_templates.remove("phn_pro");
        assert!(matches!(cfg.check(), Err(TextGenError::InvalidSpec(_))));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let limiter = Limiter::new(2);
        let now = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = limiter.acquire();
                    let n = now.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(n, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    now.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
