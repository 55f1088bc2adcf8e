//! Prompt sentiment to per-family likelihoods P(E|H).
//!
//! Two providers ship: a deterministic keyword lexicon, and a remote
//! completion endpoint that is asked to return a JSON map of family names to
//! danger values in [0, 1].

use std::collections::BTreeMap;
use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::{clamp_probability, CoefficientStore};

pub const ENV_URL: &str = "PROMPTNAV_LLM_URL";
pub const ENV_KEY: &str = "PROMPTNAV_LLM_KEY";
pub const ENV_TIMEOUT: &str = "PROMPTNAV_LLM_TIMEOUT_S";

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("no families to assess")]
    NoFamilies,
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider deadline of {0:?} exceeded")]
    Timeout(Duration),
    #[error("malformed reply ({reason}); raw reply: {raw}")]
    MalformedReply { reason: String, raw: String },
    #[error("reply has no value for family `{family}`; raw reply: {raw}")]
    MissingFamily { family: String, raw: String },
    #[error("reply value for family `{family}` is not a number; raw reply: {raw}")]
    NonNumeric { family: String, raw: String },
    #[error("trial {iteration}: {source}")]
    Trial {
        iteration: usize,
        #[source]
        source: Box<SentimentError>,
    },
}

impl SentimentError {
    /// Raw provider reply attached to the error, if any.
    pub fn raw_reply(&self) -> Option<&str> {
        match self {
            SentimentError::MalformedReply { raw, .. }
            | SentimentError::MissingFamily { raw, .. }
            | SentimentError::NonNumeric { raw, .. } => Some(raw),
            SentimentError::Trial { source, .. } => source.raw_reply(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikelihoodAssignment {
    pub likelihoods: BTreeMap<String, f64>,
    pub provider: String,
    pub raw_reply: String,
}

// ---------------------------------------------------------------------------
// Lexicon

/// Keyword sets for the deterministic provider. Override via JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lexicon {
    pub danger: Vec<String>,
    pub safe: Vec<String>,
    pub intensifiers: Vec<String>,
    pub intensifier_factor: f64,
    pub weight: f64,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon {
            danger: words(&[
                "dangerous", "danger", "hazard", "hazardous", "unsafe", "careful", "caution",
                "risky", "busy", "crowded", "cluttered",
            ]),
            safe: words(&["safe", "safely", "empty", "clear", "quickly", "fine", "calm"]),
            intensifiers: words(&["incredibly", "very", "extremely"]),
            intensifier_factor: 2.0,
            weight: 0.5,
        }
    }
}

/// Lowercased alphanumeric words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Lexicon {
    /// `0.5 + 0.5·tanh(w·(danger − safe))`. Intensifiers multiply the weight of
    /// the next sentiment word; a prompt without sentiment words scores 0.5.
    pub fn score(&self, prompt: &str) -> f64 {
        let mut danger = 0.0;
        let mut safe = 0.0;
        let mut boost = 1.0;
        for token in tokenize(prompt) {
            if self.intensifiers.contains(&token) {
                boost *= self.intensifier_factor;
            } else if self.danger.contains(&token) {
                danger += boost;
                boost = 1.0;
            } else if self.safe.contains(&token) {
                safe += boost;
                boost = 1.0;
            }
        }
        if danger == safe {
            return 0.5;
        }
        0.5 + 0.5 * (self.weight * (danger - safe)).tanh()
    }
}

/// Score with the default lexicon.
pub fn lexicon_score(prompt: &str) -> f64 {
    Lexicon::default().score(prompt)
}

fn mentions(prompt_tokens: &[String], family: &str) -> bool {
    let needle = tokenize(family);
    !needle.is_empty() && prompt_tokens.windows(needle.len()).any(|w| w == needle.as_slice())
}

// ---------------------------------------------------------------------------
// Providers

pub trait SentimentProvider: Send + Sync {
    fn tag(&self) -> &str;

    /// Likelihoods for every family. Must not depend on anything but its inputs
    /// and the provider's own state.
    fn assess(
        &self,
        prompt: &str,
        families: &[String],
        store: &CoefficientStore,
    ) -> Result<LikelihoodAssignment, SentimentError>;

    /// Initial danger coefficients for a scene's families.
    fn initial_priors(&self, families: &[String]) -> Result<BTreeMap<String, f64>, SentimentError>;
}

#[derive(Debug, Clone, Default)]
pub struct LexiconProvider {
    pub lexicon: Lexicon,
}

impl SentimentProvider for LexiconProvider {
    fn tag(&self) -> &str {
        "lexicon"
    }

    fn assess(
        &self,
        prompt: &str,
        families: &[String],
        _store: &CoefficientStore,
    ) -> Result<LikelihoodAssignment, SentimentError> {
        let score = clamp_probability(self.lexicon.score(prompt));
        let tokens = tokenize(prompt);
        let targeted: Vec<bool> = families.iter().map(|f| mentions(&tokens, f)).collect();
        let scoped = targeted.iter().any(|&t| t);
        let likelihoods = families
            .iter()
            .zip(&targeted)
            .map(|(f, &hit)| (f.clone(), if !scoped || hit { score } else { 0.5 }))
            .collect();
        Ok(LikelihoodAssignment {
            likelihoods,
            provider: self.tag().into(),
            raw_reply: format!("score={score}"),
        })
    }

    /// The lexicon has no opinion about family names; every prior is neutral.
    fn initial_priors(&self, families: &[String]) -> Result<BTreeMap<String, f64>, SentimentError> {
        Ok(families.iter().map(|f| (f.clone(), 0.5)).collect())
    }
}

/// Text-in/text-out completion call.
pub trait Completion: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, SentimentError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub evidence: &'static str,
    pub prior: &'static str,
}

pub const TEMPLATE_V1: PromptTemplate = PromptTemplate {
    id: "danger-json-v1",
    evidence: "You assess how dangerous it is for a construction robot to drive close to \
objects of each BIM family.\n\
Current danger coefficients (0 = completely safe, 1 = extremely dangerous): {coefficients}\n\
Operator prompt: {prompt}\n\
Given the operator prompt and the current coefficients, reply with ONLY a JSON object that \
maps each of these family names to a number between 0 and 1: {families}",
    prior: "You assess how dangerous it is for a construction robot to drive close to \
objects of each BIM family, considering dynamism, value and localization error.\n\
Reply with ONLY a JSON object that maps each of these family names to a danger number \
between 0 and 1: {families}",
};

pub fn template_by_id(id: &str) -> Option<PromptTemplate> {
    (id == TEMPLATE_V1.id).then_some(TEMPLATE_V1)
}

impl PromptTemplate {
    pub fn render_evidence(&self, prompt: &str, families: &[String], store: &CoefficientStore) -> String {
        let coefficients: BTreeMap<&str, f64> = families
            .iter()
            .filter_map(|f| store.posterior(f).map(|p| (f.as_str(), p)))
            .collect();
        self.evidence
            .replace("{coefficients}", &serde_json::to_string(&coefficients).unwrap())
            .replace("{families}", &serde_json::to_string(families).unwrap())
            .replace("{prompt}", &serde_json::to_string(prompt).unwrap())
    }

    pub fn render_prior(&self, families: &[String]) -> String {
        self.prior.replace("{families}", &serde_json::to_string(families).unwrap())
    }
}

pub struct RemoteProvider<C> {
    pub transport: C,
    pub template: PromptTemplate,
}

impl<C: Completion> RemoteProvider<C> {
    pub fn new(transport: C, template: PromptTemplate) -> Self {
        RemoteProvider { transport, template }
    }
}

impl<C: Completion> SentimentProvider for RemoteProvider<C> {
    fn tag(&self) -> &str {
        "remote"
    }

    fn assess(
        &self,
        prompt: &str,
        families: &[String],
        store: &CoefficientStore,
    ) -> Result<LikelihoodAssignment, SentimentError> {
        let request = self.template.render_evidence(prompt, families, store);
        let reply = self.transport.complete(&request)?;
        let mut assignment = parse_remote_reply(&reply, families)?;
        assignment.provider = self.tag().into();
        Ok(assignment)
    }

    fn initial_priors(&self, families: &[String]) -> Result<BTreeMap<String, f64>, SentimentError> {
        let reply = self.transport.complete(&self.template.render_prior(families))?;
        Ok(parse_remote_reply(&reply, families)?.likelihoods)
    }
}

/// Extracts the first JSON object in `reply` and reads one number per family,
/// clamped to `[ε, 1−ε]`. Extra keys are ignored.
pub fn parse_remote_reply(reply: &str, families: &[String]) -> Result<LikelihoodAssignment, SentimentError> {
    let object = first_json_object(reply).ok_or_else(|| SentimentError::MalformedReply {
        reason: "no JSON object found".into(),
        raw: reply.to_string(),
    })?;
    let mut likelihoods = BTreeMap::new();
    for family in families {
        let value = object.get(family).ok_or_else(|| SentimentError::MissingFamily {
            family: family.clone(),
            raw: reply.to_string(),
        })?;
        let number = value.as_f64().filter(|v| v.is_finite()).ok_or_else(|| {
            SentimentError::NonNumeric { family: family.clone(), raw: reply.to_string() }
        })?;
        likelihoods.insert(family.clone(), clamp_probability(number));
    }
    Ok(LikelihoodAssignment { likelihoods, provider: "remote".into(), raw_reply: reply.to_string() })
}

fn first_json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    for (pos, _) in text.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&text[pos..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// Runs a provider for the given families. Never touches the store.
pub fn analyze(
    provider: &dyn SentimentProvider,
    prompt: &str,
    families: &[String],
    store: &CoefficientStore,
) -> Result<LikelihoodAssignment, SentimentError> {
    if families.is_empty() {
        return Err(SentimentError::NoFamilies);
    }
    provider.assess(prompt, families, store)
}

// ---------------------------------------------------------------------------
// HTTP transport

/// Blocking HTTP completion client.
///
/// Sends `POST endpoint` with body `{"prompt": "..."}` and an optional bearer
/// token. The reply text is the `text` field of a JSON body, the first
/// choice of an OpenAI-style body, or the raw body otherwise.
#[derive(Debug, Clone)]
pub struct HttpCompletion {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpCompletion {
    fn attempt(&self, body: &str, budget: Duration) -> Result<String, Attempt> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(budget))
            .http_status_as_error(false)
            .build()
            .into();
        let mut request = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => Ok(extract_reply_text(text)),
            429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}: {text}"))),
            _ => Err(Attempt::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}

fn extract_reply_text(body: String) -> String {
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(&body) {
        if let Some(text) = map.get("text").and_then(|v| v.as_str()) {
            return text.to_string();
        }
        let choice = map.get("choices").and_then(|c| c.get(0));
        if let Some(text) = choice
            .and_then(|c| c.pointer("/message/content").or_else(|| c.get("text")))
            .and_then(|v| v.as_str())
        {
            return text.to_string();
        }
    }
    body
}

impl Completion for HttpCompletion {
    fn complete(&self, prompt: &str) -> Result<String, SentimentError> {
        let body = serde_json::json!({ "prompt": prompt }).to_string();
        let deadline = Instant::now() + self.timeout;
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(SentimentError::Timeout(self.timeout));
            }
            attempts += 1;
            match self.attempt(&body, remaining) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(message)) => {
                    return Err(SentimentError::Transport { attempts, message })
                }
                Err(Attempt::Retry(message)) => {
                    if attempts > self.retries {
                        return Err(SentimentError::Transport { attempts, message });
                    }
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    if delay >= remaining {
                        return Err(SentimentError::Transport { attempts, message });
                    }
                    thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Lexicon,
    Remote,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexicon" => Ok(ProviderKind::Lexicon),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!("unknown provider `{other}` (expected lexicon or remote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub auth_token_env: String,
    pub timeout: Duration,
    pub retries: u32,
    pub template_id: String,
    pub lexicon: Lexicon,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Lexicon,
            endpoint: None,
            auth_token_env: ENV_KEY.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
            template_id: TEMPLATE_V1.id.into(),
            lexicon: Lexicon::default(),
        }
    }
}

impl ProviderConfig {
    pub fn lexicon() -> Self {
        ProviderConfig::default()
    }

    /// Reads endpoint and timeout from `PROMPTNAV_LLM_*` variables.
    pub fn from_env(kind: ProviderKind) -> Result<Self, SentimentError> {
        let mut cfg = ProviderConfig { kind, ..ProviderConfig::default() };
        cfg.endpoint = std::env::var(ENV_URL).ok().filter(|s| !s.is_empty());
        if let Ok(raw) = std::env::var(ENV_TIMEOUT) {
            let secs: f64 = raw
                .trim()
                .parse()
                .map_err(|_| SentimentError::Config(format!("{ENV_TIMEOUT} is not a number: {raw}")))?;
            if !(secs.is_finite() && secs > 0.0) {
                return Err(SentimentError::Config(format!("{ENV_TIMEOUT} must be > 0")));
            }
            cfg.timeout = Duration::from_secs_f64(secs);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SentimentError> {
        if self.timeout.is_zero() {
            return Err(SentimentError::Config("timeout must be > 0".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint.is_none() {
            return Err(SentimentError::Config(format!(
                "remote provider requires an endpoint (set {ENV_URL})"
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn SentimentProvider>, SentimentError> {
        self.validate()?;
        match self.kind {
            ProviderKind::Lexicon => Ok(Box::new(LexiconProvider { lexicon: self.lexicon.clone() })),
            ProviderKind::Remote => {
                let template = template_by_id(&self.template_id).ok_or_else(|| {
                    SentimentError::Config(format!("unknown template `{}`", self.template_id))
                })?;
                let transport = HttpCompletion {
                    endpoint: self.endpoint.clone().unwrap_or_default(),
                    api_key: std::env::var(&self.auth_token_env).ok().filter(|k| !k.is_empty()),
                    timeout: self.timeout,
                    retries: self.retries,
                    backoff: Duration::from_millis(500),
                };
                Ok(Box::new(RemoteProvider::new(transport, template)))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Stability

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub prompt: String,
    pub trials: usize,
    pub families: BTreeMap<String, MeanStd>,
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.families.keys().map(String::len).max().unwrap_or(0).max(10);
        writeln!(f, "prompt: {:?} ({} trials)", self.prompt, self.trials)?;
        writeln!(f, "{:<width$}  danger", "BIM family")?;
        for (family, stat) in &self.families {
            writeln!(f, "{family:<width$}  {stat}")?;
        }
        Ok(())
    }
}

/// Mean and population standard deviation of `values`.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    // Shifted by the first sample so a constant series has exactly zero spread.
    let shift = values[0];
    let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Runs the provider `trials` times in sequence and summarizes each family.
pub fn stability_report(
    provider: &dyn SentimentProvider,
    prompt: &str,
    families: &[String],
    store: &CoefficientStore,
    trials: usize,
) -> Result<StabilityReport, SentimentError> {
    if trials == 0 {
        return Err(SentimentError::Config("trial count must be at least 1".into()));
    }
    let mut samples: BTreeMap<String, Vec<f64>> =
        families.iter().map(|f| (f.clone(), Vec::with_capacity(trials))).collect();
    for iteration in 0..trials {
        let assignment = analyze(provider, prompt, families, store)
            .map_err(|e| SentimentError::Trial { iteration, source: Box::new(e) })?;
        for (family, values) in samples.iter_mut() {
            values.push(assignment.likelihoods[family]);
        }
    }
    Ok(StabilityReport {
        prompt: prompt.to_string(),
        trials,
        families: samples.into_iter().map(|(k, v)| (k, mean_std(&v))).collect(),
    })
}
