//! Generation gateway: issues chat-completion requests against an
//! OpenAI-compatible endpoint with a configuration's decoding
//! hyperparameters, caches responses on disk, retries transient failures,
//! and extracts model text from raw completions.
//!
//! Two deterministic mock backends support desk-scale testing: a plain mock
//! that emits an opaque hash-derived text, and a reference-emitting mock
//! whose token-level perturbation grows with temperature so that better
//! configurations measurably score higher downstream.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpspace::Configuration;
use crate::moo::BoxError;
use crate::util::{fmt_f64, fnv1a64, fnv1a64_parts};

/// Bearer token for remote backends.
pub const API_KEY_ENV: &str = "MODELTUNER_API_KEY";
/// Default remote base URL when the spec leaves it unset.
pub const BASE_URL_ENV: &str = "MODELTUNER_BASE_URL";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend spec invalid: {0}")]
    InvalidSpec(String),
    #[error("backend unavailable after {attempts} attempt(s): {source}")]
    BackendUnavailable {
        attempts: u32,
        #[source]
        source: BoxError,
    },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("response cache i/o failed: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible HTTP endpoint. `base_url` falls back to
    /// `MODELTUNER_BASE_URL` when absent.
    Remote { base_url: Option<String> },
    /// Deterministic opaque-text mock.
    Mock,
    /// Deterministic mock that emits a configured reference text with
    /// seed-controlled perturbations whose intensity grows with temperature.
    MockReference {
        references: Vec<MockReference>,
        noise: NoisePolicy,
    },
}

/// One emittable reference: the first entry whose `prompt_marker` occurs in
/// the prompt (an empty marker matches everything) is emitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockReference {
    #[serde(default)]
    pub prompt_marker: String,
    pub text: String,
}

/// Perturbation control for the reference-emitting mock. The per-token
/// corruption probability is `intensity * temperature`, clamped to [0, 1].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoisePolicy {
    pub intensity: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSpec {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_model_name")]
    pub model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
}

fn default_model_name() -> String {
    "meta-llama/Llama-3.1-8B-Instruct".to_string()
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_retries() -> u32 {
    3
}

fn default_concurrency() -> usize {
    1
}

impl BackendSpec {
    pub fn mock(model_name: &str) -> Self {
        Self {
            kind: BackendKind::Mock,
            model_name: model_name.to_string(),
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            concurrency_limit: default_concurrency(),
        }
    }

    pub fn mock_reference(references: Vec<MockReference>, noise: NoisePolicy) -> Self {
        Self {
            kind: BackendKind::MockReference { references, noise },
            model_name: default_model_name(),
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            concurrency_limit: default_concurrency(),
        }
    }

    pub fn remote(base_url: &str, model_name: &str) -> Self {
        Self {
            kind: BackendKind::Remote {
                base_url: Some(base_url.to_string()),
            },
            model_name: model_name.to_string(),
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            concurrency_limit: default_concurrency(),
        }
    }
}

/// Outcome of one generation request.
#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub raw_text: String,
    pub extracted_model: Option<String>,
    pub latency_ms: u64,
    pub cache_hit: bool,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct CacheStats {
    pub entries: usize,
}

// -- wire protocol (field names and order are part of the contract) --

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    top_k: u32,
    repetition_penalty: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

/// Canonical request body for a (model, prompt, configuration) triple.
/// Byte-stable: serde emits struct fields in declaration order.
pub fn request_body_json(model: &str, prompt: &str, config: &Configuration) -> String {
    let body = ChatRequest {
        model,
        messages: [ChatMessage {
            role: "user",
            content: prompt,
        }],
        temperature: config.temperature,
        top_p: config.top_p,
        max_tokens: config.max_new_tokens,
        top_k: config.top_k,
        repetition_penalty: config.effective_repetition_penalty(),
    };
    serde_json::to_string(&body).expect("request body serializes")
}

/// Pulls model text out of a raw completion: first the content of the first
/// fenced code block, else the slice from the first `<?xml` or
/// `<ecore:EPackage` to the last `>`. `None` signals the sentinel-fitness
/// path in the fitness layer.
pub fn extract_model(raw_text: &str) -> Option<String> {
    if let Some(open) = raw_text.find("```") {
        let after_fence = &raw_text[open + 3..];
        let body_start = after_fence.find('\n').map(|i| i + 1).unwrap_or(0);
        let body = &after_fence[body_start..];
        if let Some(close) = body.find("```") {
            let content = body[..close].trim();
            if !content.is_empty() {
                return Some(content.to_string());
            }
        }
    }
    let start = ["<?xml", "<ecore:EPackage"]
        .iter()
        .filter_map(|m| raw_text.find(m))
        .min()?;
    let end = raw_text.rfind('>')?;
    (end > start).then(|| raw_text[start..=end].to_string())
}

pub struct Gateway {
    spec: BackendSpec,
    base_url: Option<String>,
    cache_dir: PathBuf,
    client: Option<reqwest::blocking::Client>,
    write_lock: Mutex<()>,
}

impl Gateway {
    pub fn new(spec: BackendSpec, cache_dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        if spec.concurrency_limit < 1 {
            return Err(GatewayError::InvalidSpec(
                "concurrency_limit must be >= 1".to_string(),
            ));
        }
        let (base_url, client) = match &spec.kind {
            BackendKind::Remote { base_url } => {
                let url = base_url
                    .clone()
                    .or_else(|| std::env::var(BASE_URL_ENV).ok())
                    .ok_or_else(|| {
                        GatewayError::InvalidSpec(format!(
                            "remote backend needs base_url or {BASE_URL_ENV}"
                        ))
                    })?;
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(spec.request_timeout_secs))
                    .build()
                    .map_err(|e| GatewayError::InvalidSpec(e.to_string()))?;
                (Some(url.trim_end_matches('/').to_string()), Some(client))
            }
            _ => (None, None),
        };
        let cache_dir = cache_dir.into();
        std::fs::create_dir_all(&cache_dir)?;
        Ok(Self {
            spec,
            base_url,
            cache_dir,
            client,
            write_lock: Mutex::new(()),
        })
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.spec
    }

    pub fn concurrency_limit(&self) -> usize {
        self.spec.concurrency_limit
    }

    /// Issues (or replays from cache) one generation. Results are cached by
    /// (backend id, model name, prompt hash, canonical configuration,
    /// repetition index); a cached success is never re-requested.
    pub fn generate(
        &self,
        prompt: &str,
        config: &Configuration,
        rep_index: u32,
    ) -> Result<GenerationResult, GatewayError> {
        let started = Instant::now();
        let cache_path = self.cache_path(prompt, config, rep_index);
        if let Some(raw_body) = self.cache_read(&cache_path)? {
            let raw_text = parse_completion(&raw_body)?;
            return Ok(GenerationResult {
                extracted_model: extract_model(&raw_text),
                raw_text,
                latency_ms: started.elapsed().as_millis() as u64,
                cache_hit: true,
                attempt_count: 1,
            });
        }

        let (raw_body, attempt_count) = match &self.spec.kind {
            BackendKind::Mock => (self.mock_body(prompt, config, rep_index), 1),
            BackendKind::MockReference { references, noise } => (
                self.mock_reference_body(references, noise, prompt, config, rep_index),
                1,
            ),
            BackendKind::Remote { .. } => self.remote_request(prompt, config)?,
        };
        let raw_text = parse_completion(&raw_body)?;
        self.cache_write(&cache_path, &raw_body)?;
        Ok(GenerationResult {
            extracted_model: extract_model(&raw_text),
            raw_text,
            latency_ms: started.elapsed().as_millis() as u64,
            cache_hit: false,
            attempt_count,
        })
    }

    pub fn cache_stats(&self) -> CacheStats {
        let entries = std::fs::read_dir(&self.cache_dir)
            .map(|rd| rd.filter_map(Result::ok).count())
            .unwrap_or(0);
        CacheStats { entries }
    }

    fn backend_id(&self) -> String {
        match &self.spec.kind {
            BackendKind::Remote { .. } => {
                format!("remote:{}", self.base_url.as_deref().unwrap_or(""))
            }
            BackendKind::Mock => "mock".to_string(),
            BackendKind::MockReference { references, noise } => {
                let refs_hash = fnv1a64_parts(
                    &references
                        .iter()
                        .flat_map(|r| [r.prompt_marker.as_str(), r.text.as_str()])
                        .collect::<Vec<_>>(),
                );
                format!(
                    "mock_reference:{refs_hash:016x}:{}:{}",
                    fmt_f64(noise.intensity),
                    noise.seed
                )
            }
        }
    }

    fn cache_path(&self, prompt: &str, config: &Configuration, rep_index: u32) -> PathBuf {
        let key = format!(
            "{}\n{}\n{:016x}\n{}\n{}",
            self.backend_id(),
            self.spec.model_name,
            fnv1a64(prompt.as_bytes()),
            config.canonical_key(),
            rep_index
        );
        self.cache_dir.join(format!("{:016x}.json", fnv1a64(key.as_bytes())))
    }

    fn cache_read(&self, path: &Path) -> Result<Option<String>, GatewayError> {
        match std::fs::read_to_string(path) {
            Ok(body) => Ok(Some(body)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn cache_write(&self, path: &Path, body: &str) -> Result<(), GatewayError> {
        let _guard = self.write_lock.lock().unwrap();
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn mock_body(&self, prompt: &str, config: &Configuration, rep_index: u32) -> String {
        let h = fnv1a64_parts(&[
            "mock",
            &self.spec.model_name,
            prompt,
            &config.canonical_key(),
            &rep_index.to_string(),
        ]);
        completion_body(
            &self.spec.model_name,
            &format!("mock completion {h:016x} (rep {rep_index})"),
        )
    }

    fn mock_reference_body(
        &self,
        references: &[MockReference],
        noise: &NoisePolicy,
        prompt: &str,
        config: &Configuration,
        rep_index: u32,
    ) -> String {
        let chosen = references
            .iter()
            .find(|r| r.prompt_marker.is_empty() || prompt.contains(&r.prompt_marker))
            .unwrap_or(&references[0]);
        let emitted = perturb_reference(&chosen.text, noise, prompt, config, rep_index);
        completion_body(
            &self.spec.model_name,
            &format!("```\n{emitted}\n```"),
        )
    }

    fn remote_request(
        &self,
        prompt: &str,
        config: &Configuration,
    ) -> Result<(String, u32), GatewayError> {
        let client = self.client.as_ref().expect("remote gateway has a client");
        let url = format!(
            "{}/v1/chat/completions",
            self.base_url.as_deref().expect("remote gateway has a base url")
        );
        let body = request_body_json(&self.spec.model_name, prompt, config);
        log::debug!(
            "POST {url} with top_k/repetition_penalty extension fields (servers without them ignore these)"
        );
        let mut attempts = 0;
        let mut last_error: BoxError = "no attempt made".into();
        while attempts <= self.spec.max_retries {
            attempts += 1;
            let mut request = client
                .post(&url)
                .header("content-type", "application/json")
                .body(body.clone());
            if let Ok(key) = std::env::var(API_KEY_ENV) {
                request = request.bearer_auth(key);
            }
            match request.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        return Ok((text, attempts));
                    }
                    last_error = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()).into();
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        break;
                    }
                }
                Err(e) => last_error = Box::new(e),
            }
            if attempts <= self.spec.max_retries {
                std::thread::sleep(Duration::from_millis((50u64 << attempts.min(6)).min(5_000)));
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts,
            source: last_error,
        })
    }
}

/// Builds a chat-completions-shaped body so cached mock and remote responses
/// parse through the same path.
fn completion_body(model: &str, content: &str) -> String {
    serde_json::json!({
        "model": model,
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn parse_completion(raw_body: &str) -> Result<String, GatewayError> {
    let parsed: ChatResponse = serde_json::from_str(raw_body)
        .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| GatewayError::MalformedResponse("empty choices".to_string()))
}

/// Deterministic token-level corruption. Each token draws a unit value from
/// (seed, prompt, rep_index, position) — independent of the configuration —
/// and is replaced by a junk token when the value falls below
/// `intensity * temperature`. Raising the temperature therefore corrupts a
/// superset of the tokens corrupted at any lower temperature.
fn perturb_reference(
    reference: &str,
    noise: &NoisePolicy,
    prompt: &str,
    config: &Configuration,
    rep_index: u32,
) -> String {
    let p = (noise.intensity * config.temperature).clamp(0.0, 1.0);
    if p == 0.0 {
        return reference.to_string();
    }
    let prompt_hash = fnv1a64(prompt.as_bytes());
    reference
        .split_whitespace()
        .enumerate()
        .map(|(i, token)| {
            let h = fnv1a64_parts(&[
                &noise.seed.to_string(),
                &format!("{prompt_hash:016x}"),
                &rep_index.to_string(),
                &i.to_string(),
            ]);
            if unit_from_hash(h) < p {
                junk_token(h)
            } else {
                token.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn unit_from_hash(h: u64) -> f64 {
    // FNV-1a disperses poorly in the high bits for inputs differing only in
    // a short suffix; an xorshift-multiply finalizer fixes that before the
    // top 53 bits become the unit draw
    let mut z = h;
    z ^= z >> 33;
    z = z.wrapping_mul(0xff51_afd7_ed55_8ccd);
    z ^= z >> 33;
    z = z.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    z ^= z >> 33;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn junk_token(h: u64) -> String {
    format!("z{:08x}", (h ^ (h >> 32)) as u32)
}

/// Number of whitespace tokens differing between a perturbed emission and
/// its reference; test instrumentation for directional-sanity checks.
pub fn count_token_edits(reference: &str, emitted: &str) -> usize {
    let a: Vec<&str> = reference.split_whitespace().collect();
    let b: Vec<&str> = emitted.split_whitespace().collect();
    a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len())
}
