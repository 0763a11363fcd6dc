//! Similarity scoring between generated and reference model texts, and the
//! composition of generation + scoring into the search evaluator.
//!
//! Syntactic similarity is the cosine of the two term-frequency vectors.
//! Semantic similarity goes through the pluggable [`SemanticScorer`]: a
//! remote embedding/scoring service in production, a deterministic local
//! surrogate in tests.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::Gateway;
use crate::hpspace::Configuration;
use crate::moo::{BoxError, FitnessVector};
use crate::util::fnv1a64;

/// Fitness assigned to a configuration whose generation produced nothing
/// scoreable. Dominated by every fitness with syntactic > 0 or semantic > -1.
pub const SENTINEL_FITNESS: FitnessVector = FitnessVector {
    syntactic: 0.0,
    semantic: -1.0,
};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("semantic scorer unavailable after {attempts} attempt(s): {source}")]
    Unavailable {
        attempts: u32,
        #[source]
        source: BoxError,
    },
    #[error("semantic scorer returned a malformed response: {0}")]
    MalformedResponse(String),
}

/// Lowercases and splits on every non-alphanumeric character, dropping empty
/// fragments. Digits are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn term_frequencies(tokens: &[String]) -> HashMap<&str, u64> {
    let mut tf: HashMap<&str, u64> = HashMap::new();
    for t in tokens {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    tf
}

/// Cosine of the term-frequency vectors of the two texts' token streams.
/// Two syntactically equal documents score 1. If either token stream is
/// empty the score is 0, unless both are empty, which counts as equal.
pub fn cosine_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokenize(a), tokenize(b));
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let (fa, fb) = (term_frequencies(&ta), term_frequencies(&tb));
    let dot: f64 = fa
        .iter()
        .filter_map(|(tok, &ca)| fb.get(tok).map(|&cb| ca as f64 * cb as f64))
        .sum();
    // one sqrt of the product keeps equal vectors at exactly 1.0
    let sum_sq = |f: &HashMap<&str, u64>| f.values().map(|&c| (c * c) as f64).sum::<f64>();
    dot / (sum_sq(&fa) * sum_sq(&fb)).sqrt()
}

/// Scores the semantic similarity of a candidate text against a reference.
/// The self-similarity of any text is the maximum attainable value.
pub trait SemanticScorer: Sync {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScorerError>;
}

/// Delegates to the scorer and clamps the result into [-1, 1]. Any clamping
/// is logged, since it indicates a misbehaving scorer.
pub fn semantic_score(
    candidate: &str,
    reference: &str,
    scorer: &dyn SemanticScorer,
) -> Result<f64, ScorerError> {
    let raw = scorer.score(candidate, reference)?;
    if !(-1.0..=1.0).contains(&raw) {
        log::warn!("semantic score {raw} outside [-1, 1]; clamping");
    }
    Ok(raw.clamp(-1.0, 1.0))
}

/// Deterministic local stand-in for the remote scorer: cosine similarity of
/// hashed character-trigram count vectors. Symmetric, and exactly 1 for
/// identical texts.
#[derive(Debug, Default, Clone, Copy)]
pub struct SurrogateScorer;

impl SurrogateScorer {
    fn trigram_counts(text: &str) -> HashMap<u64, u64> {
        let chars: Vec<char> = text.chars().collect();
        let mut counts = HashMap::new();
        for window in chars.windows(3) {
            let trigram: String = window.iter().collect();
            *counts.entry(fnv1a64(trigram.as_bytes())).or_insert(0) += 1;
        }
        counts
    }
}

impl SemanticScorer for SurrogateScorer {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScorerError> {
        if candidate == reference {
            return Ok(1.0);
        }
        let (fa, fb) = (
            Self::trigram_counts(candidate),
            Self::trigram_counts(reference),
        );
        if fa.is_empty() || fb.is_empty() {
            return Ok(0.0);
        }
        let dot: f64 = fa
            .iter()
            .filter_map(|(h, &ca)| fb.get(h).map(|&cb| ca as f64 * cb as f64))
            .sum();
        let sum_sq = |f: &HashMap<u64, u64>| f.values().map(|&c| (c * c) as f64).sum::<f64>();
        Ok(dot / (sum_sq(&fa) * sum_sq(&fb)).sqrt())
    }
}

/// Calls an external scoring service: POST `{"candidate", "reference"}`,
/// response `{"score"}`. Transient failures retry with exponential backoff.
pub struct RemoteScorer {
    endpoint: String,
    max_retries: u32,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    candidate: &'a str,
    reference: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

impl RemoteScorer {
    pub fn new(endpoint: &str, timeout: Duration, max_retries: u32) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds");
        Self {
            endpoint: endpoint.to_string(),
            max_retries,
            client,
        }
    }
}

impl SemanticScorer for RemoteScorer {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, ScorerError> {
        let body = ScoreRequest { candidate, reference };
        let mut attempts = 0;
        let mut last_error: BoxError = "no attempt made".into();
        while attempts <= self.max_retries {
            attempts += 1;
            match self.client.post(&self.endpoint).json(&body).send() {
                Ok(resp) if resp.status().is_success() => {
                    let parsed: ScoreResponse = resp.json().map_err(|e| {
                        ScorerError::MalformedResponse(e.to_string())
                    })?;
                    return Ok(parsed.score);
                }
                Ok(resp) => {
                    let status = resp.status();
                    last_error = format!("scorer returned HTTP {status}").into();
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        break;
                    }
                }
                Err(e) => last_error = Box::new(e),
            }
            if attempts <= self.max_retries {
                std::thread::sleep(backoff(attempts));
            }
        }
        Err(ScorerError::Unavailable {
            attempts,
            source: last_error,
        })
    }
}

fn backoff(attempt: u32) -> Duration {
    Duration::from_millis((100u64 << attempt.min(6)).min(5_000))
}

/// The search-facing evaluator: generates a model for the configuration,
/// extracts it, and scores it against the reference. Fitnesses are memoized
/// by canonical configuration key (first writer wins), so a configuration
/// revisited across generations costs one generation call. Generation
/// failures become [`SENTINEL_FITNESS`] rather than aborting the search;
/// scorer failures are infrastructure errors and do abort.
pub struct SearchEvaluator<'a> {
    prompt: String,
    reference: String,
    gateway: &'a Gateway,
    scorer: &'a dyn SemanticScorer,
    repetitions: u32,
    memo: Mutex<HashMap<Configuration, FitnessVector>>,
}

impl<'a> SearchEvaluator<'a> {
    /// `repetitions` generations (rep indices `0..repetitions`) are averaged
    /// into one fitness per configuration.
    pub fn new(
        prompt: &str,
        reference: &str,
        gateway: &'a Gateway,
        scorer: &'a dyn SemanticScorer,
        repetitions: u32,
    ) -> Self {
        Self {
            prompt: prompt.to_string(),
            reference: reference.to_string(),
            gateway,
            scorer,
            repetitions: repetitions.max(1),
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn evaluate(&self, config: &Configuration) -> Result<FitnessVector, ScorerError> {
        if let Some(hit) = self.memo.lock().unwrap().get(config) {
            return Ok(*hit);
        }
        let mut syntactic = 0.0;
        let mut semantic = 0.0;
        for rep in 0..self.repetitions {
            let (syn, sem) = match self.gateway.generate(&self.prompt, config, rep) {
                Ok(result) => match result.extracted_model {
                    Some(model) => (
                        cosine_similarity(&model, &self.reference),
                        semantic_score(&model, &self.reference, self.scorer)?,
                    ),
                    None => {
                        log::warn!("no model extracted for {config} rep {rep}; sentinel fitness");
                        (SENTINEL_FITNESS.syntactic, SENTINEL_FITNESS.semantic)
                    }
                },
                Err(err) => {
                    log::warn!("generation failed for {config} rep {rep}: {err}; sentinel fitness");
                    (SENTINEL_FITNESS.syntactic, SENTINEL_FITNESS.semantic)
                }
            };
            syntactic += syn;
            semantic += sem;
        }
        let reps = f64::from(self.repetitions);
        let fitness = FitnessVector::new(syntactic / reps, semantic / reps);
        let mut memo = self.memo.lock().unwrap();
        Ok(*memo.entry(config.clone()).or_insert(fitness))
    }

    /// Adapter for the engine's boxed-error fitness signature.
    pub fn as_fitness_fn(&self) -> impl Fn(&Configuration) -> Result<FitnessVector, BoxError> + Sync + '_ {
        move |config| self.evaluate(config).map_err(|e| -> BoxError { Box::new(e) })
    }
}
