//! Discrete hyperparameter search spaces: definition, validation, enumeration,
//! sampling, and the genome encoding used by the evolutionary search.
//!
//! A space always holds exactly five parameters in a fixed gene order:
//! `temperature, top_k, top_p, repetition_penalty, max_new_tokens`.

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

use crate::util::{fmt_f64, round10};

/// Membership tolerance for grid points.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// Value sent to the backend when a configuration omits `repetition_penalty`.
pub const DEFAULT_REPETITION_PENALTY: f64 = 1.0;

/// Canonical gene order; fixed so single-point crossover is reproducible.
pub const PARAM_NAMES: [&str; 5] = [
    "temperature",
    "top_k",
    "top_p",
    "repetition_penalty",
    "max_new_tokens",
];

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("invalid range for {param}: min {min} > max {max}")]
    RangeInverted { param: &'static str, min: f64, max: f64 },
    #[error("invalid range for {param}: step {step} must be positive")]
    RangeBadStep { param: &'static str, step: f64 },
    #[error("invalid range for {param}: span {span} is not a multiple of step {step}")]
    RangeMisaligned { param: &'static str, span: f64, step: f64 },
    #[error("invalid enum for {param}: values must be nonempty and strictly increasing")]
    EnumNotIncreasing { param: &'static str },
    #[error("invalid domain for {param}: value {value} violates {constraint}")]
    DomainOutOfBounds {
        param: &'static str,
        value: f64,
        constraint: &'static str,
    },
    #[error("genome coordinate for {param} ({value}) is not a member of its domain")]
    GenomeOutOfDomain { param: &'static str, value: f64 },
}

/// One tunable parameter's set of admissible values: either an arithmetic grid
/// `min, min+step, ..., max` or an explicit ordered value list.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamDomain {
    Range { min: f64, max: f64, step: f64 },
    Enum { values: Vec<f64> },
}

impl ParamDomain {
    /// Builds a grid domain, checking `min <= max`, `step > 0` and that the
    /// span is an integer multiple of the step (within tolerance).
    pub fn range(param: &'static str, min: f64, max: f64, step: f64) -> Result<Self, SpaceError> {
        if min > max {
            return Err(SpaceError::RangeInverted { param, min, max });
        }
        if !step.is_finite() || step <= 0.0 {
            return Err(SpaceError::RangeBadStep { param, step });
        }
        let span = max - min;
        let steps = span / step;
        if (steps - steps.round()).abs() > GRID_TOLERANCE / step {
            return Err(SpaceError::RangeMisaligned { param, span, step });
        }
        Ok(ParamDomain::Range { min, max, step })
    }

    /// Builds an explicit value list, which must be strictly increasing.
    pub fn enumerated(param: &'static str, values: Vec<f64>) -> Result<Self, SpaceError> {
        if values.is_empty() || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SpaceError::EnumNotIncreasing { param });
        }
        Ok(ParamDomain::Enum { values })
    }

    /// Number of admissible values.
    pub fn size(&self) -> usize {
        match self {
            ParamDomain::Range { min, max, step } => ((max - min) / step).round() as usize + 1,
            ParamDomain::Enum { values } => values.len(),
        }
    }

    /// The `i`-th admissible value in ascending order. Grid points are
    /// materialized as `min + i*step` rounded to 10 decimal places.
    pub fn value_at(&self, i: usize) -> f64 {
        match self {
            ParamDomain::Range { min, step, .. } => round10(min + i as f64 * *step),
            ParamDomain::Enum { values } => values[i],
        }
    }

    /// All admissible values in ascending order.
    pub fn values(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.value_at(i)).collect()
    }

    /// Index of the admissible value within `GRID_TOLERANCE` of `x`, if any.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        match self {
            ParamDomain::Range { min, max, step } => {
                if x < min - GRID_TOLERANCE || x > max + GRID_TOLERANCE {
                    return None;
                }
                let i = ((x - min) / step).round();
                if i < 0.0 {
                    return None;
                }
                let i = i as usize;
                (i < self.size() && (x - self.value_at(i)).abs() <= GRID_TOLERANCE).then_some(i)
            }
            ParamDomain::Enum { values } => values
                .iter()
                .position(|v| (v - x).abs() <= GRID_TOLERANCE),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.index_of(x).is_some()
    }

    /// Draws one admissible value uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.value_at(rng.random_range(0..self.size()))
    }

    /// Smallest and largest admissible values.
    pub fn bounds(&self) -> (f64, f64) {
        (self.value_at(0), self.value_at(self.size() - 1))
    }
}

impl fmt::Display for ParamDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamDomain::Range { min, max, step } => {
                write!(f, "[{}, {}] step {}", fmt_f64(*min), fmt_f64(*max), fmt_f64(*step))
            }
            ParamDomain::Enum { values } => {
                let vs: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
                write!(f, "{{{}}}", vs.join(", "))
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DomainRepr {
    Range { range: [f64; 2], step: f64 },
    Values { values: Vec<f64> },
}

impl Serialize for ParamDomain {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let repr = match self {
            ParamDomain::Range { min, max, step } => DomainRepr::Range {
                range: [*min, *max],
                step: *step,
            },
            ParamDomain::Enum { values } => DomainRepr::Values {
                values: values.clone(),
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParamDomain {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = DomainRepr::deserialize(deserializer)?;
        match repr {
            DomainRepr::Range { range, step } => {
                ParamDomain::range("range", range[0], range[1], step).map_err(D::Error::custom)
            }
            DomainRepr::Values { values } => {
                ParamDomain::enumerated("values", values).map_err(D::Error::custom)
            }
        }
    }
}

/// The five-parameter search space in canonical gene order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchSpace {
    temperature: ParamDomain,
    top_k: ParamDomain,
    top_p: ParamDomain,
    repetition_penalty: ParamDomain,
    max_new_tokens: ParamDomain,
}

impl SearchSpace {
    pub fn new(
        temperature: ParamDomain,
        top_k: ParamDomain,
        top_p: ParamDomain,
        repetition_penalty: ParamDomain,
        max_new_tokens: ParamDomain,
    ) -> Result<Self, SpaceError> {
        check_domain(&temperature, "temperature", |v| v >= 0.0, "temperature >= 0")?;
        check_domain(&top_k, "top_k", |v| v >= 0.0 && is_integer(v), "integer top_k >= 0")?;
        check_domain(&top_p, "top_p", |v| v > 0.0 && v <= 1.0, "top_p in (0, 1]")?;
        check_domain(
            &repetition_penalty,
            "repetition_penalty",
            |v| v >= 1.0,
            "repetition_penalty >= 1",
        )?;
        check_domain(
            &max_new_tokens,
            "max_new_tokens",
            |v| v > 0.0 && is_integer(v),
            "integer max_new_tokens > 0",
        )?;
        Ok(Self {
            temperature,
            top_k,
            top_p,
            repetition_penalty,
            max_new_tokens,
        })
    }

    /// Domains in canonical gene order, paired with their names.
    pub fn domains(&self) -> [(&'static str, &ParamDomain); 5] {
        [
            ("temperature", &self.temperature),
            ("top_k", &self.top_k),
            ("top_p", &self.top_p),
            ("repetition_penalty", &self.repetition_penalty),
            ("max_new_tokens", &self.max_new_tokens),
        ]
    }

    pub fn domain(&self, gene: usize) -> &ParamDomain {
        self.domains()[gene].1
    }

    /// Product of per-parameter domain sizes.
    pub fn cardinality(&self) -> u64 {
        self.domains()
            .iter()
            .map(|(_, d)| d.size() as u64)
            .product()
    }

    /// Full Cartesian product in lexicographic gene order (first gene slowest).
    pub fn enumerate(&self) -> Vec<Configuration> {
        let values: Vec<Vec<f64>> = self.domains().iter().map(|(_, d)| d.values()).collect();
        let total = self.cardinality() as usize;
        let mut out = Vec::with_capacity(total);
        let mut idx = [0usize; 5];
        loop {
            out.push(config_from_genes([
                values[0][idx[0]],
                values[1][idx[1]],
                values[2][idx[2]],
                values[3][idx[3]],
                values[4][idx[4]],
            ]));
            // odometer, rightmost gene fastest
            let mut g = 4;
            loop {
                idx[g] += 1;
                if idx[g] < values[g].len() {
                    break;
                }
                idx[g] = 0;
                if g == 0 {
                    return out;
                }
                g -= 1;
            }
        }
    }

    /// Draws each parameter independently and uniformly from its domain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let genes = [
            self.temperature.sample(rng),
            self.top_k.sample(rng),
            self.top_p.sample(rng),
            self.repetition_penalty.sample(rng),
            self.max_new_tokens.sample(rng),
        ];
        config_from_genes(genes)
    }

    /// Checks every field of `config` for domain membership. Violations are
    /// data, not errors: an empty list means the configuration is in-space.
    pub fn validate(&self, config: &Configuration) -> Vec<Violation> {
        let genome = config.to_genome();
        self.domains()
            .iter()
            .zip(genome)
            .filter(|((_, domain), value)| !domain.contains(*value))
            .map(|((param, domain), value)| Violation {
                param,
                value,
                domain: domain.to_string(),
            })
            .collect()
    }

    /// Snaps a genome back to a configuration, requiring every coordinate to
    /// be a domain member within tolerance.
    pub fn from_genome(&self, genome: [f64; 5]) -> Result<Configuration, SpaceError> {
        let mut snapped = [0.0; 5];
        for (g, ((param, domain), value)) in self.domains().iter().zip(genome).enumerate() {
            let i = domain
                .index_of(value)
                .ok_or(SpaceError::GenomeOutOfDomain { param, value })?;
            snapped[g] = domain.value_at(i);
        }
        Ok(config_from_genes(snapped))
    }
}

impl<'de> Deserialize<'de> for SearchSpace {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            temperature: ParamDomain,
            top_k: ParamDomain,
            top_p: ParamDomain,
            repetition_penalty: ParamDomain,
            max_new_tokens: ParamDomain,
        }
        let r = Repr::deserialize(deserializer)?;
        SearchSpace::new(r.temperature, r.top_k, r.top_p, r.repetition_penalty, r.max_new_tokens)
            .map_err(D::Error::custom)
    }
}

fn check_domain(
    domain: &ParamDomain,
    param: &'static str,
    ok: impl Fn(f64) -> bool,
    constraint: &'static str,
) -> Result<(), SpaceError> {
    for v in domain.values() {
        if !ok(v) {
            return Err(SpaceError::DomainOutOfBounds {
                param,
                value: v,
                constraint,
            });
        }
    }
    Ok(())
}

fn is_integer(v: f64) -> bool {
    (v - v.round()).abs() <= GRID_TOLERANCE
}

fn config_from_genes(genes: [f64; 5]) -> Configuration {
    Configuration {
        temperature: genes[0],
        top_k: genes[1].round() as u32,
        top_p: genes[2],
        repetition_penalty: Some(genes[3]),
        max_new_tokens: genes[4].round() as u32,
    }
}

/// A domain-membership failure reported by [`SearchSpace::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub param: &'static str,
    pub value: f64,
    pub domain: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} outside {}", self.param, fmt_f64(self.value), self.domain)
    }
}

/// One concrete hyperparameter assignment. `repetition_penalty` may be absent,
/// in which case the gateway sends the backend default of 1.0; equality and
/// ordering treat an absent penalty and an explicit 1.0 as the same value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Configuration {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_penalty: Option<f64>,
    pub max_new_tokens: u32,
}

impl Configuration {
    pub fn new(
        temperature: f64,
        top_k: u32,
        top_p: f64,
        repetition_penalty: Option<f64>,
        max_new_tokens: u32,
    ) -> Self {
        Self {
            temperature,
            top_k,
            top_p,
            repetition_penalty,
            max_new_tokens,
        }
    }

    pub fn effective_repetition_penalty(&self) -> f64 {
        self.repetition_penalty.unwrap_or(DEFAULT_REPETITION_PENALTY)
    }

    /// Stable canonical text form, usable as a cache or memo key.
    pub fn canonical_key(&self) -> String {
        format!(
            "temperature={};top_k={};top_p={};repetition_penalty={};max_new_tokens={}",
            fmt_f64(self.temperature),
            self.top_k,
            fmt_f64(self.top_p),
            fmt_f64(self.effective_repetition_penalty()),
            self.max_new_tokens
        )
    }

    /// Real vector of length 5 in canonical gene order. An absent
    /// `repetition_penalty` encodes as the backend default.
    pub fn to_genome(&self) -> [f64; 5] {
        [
            self.temperature,
            f64::from(self.top_k),
            self.top_p,
            self.effective_repetition_penalty(),
            f64::from(self.max_new_tokens),
        ]
    }

    fn cmp_key(&self) -> [u64; 5] {
        self.to_genome().map(|v| round10(v).to_bits())
    }
}

impl PartialEq for Configuration {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key() == other.cmp_key()
    }
}

impl Eq for Configuration {}

impl std::hash::Hash for Configuration {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.cmp_key().hash(state);
    }
}

impl PartialOrd for Configuration {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Configuration {
    // All genome coordinates are nonnegative, so IEEE bit order is value order.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.cmp_key().cmp(&other.cmp_key())
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canonical_key())
    }
}

/// Stock spaces and configurations used throughout the harness.
pub mod presets {
    use super::*;

    /// The wide initial search space.
    pub fn wide_space() -> SearchSpace {
        SearchSpace::new(
            ParamDomain::range("temperature", 0.5, 2.0, 0.1).unwrap(),
            ParamDomain::enumerated("top_k", (0..=100).step_by(10).map(f64::from).collect())
                .unwrap(),
            ParamDomain::range("top_p", 0.5, 1.0, 0.1).unwrap(),
            ParamDomain::range("repetition_penalty", 1.0, 2.0, 0.1).unwrap(),
            ParamDomain::enumerated(
                "max_new_tokens",
                vec![512.0, 1024.0, 2048.0, 3072.0, 4096.0, 8192.0],
            )
            .unwrap(),
        )
        .unwrap()
    }

    /// The reduced space obtained from the global-search phase.
    pub fn reduced_space() -> SearchSpace {
        SearchSpace::new(
            ParamDomain::range("temperature", 1.0, 1.3, 0.1).unwrap(),
            ParamDomain::enumerated("top_k", vec![0.0, 50.0]).unwrap(),
            ParamDomain::range("top_p", 0.9, 1.0, 0.1).unwrap(),
            ParamDomain::enumerated("repetition_penalty", vec![1.0, 1.1, 1.2]).unwrap(),
            ParamDomain::enumerated(
                "max_new_tokens",
                vec![512.0, 1024.0, 2048.0, 3072.0, 4096.0],
            )
            .unwrap(),
        )
        .unwrap()
    }

    /// Llama's stock decoding configuration, the study baseline.
    pub fn llama_default() -> Configuration {
        Configuration::new(0.7, 50, 0.9, None, 4096)
    }

    /// The six tuned solutions, labeled in discovery order.
    pub fn optimal_solutions() -> Vec<(&'static str, Configuration)> {
        vec![
            ("S0", Configuration::new(0.6, 50, 1.0, None, 4096)),
            ("S1", Configuration::new(1.0, 0, 1.0, None, 2048)),
            ("S2", Configuration::new(1.1, 50, 0.9, None, 3072)),
            ("S3", Configuration::new(0.8, 50, 0.9, None, 4096)),
            ("S4", Configuration::new(1.1, 50, 0.9, None, 3072)),
            ("S5", Configuration::new(1.1, 50, 0.9, None, 4096)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn wide_space_cardinality() {
        assert_eq!(wide_space().cardinality(), 69_696);
        assert_eq!(wide_space().enumerate().len(), 69_696);
    }

    #[test]
    fn reduced_space_cardinality() {
        assert_eq!(reduced_space().cardinality(), 240);
        assert_eq!(reduced_space().enumerate().len(), 240);
    }

    #[test]
    fn single_value_space_enumerates_once() {
        let space = single_point_space();
        let configs = space.enumerate();
        assert_eq!(configs.len(), 1);
        assert_eq!(configs[0], Configuration::new(1.0, 50, 0.9, Some(1.0), 512));
    }

    #[test]
    fn enumerate_is_lexicographic_and_duplicate_free() {
        let space = reduced_space();
        let configs = space.enumerate();
        let mut sorted = configs.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), configs.len());
        assert_eq!(sorted, configs, "enumeration order is lexicographic");
    }

    #[test]
    fn enumerated_configs_validate() {
        let space = reduced_space();
        for c in space.enumerate() {
            assert!(space.validate(&c).is_empty(), "{c} must be in-space");
        }
    }

    #[test]
    fn sample_is_deterministic_given_seed() {
        let space = wide_space();
        let a = space.sample(&mut ChaCha12Rng::seed_from_u64(7));
        let b = space.sample(&mut ChaCha12Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_single_value_space_is_constant() {
        let space = single_point_space();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(space.sample(&mut rng), Configuration::new(1.0, 50, 0.9, Some(1.0), 512));
        }
    }

    #[test]
    fn sample_top_k_frequencies_are_uniform() {
        let space = wide_space();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            *counts.entry(space.sample(&mut rng).top_k).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 11);
        for (&k, &c) in &counts {
            let freq = f64::from(c) / f64::from(n);
            assert!(
                (freq - 1.0 / 11.0).abs() <= 0.02,
                "top_k {k} frequency {freq} outside 1/11 ± 0.02"
            );
        }
    }

    #[test]
    fn llama_default_validates_against_wide_space() {
        // Absent repetition_penalty counts as the backend default 1.0.
        assert!(wide_space().validate(&llama_default()).is_empty());
    }

    #[test]
    fn s0_temperature_violates_reduced_space() {
        let s0 = &optimal_solutions()[0].1;
        let violations = reduced_space().validate(s0);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].param, "temperature");
        assert_eq!(violations[0].value, 0.6);
    }

    #[test]
    fn grid_point_validates() {
        let space = wide_space();
        let c = Configuration::new(1.3, 20, 0.7, Some(1.5), 1024);
        assert!(space.validate(&c).is_empty());
    }

    #[test]
    fn genome_round_trip_s1() {
        let space = wide_space();
        let s1 = &optimal_solutions()[1].1;
        let genome = s1.to_genome();
        assert_eq!(genome, [1.0, 0.0, 1.0, 1.0, 2048.0]);
        assert_eq!(&space.from_genome(genome).unwrap(), s1);
    }

    #[test]
    fn from_genome_rejects_off_grid_coordinate() {
        let space = wide_space();
        let err = space.from_genome([0.55, 0.0, 1.0, 1.0, 2048.0]).unwrap_err();
        match err {
            SpaceError::GenomeOutOfDomain { param, value } => {
                assert_eq!(param, "temperature");
                assert_eq!(value, 0.55);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn genome_round_trip_exhaustive_small_space() {
        let space = SearchSpace::new(
            ParamDomain::range("temperature", 0.5, 0.7, 0.1).unwrap(),
            ParamDomain::enumerated("top_k", vec![0.0, 50.0, 100.0]).unwrap(),
            ParamDomain::range("top_p", 0.8, 1.0, 0.1).unwrap(),
            ParamDomain::enumerated("repetition_penalty", vec![1.0, 1.5, 2.0]).unwrap(),
            ParamDomain::enumerated("max_new_tokens", vec![512.0, 1024.0, 2048.0]).unwrap(),
        )
        .unwrap();
        for c in space.enumerate() {
            assert_eq!(space.from_genome(c.to_genome()).unwrap(), c);
        }
    }

    #[test]
    fn space_json_round_trip() {
        let space = wide_space();
        let json = serde_json::to_string(&space).unwrap();
        assert!(json.contains("\"range\":[0.5,2.0]"));
        assert!(json.contains("\"values\":[0.0,10.0"));
        let back: SearchSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, space);
    }

    #[test]
    fn space_json_rejects_bad_domains() {
        let bad = r#"{"temperature":{"range":[2.0,0.5],"step":0.1},
            "top_k":{"values":[0]},"top_p":{"values":[1.0]},
            "repetition_penalty":{"values":[1.0]},"max_new_tokens":{"values":[512]}}"#;
        assert!(serde_json::from_str::<SearchSpace>(bad).is_err());
        let misaligned = r#"{"temperature":{"range":[0.5,2.0],"step":0.4},
            "top_k":{"values":[0]},"top_p":{"values":[1.0]},
            "repetition_penalty":{"values":[1.0]},"max_new_tokens":{"values":[512]}}"#;
        assert!(serde_json::from_str::<SearchSpace>(misaligned).is_err());
    }

    #[test]
    fn config_json_is_flat_and_omits_absent_penalty() {
        let json = serde_json::to_string(&llama_default()).unwrap();
        assert_eq!(
            json,
            r#"{"temperature":0.7,"top_k":50,"top_p":0.9,"max_new_tokens":4096}"#
        );
        let c = Configuration::new(1.1, 50, 0.9, Some(1.2), 3072);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"repetition_penalty\":1.2"));
        assert_eq!(serde_json::from_str::<Configuration>(&json).unwrap(), c);
    }

    #[test]
    fn canonical_key_treats_absent_penalty_as_default() {
        let a = Configuration::new(0.7, 50, 0.9, None, 4096);
        let b = Configuration::new(0.7, 50, 0.9, Some(1.0), 4096);
        assert_eq!(a.canonical_key(), b.canonical_key());
        assert_eq!(a, b);
    }

    fn single_point_space() -> SearchSpace {
        SearchSpace::new(
            ParamDomain::enumerated("temperature", vec![1.0]).unwrap(),
            ParamDomain::enumerated("top_k", vec![50.0]).unwrap(),
            ParamDomain::enumerated("top_p", vec![0.9]).unwrap(),
            ParamDomain::enumerated("repetition_penalty", vec![1.0]).unwrap(),
            ParamDomain::enumerated("max_new_tokens", vec![512.0]).unwrap(),
        )
        .unwrap()
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_domain(param: &'static str, lo: f64, ints: bool) -> impl Strategy<Value = ParamDomain> {
            let range = (1usize..5, 1usize..4).prop_map(move |(start, steps)| {
                let step = if ints { 1.0 } else { 0.1 };
                let min = round10(lo + start as f64 * step);
                let max = round10(min + steps as f64 * step);
                ParamDomain::range(param, min, max, step).unwrap()
            });
            let en = proptest::collection::btree_set(1u32..40, 1..5).prop_map(move |s| {
                let values = s
                    .into_iter()
                    .map(|v| round10(lo + if ints { f64::from(v) } else { f64::from(v) * 0.02 }))
                    .collect();
                ParamDomain::enumerated(param, values).unwrap()
            });
            prop_oneof![range, en]
        }

        fn arb_space() -> impl Strategy<Value = SearchSpace> {
            (
                arb_domain("temperature", 0.0, false),
                arb_domain("top_k", 0.0, true),
                arb_domain("top_p", 0.0, false),
                arb_domain("repetition_penalty", 1.0, false),
                arb_domain("max_new_tokens", 1.0, true),
            )
                .prop_map(|(t, k, p, r, m)| SearchSpace::new(t, k, p, r, m).unwrap())
        }

        proptest! {
            #[test]
            fn enumerate_length_matches_cardinality(space in arb_space()) {
                let configs = space.enumerate();
                prop_assert_eq!(configs.len() as u64, space.cardinality());
            }

            #[test]
            fn enumerated_configs_are_in_space_and_round_trip(space in arb_space()) {
                for c in space.enumerate() {
                    prop_assert!(space.validate(&c).is_empty());
                    prop_assert_eq!(&space.from_genome(c.to_genome()).unwrap(), &c);
                }
            }

            #[test]
            fn samples_are_in_space(space in arb_space(), seed in any::<u64>()) {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                for _ in 0..16 {
                    let c = space.sample(&mut rng);
                    prop_assert!(space.validate(&c).is_empty());
                }
            }
        }
    }
}
