//! Prompt construction for the three strategies: zero-shot, few-shot, and
//! chain-of-thought. Blocks are bare text separated by a single blank line,
//! with the domain text always last.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default task header. The real prompts ship with the experiment plan; this
/// constant reproduces the instruction block the harness uses out of the box.
pub const DEFAULT_TASK_HEADER: &str = "You are a domain modeling expert.\n\
Identify all entities in the text.\n\
Identify all attributes and data types.\n\
Identify all relationships among entities.\n\
Generate the output as an Ecore model.";

const BLOCK_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("strategy requires at least one worked example")]
    NoExamples,
    #[error("worked example {index} is missing {missing}")]
    IncompleteExample { index: usize, missing: &'static str },
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse failed: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    FewShot,
    ChainOfThought,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::ZeroShot, Strategy::FewShot, Strategy::ChainOfThought];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::FewShot => "few_shot",
            Strategy::ChainOfThought => "chain_of_thought",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" | "zero-shot" => Ok(Strategy::ZeroShot),
            "few_shot" | "few-shot" => Ok(Strategy::FewShot),
            "chain_of_thought" | "chain-of-thought" | "cot" => Ok(Strategy::ChainOfThought),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// One worked example. Few-shot use requires only `model_text`;
/// chain-of-thought additionally needs the description and derivation steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkedExample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<String>,
    pub model_text: String,
}

/// Everything needed to build one prompt.
#[derive(Debug, Clone)]
pub struct PromptSpec {
    pub strategy: Strategy,
    pub task_header: String,
    pub examples: Vec<WorkedExample>,
    pub domain_text: String,
}

impl PromptSpec {
    pub fn build(&self) -> Result<String, PromptError> {
        match self.strategy {
            Strategy::ZeroShot => build_zero_shot(&self.task_header, &self.domain_text),
            Strategy::FewShot => build_few_shot(&self.task_header, &self.examples, &self.domain_text),
            Strategy::ChainOfThought => {
                build_chain_of_thought(&self.task_header, &self.examples, &self.domain_text)
            }
        }
    }
}

fn require_nonempty(text: &str, what: &'static str) -> Result<(), PromptError> {
    if text.trim().is_empty() {
        Err(PromptError::EmptyInput(what))
    } else {
        Ok(())
    }
}

/// Task header followed by the domain text verbatim.
pub fn build_zero_shot(task_header: &str, domain_text: &str) -> Result<String, PromptError> {
    require_nonempty(task_header, "task_header")?;
    require_nonempty(domain_text, "domain_text")?;
    Ok([task_header, domain_text].join(BLOCK_SEPARATOR))
}

/// Task header, each example model verbatim in order, then the domain text.
pub fn build_few_shot(
    task_header: &str,
    examples: &[WorkedExample],
    domain_text: &str,
) -> Result<String, PromptError> {
    require_nonempty(task_header, "task_header")?;
    require_nonempty(domain_text, "domain_text")?;
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let mut blocks = vec![task_header];
    for (index, example) in examples.iter().enumerate() {
        if example.model_text.trim().is_empty() {
            return Err(PromptError::IncompleteExample {
                index,
                missing: "model_text",
            });
        }
        blocks.push(&example.model_text);
    }
    blocks.push(domain_text);
    Ok(blocks.join(BLOCK_SEPARATOR))
}

/// Task header, then per example the triple (description, steps, model text)
/// in that order, then the domain text.
pub fn build_chain_of_thought(
    task_header: &str,
    examples: &[WorkedExample],
    domain_text: &str,
) -> Result<String, PromptError> {
    require_nonempty(task_header, "task_header")?;
    require_nonempty(domain_text, "domain_text")?;
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let mut blocks = vec![task_header];
    for (index, example) in examples.iter().enumerate() {
        let description = example
            .description
            .as_deref()
            .filter(|d| !d.trim().is_empty())
            .ok_or(PromptError::IncompleteExample {
                index,
                missing: "description",
            })?;
        let steps = example
            .steps
            .as_deref()
            .filter(|s| !s.trim().is_empty())
            .ok_or(PromptError::IncompleteExample { index, missing: "steps" })?;
        if example.model_text.trim().is_empty() {
            return Err(PromptError::IncompleteExample {
                index,
                missing: "model_text",
            });
        }
        blocks.push(description);
        blocks.push(steps);
        blocks.push(&example.model_text);
    }
    blocks.push(domain_text);
    Ok(blocks.join(BLOCK_SEPARATOR))
}

#[derive(Deserialize)]
struct ManifestEntry {
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    steps: Option<String>,
    model_path: String,
}

#[derive(Deserialize)]
struct Manifest {
    examples: Vec<ManifestEntry>,
}

/// Loads worked examples from a JSON manifest
/// `{"examples":[{"description":..., "steps":..., "model_path":...}]}`, with
/// model texts read from the referenced files. Relative model paths resolve
/// against the manifest's directory.
pub fn load_examples_manifest(path: &Path) -> Result<Vec<WorkedExample>, ManifestError> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest
        .examples
        .into_iter()
        .map(|entry| {
            let model_path = base.join(&entry.model_path);
            let model_text = std::fs::read_to_string(&model_path)?.trim().to_string();
            Ok(WorkedExample {
                description: entry.description,
                steps: entry.steps,
                model_text,
            })
        })
        .collect()
}
