//! Exhaustive evaluation of a (reduced) search space and extraction of the
//! Pareto-optimal configuration set.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpspace::{Configuration, SearchSpace};
use crate::moo::{self, ArchiveEntry, FitnessFn, FitnessVector, Individual};
use crate::util::{append_jsonl, read_jsonl};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("no points to filter")]
    EmptyInput,
    #[error("fitness evaluator failed: {0}")]
    Evaluator(#[source] moo::BoxError),
    #[error("checkpoint i/o failed: {0}")]
    Storage(#[from] std::io::Error),
}

/// One fully evaluated grid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    pub config: Configuration,
    pub fitness: FitnessVector,
}

/// A front member in the emitted result shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledSolution {
    pub id: String,
    pub config: Configuration,
    pub fitness: FitnessVector,
}

/// Labels front members `S0..S(k-1)` in discovery order.
pub fn label_front(front: &[EvaluatedPoint]) -> Vec<LabeledSolution> {
    front
        .iter()
        .enumerate()
        .map(|(i, p)| LabeledSolution {
            id: format!("S{i}"),
            config: p.config.clone(),
            fitness: p.fitness,
        })
        .collect()
}

/// Evaluates every configuration of the space in enumeration order. With a
/// checkpoint path, already-persisted points are not re-evaluated and each
/// new evaluation is appended immediately, so an interrupted search resumes
/// where it stopped. Evaluations of missing points may run concurrently up
/// to `parallelism`; persistence order stays the enumeration order.
pub fn grid_search(
    space: &SearchSpace,
    evaluator: &FitnessFn,
    checkpoint: Option<&Path>,
    parallelism: usize,
) -> Result<Vec<EvaluatedPoint>, GridError> {
    let configs = space.enumerate();
    let mut known: BTreeMap<Configuration, FitnessVector> = BTreeMap::new();
    if let Some(path) = checkpoint {
        for entry in read_jsonl::<ArchiveEntry>(path)? {
            known.insert(entry.config, entry.fitness);
        }
    }

    let batch_size = parallelism.max(1) * 8;
    let pending: Vec<Configuration> = configs
        .iter()
        .filter(|c| !known.contains_key(c))
        .cloned()
        .collect();
    for batch in pending.chunks(batch_size) {
        let results = moo::run_batch(batch, evaluator, parallelism.max(1));
        let mut new_entries = Vec::with_capacity(batch.len());
        for (config, result) in batch.iter().zip(results) {
            match result {
                Ok(fitness) => {
                    new_entries.push(ArchiveEntry {
                        run_id: "grid".to_string(),
                        generation: 0,
                        config: config.clone(),
                        fitness,
                    });
                    known.insert(config.clone(), fitness);
                }
                Err(err) => {
                    // persist what this batch completed before bailing out
                    if let Some(path) = checkpoint {
                        append_jsonl(path, &new_entries)?;
                    }
                    return Err(GridError::Evaluator(err));
                }
            }
        }
        if let Some(path) = checkpoint {
            append_jsonl(path, &new_entries)?;
        }
    }

    Ok(configs
        .into_iter()
        .map(|config| {
            let fitness = known[&config];
            EvaluatedPoint { config, fitness }
        })
        .collect())
}

/// Exactly the points not dominated by any input point, in input order.
/// Duplicates of a nondominated fitness are all retained.
pub fn pareto_front(points: &[EvaluatedPoint]) -> Result<Vec<EvaluatedPoint>, GridError> {
    if points.is_empty() {
        return Err(GridError::EmptyInput);
    }
    Ok(points
        .iter()
        .filter(|p| !points.iter().any(|q| q.fitness.dominates(&p.fitness)))
        .cloned()
        .collect())
}

/// Reads a persisted grid archive back into enumeration-independent points.
pub fn load_checkpoint(path: &Path) -> Result<Vec<EvaluatedPoint>, GridError> {
    Ok(read_jsonl::<ArchiveEntry>(path)?
        .into_iter()
        .map(|e| EvaluatedPoint {
            config: e.config,
            fitness: e.fitness,
        })
        .collect())
}

/// Cross-checks a front against the rank-0 set of the engine's
/// non-dominated sort over the same points.
pub fn rank_zero_of(points: &[EvaluatedPoint]) -> Vec<EvaluatedPoint> {
    let mut pop: Vec<Individual> = points
        .iter()
        .map(|p| Individual::evaluated(p.config.clone(), p.fitness))
        .collect();
    let fronts = moo::fast_nondominated_sort(&mut pop);
    fronts[0]
        .iter()
        .map(|&i| points[i].clone())
        .collect()
}
