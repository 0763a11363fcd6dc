//! NSGA-II evolutionary search over a hyperparameter space, maximizing a
//! two-objective fitness, plus reduction of the space from final populations.
//!
//! The loop follows the fast elitist scheme of Deb et al.: evaluate the
//! population, select parents by binary tournament on (rank, crowding),
//! recombine with single-point crossover and uniform mutation, merge parents
//! and offspring, and survive the best by non-dominated front and crowding
//! distance.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpspace::{Configuration, ParamDomain, SearchSpace, SpaceError};
use crate::util::round10;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Total fitness function: one fitness for every in-space configuration.
/// Infrastructure failures (as opposed to bad generations, which the fitness
/// layer maps to a sentinel) surface as errors and abort the run.
pub type FitnessFn<'a> = dyn Fn(&Configuration) -> Result<FitnessVector, BoxError> + Sync + 'a;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("population size must be an even number >= 2, got {0}")]
    BadPopulationSize(usize),
    #[error("probability {name} must lie in [0, 1], got {value}")]
    BadProbability { name: &'static str, value: f64 },
    #[error("fitness evaluator failed: {0}")]
    Evaluator(#[source] BoxError),
    #[error("no final populations to reduce")]
    EmptyPopulations,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("archive persistence failed: {0}")]
    Storage(#[from] std::io::Error),
}

/// The two maximized objectives: syntactic (term-frequency cosine) and
/// semantic similarity against the reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessVector {
    pub syntactic: f64,
    pub semantic: f64,
}

impl FitnessVector {
    pub fn new(syntactic: f64, semantic: f64) -> Self {
        Self { syntactic, semantic }
    }

    /// Pareto dominance under maximization: no worse in both objectives and
    /// strictly better in at least one. Equal vectors never dominate.
    pub fn dominates(&self, other: &Self) -> bool {
        self.syntactic >= other.syntactic
            && self.semantic >= other.semantic
            && (self.syntactic > other.syntactic || self.semantic > other.semantic)
    }

    fn objectives(&self) -> [f64; 2] {
        [self.syntactic, self.semantic]
    }
}

pub fn dominates(a: &FitnessVector, b: &FitnessVector) -> bool {
    a.dominates(b)
}

/// One member of the evolving population. Rank and crowding are only set
/// after a non-dominated sort of the population the member belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Individual {
    pub config: Configuration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<FitnessVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip)]
    pub crowding: Option<f64>,
}

impl Individual {
    pub fn new(config: Configuration) -> Self {
        Self {
            config,
            fitness: None,
            rank: None,
            crowding: None,
        }
    }

    pub fn evaluated(config: Configuration, fitness: FitnessVector) -> Self {
        Self {
            config,
            fitness: Some(fitness),
            rank: None,
            crowding: None,
        }
    }

    fn fitness(&self) -> FitnessVector {
        self.fitness.expect("individual not evaluated")
    }
}

/// Whether the mutation probability triggers per individual (resampling all
/// five genes at once) or independently per gene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationGranularity {
    #[default]
    PerIndividual,
    PerGene,
}

/// Knobs of the evolutionary loop. `eval_parallelism` bounds how many fitness
/// evaluations of one batch run concurrently; results are joined by
/// configuration before any sorting, so the outcome does not depend on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub mutation_granularity: MutationGranularity,
    #[serde(default = "default_parallelism")]
    pub eval_parallelism: usize,
}

fn default_parallelism() -> usize {
    1
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self {
            population_size: 30,
            generations: 10,
            crossover_prob: 0.9,
            mutation_prob: 0.2,
            master_seed: 0,
            mutation_granularity: MutationGranularity::PerIndividual,
            eval_parallelism: 1,
        }
    }
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.population_size < 2 || !self.population_size.is_multiple_of(2) {
            return Err(EngineError::BadPopulationSize(self.population_size));
        }
        for (name, value) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(EngineError::BadProbability { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Individual>,
    pub generation: usize,
}

/// One fitness evaluation, as persisted to the JSONL archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub run_id: String,
    pub generation: usize,
    pub config: Configuration,
    pub fitness: FitnessVector,
}

#[derive(Debug)]
pub struct EvolveOutcome {
    pub final_population: Population,
    pub archive: Vec<ArchiveEntry>,
}

/// Fast non-dominated sort (Deb et al.). Returns the fronts as index lists:
/// front 0 is the Pareto-optimal subset, every member of front k+1 is
/// dominated by at least one member of front k, and the fronts partition the
/// population. Sets each individual's `rank` to its front index.
pub fn fast_nondominated_sort(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut current: Vec<usize> = Vec::new();

    for p in 0..n {
        for q in (p + 1)..n {
            let (fp, fq) = (pop[p].fitness(), pop[q].fitness());
            if fp.dominates(&fq) {
                dominated[p].push(q);
                domination_count[q] += 1;
            } else if fq.dominates(&fp) {
                dominated[q].push(p);
                domination_count[p] += 1;
            }
        }
        if domination_count[p] == 0 {
            current.push(p);
        }
    }

    let mut fronts = Vec::new();
    let mut rank = 0;
    while !current.is_empty() {
        for &i in &current {
            pop[i].rank = Some(rank);
        }
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
        rank += 1;
    }
    fronts
}

/// Crowding distance of each fitness in one front. Boundary members of each
/// objective get +infinity; interior members accumulate normalized neighbor
/// gaps; an objective with zero range contributes nothing.
pub fn crowding_distances(fitnesses: &[FitnessVector]) -> Vec<f64> {
    let n = fitnesses.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut dist = vec![0.0f64; n];
    for obj in 0..2 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            fitnesses[a].objectives()[obj]
                .partial_cmp(&fitnesses[b].objectives()[obj])
                .unwrap()
                .then(a.cmp(&b))
        });
        let lo = fitnesses[order[0]].objectives()[obj];
        let hi = fitnesses[order[n - 1]].objectives()[obj];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range == 0.0 {
            continue;
        }
        for w in 1..n - 1 {
            let prev = fitnesses[order[w - 1]].objectives()[obj];
            let next = fitnesses[order[w + 1]].objectives()[obj];
            dist[order[w]] += (next - prev) / range;
        }
    }
    dist
}

/// Computes and stores crowding distances front by front.
pub fn assign_crowding(pop: &mut [Individual], fronts: &[Vec<usize>]) {
    for front in fronts {
        let fitnesses: Vec<FitnessVector> = front.iter().map(|&i| pop[i].fitness()).collect();
        for (&i, d) in front.iter().zip(crowding_distances(&fitnesses)) {
            pop[i].crowding = Some(d);
        }
    }
}

/// Binary tournament on the crowded-comparison operator: draws two distinct
/// members uniformly and returns the one with the lower rank, breaking ties
/// by larger crowding distance and then by the first drawn.
pub fn binary_tournament<R: Rng + ?Sized>(members: &[Individual], rng: &mut R) -> usize {
    debug_assert!(members.len() >= 2);
    let first = rng.random_range(0..members.len());
    let second = loop {
        let j = rng.random_range(0..members.len());
        if j != first {
            break j;
        }
    };
    let (ra, rb) = (
        members[first].rank.expect("rank not set"),
        members[second].rank.expect("rank not set"),
    );
    if rb < ra {
        return second;
    }
    if ra < rb {
        return first;
    }
    let (ca, cb) = (
        members[first].crowding.expect("crowding not set"),
        members[second].crowding.expect("crowding not set"),
    );
    if cb > ca {
        second
    } else {
        first
    }
}

/// Mechanical recombination at cut index `k` in 1..=4 over the canonical
/// genome: child1 takes the first k genes of `p1` and the rest of `p2`.
pub fn crossover_at(
    p1: &Configuration,
    p2: &Configuration,
    k: usize,
    space: &SearchSpace,
) -> (Configuration, Configuration) {
    debug_assert!((1..=4).contains(&k));
    let (g1, g2) = (p1.to_genome(), p2.to_genome());
    let mut c1 = g1;
    let mut c2 = g2;
    c1[k..].copy_from_slice(&g2[k..]);
    c2[k..].copy_from_slice(&g1[k..]);
    let child = |g| {
        space
            .from_genome(g)
            .expect("genes of in-space parents stay in-space")
    };
    (child(c1), child(c2))
}

/// With probability `p_c`, recombines at a uniform cut; otherwise returns
/// copies of the parents.
pub fn single_point_crossover<R: Rng + ?Sized>(
    p1: &Configuration,
    p2: &Configuration,
    space: &SearchSpace,
    p_c: f64,
    rng: &mut R,
) -> (Configuration, Configuration) {
    if rng.random::<f64>() < p_c {
        let k = rng.random_range(1..5);
        crossover_at(p1, p2, k, space)
    } else {
        (p1.clone(), p2.clone())
    }
}

/// With probability `p_m` (per individual), resamples every gene uniformly
/// from its domain; otherwise returns the input unchanged.
pub fn uniform_mutation<R: Rng + ?Sized>(
    config: &Configuration,
    space: &SearchSpace,
    p_m: f64,
    rng: &mut R,
) -> Configuration {
    if rng.random::<f64>() < p_m {
        space.sample(rng)
    } else {
        config.clone()
    }
}

/// Alternative reading of the mutation rate: each gene independently
/// resamples with probability `p_m`.
pub fn uniform_mutation_per_gene<R: Rng + ?Sized>(
    config: &Configuration,
    space: &SearchSpace,
    p_m: f64,
    rng: &mut R,
) -> Configuration {
    let mut genome = config.to_genome();
    for (gene, (_, domain)) in space.domains().iter().enumerate() {
        if rng.random::<f64>() < p_m {
            genome[gene] = domain.sample(rng);
        }
    }
    space
        .from_genome(genome)
        .expect("resampled genes stay in-space")
}

/// Survival step: keeps the best `n` of the merged population by
/// (rank, crowding), truncating the boundary front by descending crowding
/// distance with index-order tie-break.
pub fn environmental_selection(mut merged: Vec<Individual>, n: usize) -> Vec<Individual> {
    let fronts = fast_nondominated_sort(&mut merged);
    assign_crowding(&mut merged, &fronts);
    let mut next: Vec<Individual> = Vec::with_capacity(n);
    for front in fronts {
        if next.len() == n {
            break;
        }
        if next.len() + front.len() <= n {
            next.extend(front.iter().map(|&i| merged[i].clone()));
        } else {
            let mut by_crowding = front.clone();
            by_crowding.sort_by(|&a, &b| {
                merged[b]
                    .crowding
                    .partial_cmp(&merged[a].crowding)
                    .unwrap()
            });
            let take = n - next.len();
            next.extend(by_crowding.into_iter().take(take).map(|i| merged[i].clone()));
        }
    }
    next
}

/// Runs the full NSGA-II loop and returns the final population with ranks and
/// crowding assigned, plus the archive of every evaluation performed.
/// When `archive_path` is given, entries are appended as JSONL as they are
/// produced, so an aborted run still leaves a partial archive behind.
pub fn evolve(
    space: &SearchSpace,
    evaluator: &FitnessFn,
    params: &EvolutionParams,
    run_id: &str,
    archive_path: Option<&Path>,
) -> Result<EvolveOutcome, EngineError> {
    params.validate()?;
    let n = params.population_size;
    let mut rng = ChaCha12Rng::seed_from_u64(params.master_seed);
    let mut engine = EngineState::new(run_id, archive_path, params.eval_parallelism)?;

    let mut members: Vec<Individual> =
        (0..n).map(|_| Individual::new(space.sample(&mut rng))).collect();
    engine.evaluate(&mut members, evaluator, 0)?;

    for t in 0..params.generations {
        let fronts = fast_nondominated_sort(&mut members);
        assign_crowding(&mut members, &fronts);

        let parents: Vec<usize> =
            (0..n).map(|_| binary_tournament(&members, &mut rng)).collect();
        let mut offspring: Vec<Individual> = Vec::with_capacity(n);
        for pair in parents.chunks(2) {
            let (c1, c2) = single_point_crossover(
                &members[pair[0]].config,
                &members[pair[1]].config,
                space,
                params.crossover_prob,
                &mut rng,
            );
            for child in [c1, c2] {
                let mutated = match params.mutation_granularity {
                    MutationGranularity::PerIndividual => {
                        uniform_mutation(&child, space, params.mutation_prob, &mut rng)
                    }
                    MutationGranularity::PerGene => {
                        uniform_mutation_per_gene(&child, space, params.mutation_prob, &mut rng)
                    }
                };
                offspring.push(Individual::new(mutated));
            }
        }
        engine.evaluate(&mut offspring, evaluator, t + 1)?;

        let mut merged = members;
        merged.extend(offspring);
        members = environmental_selection(merged, n);
    }

    let fronts = fast_nondominated_sort(&mut members);
    assign_crowding(&mut members, &fronts);
    Ok(EvolveOutcome {
        final_population: Population {
            members,
            generation: params.generations,
        },
        archive: engine.archive,
    })
}

/// Narrows each parameter of `original` to what the final populations
/// actually contain: ranges span the observed min..max at the original step,
/// enumerations keep exactly the observed values.
pub fn reduce_space(
    final_populations: &[Population],
    original: &SearchSpace,
) -> Result<SearchSpace, EngineError> {
    let configs: Vec<&Configuration> = final_populations
        .iter()
        .flat_map(|p| p.members.iter().map(|m| &m.config))
        .collect();
    if configs.is_empty() {
        return Err(EngineError::EmptyPopulations);
    }

    let mut domains: Vec<ParamDomain> = Vec::with_capacity(5);
    for (gene, (param, domain)) in original.domains().into_iter().enumerate() {
        let mut observed: Vec<f64> =
            configs.iter().map(|c| round10(c.to_genome()[gene])).collect();
        observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        observed.dedup();
        let reduced = match domain {
            ParamDomain::Range { step, .. } => {
                ParamDomain::range(param, observed[0], *observed.last().unwrap(), *step)?
            }
            ParamDomain::Enum { .. } => ParamDomain::enumerated(param, observed)?,
        };
        domains.push(reduced);
    }
    let mut it = domains.into_iter();
    Ok(SearchSpace::new(
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    )?)
}

struct EngineState {
    run_id: String,
    archive: Vec<ArchiveEntry>,
    evaluated: BTreeMap<Configuration, FitnessVector>,
    archive_file: Option<std::fs::File>,
    parallelism: usize,
}

impl EngineState {
    fn new(
        run_id: &str,
        archive_path: Option<&Path>,
        parallelism: usize,
    ) -> Result<Self, EngineError> {
        let archive_file = match archive_path {
            Some(p) => Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)?,
            ),
            None => None,
        };
        Ok(Self {
            run_id: run_id.to_string(),
            archive: Vec::new(),
            evaluated: BTreeMap::new(),
            archive_file,
            parallelism: parallelism.max(1),
        })
    }

    /// Fills in fitnesses for a batch, dispatching cache misses concurrently
    /// up to `parallelism` and joining results by configuration so the
    /// outcome is independent of completion order. Each first evaluation of a
    /// configuration is archived under the generation that requested it.
    fn evaluate(
        &mut self,
        batch: &mut [Individual],
        evaluator: &FitnessFn,
        generation: usize,
    ) -> Result<(), EngineError> {
        let mut pending: Vec<Configuration> = Vec::new();
        for ind in batch.iter() {
            if !self.evaluated.contains_key(&ind.config) && !pending.contains(&ind.config) {
                pending.push(ind.config.clone());
            }
        }

        let results = run_batch(&pending, evaluator, self.parallelism);
        let mut first_error = None;
        for (config, result) in pending.into_iter().zip(results) {
            match result {
                Ok(fitness) => {
                    let entry = ArchiveEntry {
                        run_id: self.run_id.clone(),
                        generation,
                        config: config.clone(),
                        fitness,
                    };
                    if let Some(file) = self.archive_file.as_mut() {
                        let line =
                            serde_json::to_string(&entry).expect("archive entry serializes");
                        writeln!(file, "{line}")?;
                    }
                    self.archive.push(entry);
                    self.evaluated.insert(config, fitness);
                }
                Err(err) => {
                    if first_error.is_none() {
                        first_error = Some(err);
                    }
                }
            }
        }
        if let Some(file) = self.archive_file.as_mut() {
            file.flush()?;
        }
        if let Some(err) = first_error {
            return Err(EngineError::Evaluator(err));
        }

        for ind in batch.iter_mut() {
            ind.fitness = Some(self.evaluated[&ind.config]);
            ind.rank = None;
            ind.crowding = None;
        }
        Ok(())
    }
}

pub(crate) fn run_batch(
    configs: &[Configuration],
    evaluator: &FitnessFn,
    parallelism: usize,
) -> Vec<Result<FitnessVector, BoxError>> {
    crate::util::scoped_map(configs, parallelism, evaluator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpspace::presets::{llama_default, wide_space};

    fn fv(s: f64, m: f64) -> FitnessVector {
        FitnessVector::new(s, m)
    }

    fn pop_of(fitnesses: &[(f64, f64)]) -> Vec<Individual> {
        fitnesses
            .iter()
            .map(|&(s, m)| Individual::evaluated(llama_default(), fv(s, m)))
            .collect()
    }

    #[test]
    fn dominance_basic_cases() {
        assert!(fv(1.0, 1.0).dominates(&fv(0.5, 0.5)));
        assert!(!fv(1.0, 0.0).dominates(&fv(0.0, 1.0)));
        assert!(!fv(0.0, 1.0).dominates(&fv(1.0, 0.0)));
        assert!(!fv(0.7, 0.7).dominates(&fv(0.7, 0.7)));
    }

    #[test]
    fn sort_example_fronts() {
        let mut pop = pop_of(&[(1.0, 1.0), (0.0, 2.0), (2.0, 0.0), (0.0, 0.0)]);
        let fronts = fast_nondominated_sort(&mut pop);
        assert_eq!(fronts, vec![vec![0, 1, 2], vec![3]]);
        assert_eq!(pop[3].rank, Some(1));
    }

    #[test]
    fn sort_identical_fitnesses_single_front() {
        let mut pop = pop_of(&[(0.5, 0.5); 4]);
        let fronts = fast_nondominated_sort(&mut pop);
        assert_eq!(fronts, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn sort_strict_chain_gives_singleton_fronts() {
        let mut pop = pop_of(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        let fronts = fast_nondominated_sort(&mut pop);
        assert_eq!(fronts, vec![vec![2], vec![1], vec![0]]);
    }

    #[test]
    fn crowding_middle_point() {
        let d = crowding_distances(&[fv(0.0, 2.0), fv(1.0, 1.0), fv(2.0, 0.0)]);
        assert_eq!(d[0], f64::INFINITY);
        assert!((d[1] - 2.0).abs() < 1e-12);
        assert_eq!(d[2], f64::INFINITY);
    }

    #[test]
    fn crowding_small_fronts_all_infinite() {
        assert_eq!(crowding_distances(&[fv(1.0, 1.0)]), vec![f64::INFINITY]);
        assert_eq!(
            crowding_distances(&[fv(1.0, 0.0), fv(0.0, 1.0)]),
            vec![f64::INFINITY; 2]
        );
    }

    #[test]
    fn crowding_identical_fitnesses_interior_zero() {
        let d = crowding_distances(&[fv(0.5, 0.5); 4]);
        assert_eq!(d[0], f64::INFINITY);
        assert_eq!(d[3], f64::INFINITY);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn tournament_rank_and_crowding_order() {
        let mut pop = pop_of(&[(1.0, 1.0), (0.0, 0.0)]);
        fast_nondominated_sort(&mut pop);
        pop[0].crowding = Some(f64::INFINITY);
        pop[1].crowding = Some(f64::INFINITY);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(binary_tournament(&pop, &mut rng), 0, "lower rank always wins");
        }

        // equal ranks: larger crowding wins
        let mut pop = pop_of(&[(1.0, 0.0), (0.0, 1.0)]);
        fast_nondominated_sort(&mut pop);
        pop[0].crowding = Some(f64::INFINITY);
        pop[1].crowding = Some(0.5);
        for _ in 0..20 {
            assert_eq!(binary_tournament(&pop, &mut rng), 0, "larger crowding wins");
        }
    }

    #[test]
    fn tournament_full_tie_returns_first_drawn() {
        let mut pop = pop_of(&[(0.5, 0.5), (0.5, 0.5), (0.5, 0.5)]);
        let fronts = fast_nondominated_sort(&mut pop);
        assign_crowding(&mut pop, &fronts);
        for m in &mut pop {
            m.crowding = Some(1.0);
        }
        for seed in 0..50 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut probe = rng.clone();
            let expected_first = probe.random_range(0..pop.len());
            assert_eq!(binary_tournament(&pop, &mut rng), expected_first);
        }
    }

    #[test]
    fn crossover_cut_two_swaps_tail() {
        let space = wide_space();
        let p1 = Configuration::new(0.6, 50, 1.0, Some(1.0), 4096);
        let p2 = Configuration::new(1.1, 0, 0.9, Some(1.2), 2048);
        let (c1, c2) = crossover_at(&p1, &p2, 2, &space);
        assert_eq!(c1, Configuration::new(0.6, 50, 0.9, Some(1.2), 2048));
        assert_eq!(c2, Configuration::new(1.1, 0, 1.0, Some(1.0), 4096));
    }

    #[test]
    fn crossover_identical_parents_any_cut() {
        let space = wide_space();
        let p = Configuration::new(0.8, 20, 0.7, Some(1.4), 1024);
        for k in 1..=4 {
            let (c1, c2) = crossover_at(&p, &p, k, &space);
            assert_eq!(c1, p);
            assert_eq!(c2, p);
        }
    }

    #[test]
    fn crossover_not_triggered_copies_parents() {
        let space = wide_space();
        let p1 = Configuration::new(0.6, 50, 1.0, Some(1.0), 4096);
        let p2 = Configuration::new(1.1, 0, 0.9, Some(1.2), 2048);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (c1, c2) = single_point_crossover(&p1, &p2, &space, 0.0, &mut rng);
        assert_eq!(c1, p1);
        assert_eq!(c2, p2);
    }

    #[test]
    fn mutation_not_triggered_returns_input() {
        let space = wide_space();
        let c = Configuration::new(0.6, 50, 1.0, Some(1.0), 4096);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        assert_eq!(uniform_mutation(&c, &space, 0.0, &mut rng), c);
    }

    #[test]
    fn mutation_on_single_value_space_is_identity() {
        let space = SearchSpace::new(
            ParamDomain::enumerated("temperature", vec![1.0]).unwrap(),
            ParamDomain::enumerated("top_k", vec![50.0]).unwrap(),
            ParamDomain::enumerated("top_p", vec![0.9]).unwrap(),
            ParamDomain::enumerated("repetition_penalty", vec![1.0]).unwrap(),
            ParamDomain::enumerated("max_new_tokens", vec![512.0]).unwrap(),
        )
        .unwrap();
        let c = Configuration::new(1.0, 50, 0.9, Some(1.0), 512);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        assert_eq!(uniform_mutation(&c, &space, 1.0, &mut rng), c);
    }

    #[test]
    fn mutation_triggered_resamples_all_genes_deterministically() {
        let space = wide_space();
        let c = Configuration::new(0.6, 50, 1.0, Some(1.0), 4096);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut probe = rng.clone();
        let _trigger: f64 = probe.random();
        let expected = space.sample(&mut probe);
        assert_eq!(uniform_mutation(&c, &space, 1.0, &mut rng), expected);
    }

    #[test]
    fn per_gene_mutation_rates_zero_and_one() {
        let space = wide_space();
        let c = Configuration::new(0.6, 50, 1.0, Some(1.0), 4096);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        assert_eq!(uniform_mutation_per_gene(&c, &space, 0.0, &mut rng), c);
        // rate 1 resamples every gene through the same draws as a fresh sample
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mutated = uniform_mutation_per_gene(&c, &space, 1.0, &mut rng);
        assert!(space.validate(&mutated).is_empty());
        let mut probe = ChaCha12Rng::seed_from_u64(13);
        let expected = {
            let mut genome = c.to_genome();
            for (gene, (_, domain)) in space.domains().iter().enumerate() {
                let _trigger: f64 = probe.random();
                genome[gene] = domain.sample(&mut probe);
            }
            space.from_genome(genome).unwrap()
        };
        assert_eq!(mutated, expected);
    }

    #[test]
    fn evolve_with_per_gene_mutation_stays_in_space() {
        let space = wide_space();
        let params = EvolutionParams {
            population_size: 8,
            generations: 3,
            master_seed: 21,
            mutation_granularity: MutationGranularity::PerGene,
            ..EvolutionParams::default()
        };
        let out = evolve(&space, &synthetic_evaluator, &params, "r", None).unwrap();
        for m in &out.final_population.members {
            assert!(space.validate(&m.config).is_empty());
        }
    }

    fn synthetic_evaluator(c: &Configuration) -> Result<FitnessVector, BoxError> {
        Ok(fv(1.0 - (c.temperature - 1.0).abs() / 1.5, c.top_p))
    }

    #[test]
    fn evolve_zero_generations_returns_evaluated_initial_population() {
        let space = wide_space();
        let params = EvolutionParams {
            generations: 0,
            master_seed: 17,
            ..EvolutionParams::default()
        };
        let out = evolve(&space, &synthetic_evaluator, &params, "t", None).unwrap();
        assert_eq!(out.final_population.members.len(), 30);
        assert_eq!(out.final_population.generation, 0);
        assert!(out.final_population.members.iter().all(|m| m.fitness.is_some()));
        assert!(out.archive.iter().all(|e| e.generation == 0));
        // initial population replays the seeded sampler exactly
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let expected: Vec<Configuration> = (0..30).map(|_| space.sample(&mut rng)).collect();
        let got: Vec<Configuration> = out
            .final_population
            .members
            .iter()
            .map(|m| m.config.clone())
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn evolve_is_deterministic_per_seed() {
        let space = wide_space();
        let params = EvolutionParams {
            population_size: 10,
            generations: 4,
            master_seed: 99,
            ..EvolutionParams::default()
        };
        let a = evolve(&space, &synthetic_evaluator, &params, "r", None).unwrap();
        let b = evolve(&space, &synthetic_evaluator, &params, "r", None).unwrap();
        assert_eq!(a.archive, b.archive);
        let configs = |o: &EvolveOutcome| {
            o.final_population
                .members
                .iter()
                .map(|m| m.config.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(configs(&a), configs(&b));
    }

    #[test]
    fn evolve_parallel_evaluation_matches_sequential() {
        let space = wide_space();
        let base = EvolutionParams {
            population_size: 10,
            generations: 3,
            master_seed: 7,
            ..EvolutionParams::default()
        };
        let parallel = EvolutionParams {
            eval_parallelism: 4,
            ..base.clone()
        };
        let a = evolve(&space, &synthetic_evaluator, &base, "r", None).unwrap();
        let b = evolve(&space, &synthetic_evaluator, &parallel, "r", None).unwrap();
        assert_eq!(a.archive, b.archive);
    }

    #[test]
    fn evolve_rank_zero_lands_on_brute_force_front() {
        let space = wide_space();
        let params = EvolutionParams {
            master_seed: 2,
            ..EvolutionParams::default()
        };
        let out = evolve(&space, &synthetic_evaluator, &params, "r", None).unwrap();
        // On this landscape the unique nondominated fitness is (1.0, 1.0).
        for m in &out.final_population.members {
            if m.rank == Some(0) {
                let f = m.fitness.unwrap();
                assert!((f.syntactic - 1.0).abs() < 1e-12 && (f.semantic - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evolve_aborts_on_evaluator_failure_with_partial_archive() {
        let space = wide_space();
        let params = EvolutionParams {
            population_size: 4,
            generations: 2,
            master_seed: 1,
            ..EvolutionParams::default()
        };
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let failing = |c: &Configuration| {
            if calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) >= 6 {
                return Err("backend down".into());
            }
            synthetic_evaluator(c)
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.jsonl");
        let err = evolve(&space, &failing, &params, "r", Some(&path)).unwrap_err();
        assert!(matches!(err, EngineError::Evaluator(_)));
        let persisted = std::fs::read_to_string(&path).unwrap();
        assert!(persisted.lines().count() >= 4, "partial archive persisted");
    }

    #[test]
    fn reduce_space_examples() {
        let space = wide_space();
        let member = |t: f64, k: u32, p: f64, r: f64, m: u32| {
            Individual::new(Configuration::new(t, k, p, Some(r), m))
        };
        let pops = vec![
            Population {
                members: vec![member(1.0, 0, 0.9, 1.0, 512), member(1.3, 50, 1.0, 1.2, 4096)],
                generation: 10,
            },
            Population {
                members: vec![member(1.1, 50, 0.9, 1.1, 2048)],
                generation: 10,
            },
        ];
        let reduced = reduce_space(&pops, &space).unwrap();
        let domains = reduced.domains();
        assert_eq!(
            domains[0].1,
            &ParamDomain::range("temperature", 1.0, 1.3, 0.1).unwrap()
        );
        assert_eq!(
            domains[1].1,
            &ParamDomain::enumerated("top_k", vec![0.0, 50.0]).unwrap()
        );
        assert_eq!(domains[2].1, &ParamDomain::range("top_p", 0.9, 1.0, 0.1).unwrap());
        assert_eq!(
            domains[3].1,
            &ParamDomain::range("repetition_penalty", 1.0, 1.2, 0.1).unwrap()
        );
        assert_eq!(
            domains[4].1,
            &ParamDomain::enumerated("max_new_tokens", vec![512.0, 2048.0, 4096.0]).unwrap()
        );
    }

    #[test]
    fn reduce_space_single_individual_collapses_all_domains() {
        let space = wide_space();
        let pop = Population {
            members: vec![Individual::new(Configuration::new(1.2, 30, 0.8, Some(1.5), 1024))],
            generation: 10,
        };
        let reduced = reduce_space(&[pop], &space).unwrap();
        for (_, d) in reduced.domains() {
            assert_eq!(d.size(), 1);
        }
        assert_eq!(reduced.cardinality(), 1);
    }

    #[test]
    fn reduce_space_rejects_empty_input() {
        let space = wide_space();
        assert!(matches!(
            reduce_space(&[], &space).unwrap_err(),
            EngineError::EmptyPopulations
        ));
    }

    #[test]
    fn reduced_space_is_subspace_of_original() {
        let space = wide_space();
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let pops: Vec<Population> = (0..3)
            .map(|_| Population {
                members: (0..10).map(|_| Individual::new(space.sample(&mut rng))).collect(),
                generation: 10,
            })
            .collect();
        let reduced = reduce_space(&pops, &space).unwrap();
        for c in reduced.enumerate() {
            assert!(space.validate(&c).is_empty(), "{c} must remain in the original space");
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_fitness() -> impl Strategy<Value = FitnessVector> {
            // small integer grid makes domination ties and chains likely
            (0i32..6, 0i32..6).prop_map(|(a, b)| fv(f64::from(a), f64::from(b)))
        }

        /// Definition-level Pareto filter: members dominated by nobody.
        fn brute_force_front(fitnesses: &[FitnessVector]) -> Vec<usize> {
            (0..fitnesses.len())
                .filter(|&i| !fitnesses.iter().any(|f| f.dominates(&fitnesses[i])))
                .collect()
        }

        /// Peels fronts directly from the definition.
        fn brute_force_fronts(fitnesses: &[FitnessVector]) -> Vec<Vec<usize>> {
            let mut remaining: Vec<usize> = (0..fitnesses.len()).collect();
            let mut fronts = Vec::new();
            while !remaining.is_empty() {
                let front: Vec<usize> = remaining
                    .iter()
                    .copied()
                    .filter(|&i| {
                        !remaining
                            .iter()
                            .any(|&j| fitnesses[j].dominates(&fitnesses[i]))
                    })
                    .collect();
                remaining.retain(|i| !front.contains(i));
                fronts.push(front);
            }
            fronts
        }

        proptest! {
            #[test]
            fn dominates_is_irreflexive_and_antisymmetric(f in arb_fitness(), g in arb_fitness()) {
                prop_assert!(!f.dominates(&f));
                prop_assert!(!(f.dominates(&g) && g.dominates(&f)));
            }

            #[test]
            fn dominates_is_transitive(f in arb_fitness(), g in arb_fitness(), h in arb_fitness()) {
                if f.dominates(&g) && g.dominates(&h) {
                    prop_assert!(f.dominates(&h));
                }
            }

            #[test]
            fn sort_matches_brute_force(fs in proptest::collection::vec(arb_fitness(), 1..50)) {
                let mut pop: Vec<Individual> = fs
                    .iter()
                    .map(|&f| Individual::evaluated(llama_default(), f))
                    .collect();
                let fronts = fast_nondominated_sort(&mut pop);
                prop_assert_eq!(&fronts, &brute_force_fronts(&fs));
                prop_assert_eq!(&fronts[0], &brute_force_front(&fs));
                // fronts are disjoint and cover the population
                let mut seen: Vec<usize> = fronts.concat();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..fs.len()).collect::<Vec<_>>());
            }

            #[test]
            fn survival_keeps_n_prefers_rank_and_crowding(
                fs in proptest::collection::vec(arb_fitness(), 4..40),
                keep_ratio in 0.2f64..0.9,
            ) {
                let n = ((fs.len() as f64 * keep_ratio) as usize).max(1);
                let pop: Vec<Individual> = fs
                    .iter()
                    .map(|&f| Individual::evaluated(llama_default(), f))
                    .collect();
                let kept = environmental_selection(pop.clone(), n);
                prop_assert_eq!(kept.len(), n);

                let mut full = pop;
                let fronts = fast_nondominated_sort(&mut full);
                assign_crowding(&mut full, &fronts);
                let max_kept_rank = kept.iter().map(|m| m.rank.unwrap()).max().unwrap();
                // every front strictly better than the cut is fully kept
                let better: usize = fronts[..max_kept_rank].iter().map(Vec::len).sum();
                let kept_better = kept.iter().filter(|m| m.rank.unwrap() < max_kept_rank).count();
                prop_assert_eq!(better, kept_better);
                // within the cut front, kept crowding >= discarded crowding
                let kept_in_cut = kept.iter().filter(|m| m.rank == Some(max_kept_rank)).count();
                let mut cut_crowdings: Vec<f64> = fronts[max_kept_rank]
                    .iter()
                    .map(|&i| full[i].crowding.unwrap())
                    .collect();
                cut_crowdings.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let kept_min = kept
                    .iter()
                    .filter(|m| m.rank == Some(max_kept_rank))
                    .map(|m| m.crowding.unwrap())
                    .fold(f64::INFINITY, f64::min);
                for &d in &cut_crowdings[kept_in_cut..] {
                    prop_assert!(kept_min >= d, "kept crowding {} < discarded {}", kept_min, d);
                }
            }

            #[test]
            fn elitism_no_pareto_regression(
                fs_parents in proptest::collection::vec(arb_fitness(), 2..20),
                fs_offspring in proptest::collection::vec(arb_fitness(), 2..20),
            ) {
                let parents: Vec<Individual> = fs_parents
                    .iter()
                    .map(|&f| Individual::evaluated(llama_default(), f))
                    .collect();
                let offspring: Vec<Individual> = fs_offspring
                    .iter()
                    .map(|&f| Individual::evaluated(llama_default(), f))
                    .collect();
                let n = parents.len();
                let mut merged = parents.clone();
                merged.extend(offspring);
                let next = environmental_selection(merged, n);
                for m in next.iter().filter(|m| m.rank == Some(0)) {
                    for p in &parents {
                        prop_assert!(!p.fitness.unwrap().dominates(&m.fitness.unwrap()),
                            "rank-0 survivor dominated by a previous parent");
                    }
                }
            }
        }
    }
}
