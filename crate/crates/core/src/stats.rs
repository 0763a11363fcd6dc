//! The statistical protocol: one-sided Wilcoxon tests, Vargha-Delaney A12
//! effect size with the study's thresholds, and Win/Tie/Loss classification
//! and tabulation of candidate configurations against a baseline.
//!
//! The paired signed-rank test is exact (full sign-assignment distribution)
//! up to 20 nonzero differences and switches to a tie-corrected normal
//! approximation with continuity correction beyond. The unpaired rank-sum
//! test is exact while the smaller sample has at most 10 values.
//!
//! All rank arithmetic uses doubled ranks, which stay integral under
//! average-rank tie handling, so the exact paths never touch floating point
//! until the final division.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Strategy;

/// Largest number of nonzero paired differences enumerated exactly.
pub const EXACT_PAIRED_LIMIT: usize = 20;
/// Largest smaller-sample size for which the rank-sum test is exact.
pub const EXACT_UNPAIRED_LIMIT: usize = 10;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("paired samples differ in length: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("no records for (domain {domain}, strategy {strategy}, configuration {config})")]
    MissingCell {
        domain: String,
        strategy: Strategy,
        config: String,
    },
    #[error("baseline configuration '{0}' absent from the records")]
    MissingBaseline(String),
    #[error("no candidate configurations besides the baseline '{0}'")]
    NoCandidates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    Paired,
    Unpaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    Semantic,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Cosine, Metric::Semantic];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Semantic => "semantic",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WtlClass {
    Win,
    Tie,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSize {
    Large,
    Medium,
    Small,
}

/// Doubled average ranks of `values` (input order preserved) plus the tie
/// group sizes. Doubling keeps average ranks integral: a tie group spanning
/// 1-based sorted positions a..=b has average rank (a+b)/2, doubled a+b.
fn doubled_ranks(values: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut doubled = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let doubled_rank = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            doubled[idx] = doubled_rank;
        }
        tie_sizes.push((j - i + 1) as u64);
        i = j + 1;
    }
    (doubled, tie_sizes)
}

/// One-sided p-value for the alternative that `x` runs higher than `y`.
///
/// Paired: signed-rank on the nonzero differences, exact for up to
/// [`EXACT_PAIRED_LIMIT`] of them, all-zero differences giving p = 1.
/// Unpaired: rank-sum, exact while min(|x|, |y|) <= [`EXACT_UNPAIRED_LIMIT`].
pub fn wilcoxon_one_sided(x: &[f64], y: &[f64], pairing: Pairing) -> Result<f64, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    match pairing {
        Pairing::Paired => {
            if x.len() != y.len() {
                return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
            }
            let diffs: Vec<f64> = x
                .iter()
                .zip(y)
                .map(|(a, b)| a - b)
                .filter(|d| *d != 0.0)
                .collect();
            if diffs.is_empty() {
                return Ok(1.0);
            }
            let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
            let (doubled, tie_sizes) = doubled_ranks(&abs);
            let w2_observed: u64 = diffs
                .iter()
                .zip(&doubled)
                .filter(|(d, _)| **d > 0.0)
                .map(|(_, r)| *r)
                .sum();
            if diffs.len() <= EXACT_PAIRED_LIMIT {
                Ok(signed_rank_exact_p(&doubled, w2_observed))
            } else {
                Ok(signed_rank_normal_p(
                    diffs.len(),
                    w2_observed as f64 / 2.0,
                    &tie_sizes,
                ))
            }
        }
        Pairing::Unpaired => Ok(rank_sum_p(x, y)),
    }
}

/// Exact tail probability P(W+ >= observed) over all 2^n sign assignments,
/// computed as a subset-sum count over the doubled ranks.
fn signed_rank_exact_p(doubled: &[u64], w2_observed: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    for &r in doubled {
        for s in (r..=total).rev() {
            counts[s as usize] += counts[(s - r) as usize];
        }
    }
    let favorable: u64 = counts[w2_observed as usize..].iter().sum();
    favorable as f64 / (1u64 << doubled.len()) as f64
}

fn signed_rank_normal_p(n: usize, w_plus: f64, tie_sizes: &[u64]) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    normal_upper_tail(w_plus - 0.5, mean, variance)
}

fn rank_sum_p(x: &[f64], y: &[f64]) -> f64 {
    let combined: Vec<f64> = x.iter().chain(y).copied().collect();
    let (doubled, tie_sizes) = doubled_ranks(&combined);
    let rx2: u64 = doubled[..x.len()].iter().sum();
    if x.len().min(y.len()) <= EXACT_UNPAIRED_LIMIT {
        rank_sum_exact_p(&doubled, x.len(), y.len(), rx2)
    } else {
        rank_sum_normal_p(x.len(), y.len(), rx2, &tie_sizes)
    }
}

/// Exact tail probability P(R_x >= observed) over all C(n+m, n) rank
/// assignments. The DP tracks the smaller group; when that is `y`, the tail
/// flips through R_y = total - R_x.
fn rank_sum_exact_p(doubled: &[u64], nx: usize, ny: usize, rx2: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let (k, upper_tail, bound) = if nx <= ny {
        (nx, true, rx2)
    } else {
        (ny, false, total - rx2)
    };
    // counts[c][s]: ways to pick c of the doubled ranks summing to s
    let mut counts = vec![vec![0u128; total as usize + 1]; k + 1];
    counts[0][0] = 1;
    for &r in doubled {
        for c in (1..=k).rev() {
            for s in (r..=total).rev() {
                let carried = counts[c - 1][(s - r) as usize];
                if carried != 0 {
                    counts[c][s as usize] += carried;
                }
            }
        }
    }
    let tail: u128 = if upper_tail {
        counts[k][bound as usize..].iter().sum()
    } else {
        counts[k][..=bound as usize].iter().sum()
    };
    let all: u128 = counts[k].iter().sum();
    tail as f64 / all as f64
}

fn rank_sum_normal_p(nx: usize, ny: usize, rx2: u64, tie_sizes: &[u64]) -> f64 {
    let (nxf, nyf) = (nx as f64, ny as f64);
    let nf = nxf + nyf;
    // U statistic from the rank sum; holds under average ranks too
    let u = rx2 as f64 / 2.0 - nxf * (nxf + 1.0) / 2.0;
    let mean = nxf * nyf / 2.0;
    let tie_term: f64 =
        tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let variance = nxf * nyf / 12.0 * (nf + 1.0 - tie_term);
    normal_upper_tail(u - 0.5, mean, variance)
}

fn normal_upper_tail(value: f64, mean: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return if value > mean { 0.0 } else { 1.0 };
    }
    let z = (value - mean) / variance.sqrt();
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Probability of superiority: the proportion of cross-pairs where `x`
/// exceeds `y`, ties half-weighted.
pub fn vargha_delaney_a12(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut wins = 0.0;
    for xi in x {
        for yj in y {
            if xi > yj {
                wins += 1.0;
            } else if xi == yj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (x.len() as f64 * y.len() as f64))
}

/// Effect-size buckets: large when A12 >= 0.72, medium strictly between 0.64
/// and 0.72, small when A12 <= 0.64.
pub fn classify_effect(a12: f64) -> EffectSize {
    if a12 >= 0.72 {
        EffectSize::Large
    } else if a12 > 0.64 {
        EffectSize::Medium
    } else {
        EffectSize::Small
    }
}

/// Win when p < 0.05, loss when p > 0.99, tie for 0.05 <= p <= 0.99.
pub fn classify_wtl(p_value: f64) -> WtlClass {
    if p_value < 0.05 {
        WtlClass::Win
    } else if p_value > 0.99 {
        WtlClass::Loss
    } else {
        WtlClass::Tie
    }
}

/// Minimal per-generation view the protocol consumes: identifiers plus the
/// two scores, absent when the generation failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub domain_id: String,
    pub strategy: Strategy,
    pub config_id: String,
    pub rep_index: u32,
    pub syntactic: Option<f64>,
    pub semantic: Option<f64>,
}

impl ScoredRecord {
    fn score(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Cosine => self.syntactic,
            Metric::Semantic => self.semantic,
        }
    }
}

/// One candidate-vs-baseline comparison cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub solution_id: String,
    pub domain_id: String,
    pub strategy: Strategy,
    pub metric: Metric,
    pub p_value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a12: Option<f64>,
    pub wtl: WtlClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<EffectSize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Solution,
    Domain,
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solution" => Ok(GroupBy::Solution),
            "domain" => Ok(GroupBy::Domain),
            other => Err(format!("unknown grouping '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct WtlCell {
    pub win: usize,
    pub tie: usize,
    pub loss: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EffectTally {
    pub large: usize,
    pub medium: usize,
    pub small: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct WtlRow {
    pub id: String,
    pub cells: Vec<WtlCell>,
}

/// Win/Tie/Loss counts grouped by solution or by domain, with per-column
/// effect-size tallies over the winning cells.
#[derive(Debug, Clone, Serialize)]
pub struct WtlTable {
    pub group_by: GroupBy,
    pub columns: Vec<(Strategy, Metric)>,
    pub rows: Vec<WtlRow>,
    pub a12_tally: Vec<EffectTally>,
}

/// Runs every (solution, domain, strategy, metric) comparison against the
/// baseline. Paired comparisons pair by repetition index and keep only the
/// repetitions scored on both arms.
pub fn compare_all(
    records: &[ScoredRecord],
    baseline_id: &str,
    pairing: Pairing,
) -> Result<Vec<ComparisonResult>, StatsError> {
    let mut configs: BTreeSet<&str> = BTreeSet::new();
    let mut domains: BTreeSet<&str> = BTreeSet::new();
    let mut strategies: BTreeSet<Strategy> = BTreeSet::new();
    let mut index: BTreeMap<(&str, Strategy, &str), BTreeMap<u32, &ScoredRecord>> = BTreeMap::new();
    for r in records {
        configs.insert(&r.config_id);
        domains.insert(&r.domain_id);
        strategies.insert(r.strategy);
        index
            .entry((r.domain_id.as_str(), r.strategy, r.config_id.as_str()))
            .or_default()
            .insert(r.rep_index, r);
    }
    if !configs.remove(baseline_id) {
        return Err(StatsError::MissingBaseline(baseline_id.to_string()));
    }
    if configs.is_empty() {
        return Err(StatsError::NoCandidates(baseline_id.to_string()));
    }

    let missing = |domain: &str, strategy: Strategy, config: &str| StatsError::MissingCell {
        domain: domain.to_string(),
        strategy,
        config: config.to_string(),
    };

    let mut results = Vec::new();
    for &solution in &configs {
        for &strategy in &strategies {
            for &domain in &domains {
                let cand = index
                    .get(&(domain, strategy, solution))
                    .ok_or_else(|| missing(domain, strategy, solution))?;
                let base = index
                    .get(&(domain, strategy, baseline_id))
                    .ok_or_else(|| missing(domain, strategy, baseline_id))?;
                for metric in Metric::ALL {
                    let (xs, ys) = collect_samples(cand, base, metric, pairing);
                    if xs.is_empty() || ys.is_empty() {
                        return Err(missing(domain, strategy, solution));
                    }
                    let p_value = wilcoxon_one_sided(&xs, &ys, pairing)?;
                    let wtl = classify_wtl(p_value);
                    let (a12, effect) = if wtl == WtlClass::Win {
                        let a = vargha_delaney_a12(&xs, &ys)?;
                        (Some(a), Some(classify_effect(a)))
                    } else {
                        (None, None)
                    };
                    results.push(ComparisonResult {
                        solution_id: solution.to_string(),
                        domain_id: domain.to_string(),
                        strategy,
                        metric,
                        p_value,
                        a12,
                        wtl,
                        effect,
                    });
                }
            }
        }
    }
    Ok(results)
}

fn collect_samples(
    cand: &BTreeMap<u32, &ScoredRecord>,
    base: &BTreeMap<u32, &ScoredRecord>,
    metric: Metric,
    pairing: Pairing,
) -> (Vec<f64>, Vec<f64>) {
    match pairing {
        Pairing::Paired => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (rep, c) in cand {
                if let (Some(cv), Some(bv)) =
                    (c.score(metric), base.get(rep).and_then(|b| b.score(metric)))
                {
                    xs.push(cv);
                    ys.push(bv);
                }
            }
            (xs, ys)
        }
        Pairing::Unpaired => (
            cand.values().filter_map(|r| r.score(metric)).collect(),
            base.values().filter_map(|r| r.score(metric)).collect(),
        ),
    }
}

/// Aggregates the per-cell comparisons into the Win/Tie/Loss table along the
/// requested axis: rows are solutions counted over domains, or domains
/// counted over solutions. Every cell satisfies win+tie+loss = the size of
/// the crossed axis.
pub fn tabulate(
    records: &[ScoredRecord],
    baseline_id: &str,
    group_by: GroupBy,
    pairing: Pairing,
) -> Result<WtlTable, StatsError> {
    let comparisons = compare_all(records, baseline_id, pairing)?;
    Ok(tabulate_comparisons(&comparisons, group_by))
}

/// Aggregation half of [`tabulate`], reusable when the comparisons are
/// already computed.
pub fn tabulate_comparisons(comparisons: &[ComparisonResult], group_by: GroupBy) -> WtlTable {
    let mut strategies: BTreeSet<Strategy> = BTreeSet::new();
    let mut row_ids: BTreeSet<&str> = BTreeSet::new();
    for c in comparisons {
        strategies.insert(c.strategy);
        row_ids.insert(match group_by {
            GroupBy::Solution => &c.solution_id,
            GroupBy::Domain => &c.domain_id,
        });
    }
    let columns: Vec<(Strategy, Metric)> = strategies
        .iter()
        .flat_map(|&s| Metric::ALL.map(|m| (s, m)))
        .collect();
    let column_of = |c: &ComparisonResult| {
        columns
            .iter()
            .position(|&(s, m)| s == c.strategy && m == c.metric)
            .expect("comparison strategy/metric registered")
    };

    let mut rows: Vec<WtlRow> = row_ids
        .iter()
        .map(|id| WtlRow {
            id: id.to_string(),
            cells: vec![WtlCell::default(); columns.len()],
        })
        .collect();
    let mut a12_tally = vec![EffectTally::default(); columns.len()];

    for c in comparisons {
        let row_id: &str = match group_by {
            GroupBy::Solution => &c.solution_id,
            GroupBy::Domain => &c.domain_id,
        };
        let row = rows.iter_mut().find(|r| r.id == row_id).expect("row exists");
        let cell = &mut row.cells[column_of(c)];
        match c.wtl {
            WtlClass::Win => cell.win += 1,
            WtlClass::Tie => cell.tie += 1,
            WtlClass::Loss => cell.loss += 1,
        }
        if let Some(effect) = c.effect {
            let tally = &mut a12_tally[column_of(c)];
            match effect {
                EffectSize::Large => tally.large += 1,
                EffectSize::Medium => tally.medium += 1,
                EffectSize::Small => tally.small += 1,
            }
        }
    }

    WtlTable {
        group_by,
        columns,
        rows,
        a12_tally,
    }
}
