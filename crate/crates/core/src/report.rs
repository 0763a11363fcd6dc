//! Report rendering: the two Win/Tie/Loss tables (rows by solution with an
//! effect-size tally row, rows by domain), raw comparison cells, and
//! quartile summaries of the per-configuration score distributions.
//! Rendering is a pure function of the record store: two renders of the same
//! store are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::prompt::Strategy;
use crate::stats::{
    compare_all, tabulate_comparisons, ComparisonResult, EffectTally, GroupBy, Metric, Pairing,
    ScoredRecord, StatsError, WtlTable,
};
use crate::util::fmt_f64;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("record store is empty")]
    EmptyStore,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("report write failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format '{other}'")),
        }
    }
}

/// Five-number summary of one (configuration, strategy, metric) score
/// distribution, pooled over domains and repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionSummary {
    pub config_id: String,
    pub strategy: Strategy,
    pub metric: Metric,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub by_solution: WtlTable,
    pub by_domain: WtlTable,
    pub comparisons: Vec<ComparisonResult>,
    pub distributions: Vec<DistributionSummary>,
}

/// Derives the full bundle from scored records. A store holding only
/// baseline records (or nothing) is an error naming what is missing.
pub fn build_report(
    records: &[ScoredRecord],
    baseline_id: &str,
    pairing: Pairing,
) -> Result<ReportBundle, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyStore);
    }
    let comparisons = compare_all(records, baseline_id, pairing)?;
    Ok(ReportBundle {
        by_solution: tabulate_comparisons(&comparisons, GroupBy::Solution),
        by_domain: tabulate_comparisons(&comparisons, GroupBy::Domain),
        comparisons,
        distributions: distributions(records),
    })
}

fn distributions(records: &[ScoredRecord]) -> Vec<DistributionSummary> {
    let mut pooled: BTreeMap<(String, Strategy, Metric), Vec<f64>> = BTreeMap::new();
    for r in records {
        for (metric, value) in [(Metric::Cosine, r.syntactic), (Metric::Semantic, r.semantic)] {
            if let Some(v) = value {
                pooled
                    .entry((r.config_id.clone(), r.strategy, metric))
                    .or_default()
                    .push(v);
            }
        }
    }
    pooled
        .into_iter()
        .map(|((config_id, strategy, metric), mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            DistributionSummary {
                config_id,
                strategy,
                metric,
                count: values.len(),
                min: values[0],
                q1: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q3: quantile(&values, 0.75),
                max: values[values.len() - 1],
            }
        })
        .collect()
}

/// Linear-interpolation quantile over a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn column_label(strategy: Strategy, metric: Metric) -> String {
    format!("{strategy}:{metric}")
}

fn wtl_cell_text(win: usize, tie: usize, loss: usize) -> String {
    format!("{win} / {tie} / {loss}")
}

fn effect_cell_text(t: &EffectTally) -> String {
    format!("{} / {} / {}", t.large, t.medium, t.small)
}

/// Markdown rendering with the by-solution table (A12 tally row last), the
/// by-domain table, and the distribution summaries.
pub fn render_markdown(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    out.push_str("# Win / Tie / Loss by solution\n\n");
    render_wtl_markdown(&mut out, &bundle.by_solution, "Solution", true);
    out.push_str("\n# Win / Tie / Loss by domain\n\n");
    render_wtl_markdown(&mut out, &bundle.by_domain, "Domain", false);
    out.push_str("\n# Score distributions\n\n");
    out.push_str("| Configuration | Strategy | Metric | n | min | q1 | median | q3 | max |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for d in &bundle.distributions {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            d.config_id,
            d.strategy,
            d.metric,
            d.count,
            fmt_f64(d.min),
            fmt_f64(d.q1),
            fmt_f64(d.median),
            fmt_f64(d.q3),
            fmt_f64(d.max)
        ));
    }
    out
}

fn render_wtl_markdown(out: &mut String, table: &WtlTable, row_label: &str, effect_row: bool) {
    out.push_str(&format!("| {row_label} |"));
    for &(s, m) in &table.columns {
        out.push_str(&format!(" {} |", column_label(s, m)));
    }
    out.push('\n');
    out.push_str("|---|");
    out.push_str(&"---|".repeat(table.columns.len()));
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!("| {} |", row.id));
        for cell in &row.cells {
            out.push_str(&format!(" {} |", wtl_cell_text(cell.win, cell.tie, cell.loss)));
        }
        out.push('\n');
    }
    if effect_row {
        out.push_str("| A12 (L/M/S) |");
        for tally in &table.a12_tally {
            out.push_str(&format!(" {} |", effect_cell_text(tally)));
        }
        out.push('\n');
    }
}

/// CSV rendering of one table; cells carry the `W / T / L` triple.
pub fn render_wtl_csv(table: &WtlTable, row_label: &str, effect_row: bool) -> String {
    let mut out = String::new();
    out.push_str(row_label);
    for &(s, m) in &table.columns {
        out.push(',');
        out.push_str(&column_label(s, m));
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.id);
        for cell in &row.cells {
            out.push(',');
            out.push_str(&wtl_cell_text(cell.win, cell.tie, cell.loss));
        }
        out.push('\n');
    }
    if effect_row {
        out.push_str("A12 (L/M/S)");
        for tally in &table.a12_tally {
            out.push(',');
            out.push_str(&effect_cell_text(tally));
        }
        out.push('\n');
    }
    out
}

pub fn render_distributions_csv(distributions: &[DistributionSummary]) -> String {
    let mut out = String::from("config_id,strategy,metric,count,min,q1,median,q3,max\n");
    for d in distributions {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            d.config_id,
            d.strategy,
            d.metric,
            d.count,
            fmt_f64(d.min),
            fmt_f64(d.q1),
            fmt_f64(d.median),
            fmt_f64(d.q3),
            fmt_f64(d.max)
        ));
    }
    out
}

/// Writes the bundle in the requested format, returning the files written.
pub fn write_report(
    bundle: &ReportBundle,
    format: ReportFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, content: String| -> Result<(), ReportError> {
        let path = out_dir.join(name);
        std::fs::write(&path, content)?;
        written.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Markdown => emit("report.md", render_markdown(bundle))?,
        ReportFormat::Csv => {
            emit(
                "wtl_by_solution.csv",
                render_wtl_csv(&bundle.by_solution, "solution", true),
            )?;
            emit(
                "wtl_by_domain.csv",
                render_wtl_csv(&bundle.by_domain, "domain", false),
            )?;
            emit(
                "distributions.csv",
                render_distributions_csv(&bundle.distributions),
            )?;
        }
        ReportFormat::Json => emit(
            "report.json",
            serde_json::to_string_pretty(bundle).map_err(std::io::Error::other)? + "\n",
        )?,
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(domain: &str, config: &str, rep: u32, score: f64) -> ScoredRecord {
        ScoredRecord {
            domain_id: domain.to_string(),
            strategy: Strategy::ZeroShot,
            config_id: config.to_string(),
            rep_index: rep,
            syntactic: Some(score),
            semantic: Some(score),
        }
    }

    fn store(domains: usize) -> Vec<ScoredRecord> {
        let mut records = Vec::new();
        for d in 0..domains {
            let domain = format!("d{d}");
            for rep in 0..20u32 {
                let base = 0.4 + f64::from(rep) * 0.002;
                records.push(record(&domain, "default", rep, base));
                records.push(record(&domain, "S0", rep, base + 0.1));
            }
        }
        records
    }

    #[test]
    fn report_is_deterministic() {
        let records = store(4);
        let a = build_report(&records, "default", Pairing::Paired).unwrap();
        let b = build_report(&records, "default", Pairing::Paired).unwrap();
        assert_eq!(render_markdown(&a), render_markdown(&b));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn wtl_cells_use_slash_layout() {
        let records = store(4);
        let bundle = build_report(&records, "default", Pairing::Paired).unwrap();
        let md = render_markdown(&bundle);
        assert!(md.contains("| S0 | 4 / 0 / 0 | 4 / 0 / 0 |"), "markdown was:\n{md}");
        assert!(md.contains("| A12 (L/M/S) | 4 / 0 / 0 | 4 / 0 / 0 |"));
    }

    #[test]
    fn by_domain_rows_match_domain_count_and_omit_effect_row() {
        let records = store(3);
        let bundle = build_report(&records, "default", Pairing::Paired).unwrap();
        assert_eq!(bundle.by_domain.rows.len(), 3);
        let csv = render_wtl_csv(&bundle.by_domain, "domain", false);
        assert!(!csv.contains("A12"));
    }

    #[test]
    fn csv_and_markdown_carry_identical_numbers() {
        let records = store(5);
        let bundle = build_report(&records, "default", Pairing::Paired).unwrap();
        let md = render_markdown(&bundle);
        let csv = render_wtl_csv(&bundle.by_solution, "solution", true);
        let triples = |text: &str, id: &str| -> Vec<String> {
            text.lines()
                .filter(|l| l.contains(id))
                .flat_map(|l| {
                    l.split(['|', ','])
                        .map(str::trim)
                        .filter(|c| c.split(" / ").count() == 3)
                        .map(str::to_string)
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        assert_eq!(triples(&md, "S0"), triples(&csv, "S0"));
        assert_eq!(triples(&md, "A12"), triples(&csv, "A12"));
    }

    #[test]
    fn empty_store_and_baseline_only_store_error() {
        assert!(matches!(
            build_report(&[], "default", Pairing::Paired).unwrap_err(),
            ReportError::EmptyStore
        ));
        let baseline_only: Vec<ScoredRecord> = store(2)
            .into_iter()
            .filter(|r| r.config_id == "default")
            .collect();
        match build_report(&baseline_only, "default", Pairing::Paired).unwrap_err() {
            ReportError::Stats(StatsError::NoCandidates(b)) => assert_eq!(b, "default"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn single_domain_store_shapes() {
        let records = store(1);
        let bundle = build_report(&records, "default", Pairing::Paired).unwrap();
        assert_eq!(bundle.by_domain.rows.len(), 1);
        let cell = bundle.by_solution.rows[0].cells[0];
        assert_eq!(cell.win + cell.tie + cell.loss, 1);
    }

    #[test]
    fn distribution_quartiles_are_order_statistics() {
        let mut records = Vec::new();
        for (rep, score) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            records.push(record("d0", "S0", rep as u32, *score));
            records.push(record("d0", "default", rep as u32, 0.5));
        }
        let bundle = build_report(&records, "default", Pairing::Paired).unwrap();
        let d = bundle
            .distributions
            .iter()
            .find(|d| d.config_id == "S0" && d.metric == Metric::Cosine)
            .unwrap();
        assert_eq!((d.min, d.q1, d.median, d.q3, d.max), (0.0, 0.25, 0.5, 0.75, 1.0));
        assert_eq!(d.count, 5);
    }

    #[test]
    fn write_report_emits_expected_files() {
        let records = store(2);
        let bundle = build_report(&records, "default", Pairing::Paired).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let md = write_report(&bundle, ReportFormat::Markdown, dir.path()).unwrap();
        assert_eq!(md.len(), 1);
        let csv = write_report(&bundle, ReportFormat::Csv, dir.path()).unwrap();
        assert_eq!(csv.len(), 3);
        let json = write_report(&bundle, ReportFormat::Json, dir.path()).unwrap();
        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json[0]).unwrap()).unwrap();
        assert!(parsed.get("by_solution").is_some());
    }
}
