//! Reporting: score-table correlation, importance tables with sweep curves,
//! and the cost/correlation Pareto frontier of a finished run.
//!
//! Everything here reads run directories and CSV files; nothing writes into
//! a run directory, so reports can never corrupt a run.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::RunDir;
use crate::error::{Error, Result};
use crate::hyperspace::HyperSpace;
use crate::mip::{MipState, TrialRecord};
use crate::ranking::spearman;

/// A named table of `(architecture id, score)` rows, typically loaded from a
/// CSV with an `id,score` header.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    label: String,
    rows: Vec<(String, f64)>,
}

impl ResultTable {
    pub fn new(label: impl Into<String>, rows: Vec<(String, f64)>) -> Result<Self> {
        let label = label.into();
        if rows.is_empty() {
            return Err(Error::Invalid(format!("table '{label}' has no rows")));
        }
        let mut seen = std::collections::HashSet::new();
        for (id, score) in &rows {
            if id.is_empty() {
                return Err(Error::Invalid(format!("table '{label}' has an empty id")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Invalid(format!(
                    "table '{label}' lists id '{id}' twice"
                )));
            }
            if !score.is_finite() {
                return Err(Error::Invalid(format!(
                    "table '{label}' has a non-finite score for '{id}'"
                )));
            }
        }
        Ok(ResultTable { label, rows })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn rows(&self) -> &[(String, f64)] {
        &self.rows
    }

    pub fn score(&self, id: &str) -> Option<f64> {
        self.rows.iter().find(|(i, _)| i == id).map(|&(_, s)| s)
    }

    /// Reads `id,score` rows. Header and fields are whitespace-trimmed.
    pub fn from_csv_reader(label: impl Into<String>, reader: impl io::Read) -> Result<Self> {
        let label = label.into();
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = csv
            .headers()
            .map_err(|e| Error::Parse(format!("table '{label}': {e}")))?;
        let header: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
        if header != ["id", "score"] {
            return Err(Error::Parse(format!(
                "table '{label}': expected an 'id,score' header, got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, record) in csv.records().enumerate() {
            let record = record
                .map_err(|e| Error::Parse(format!("table '{label}' row {}: {e}", i + 2)))?;
            if record.len() != 2 {
                return Err(Error::Parse(format!(
                    "table '{label}' row {}: expected 2 fields, got {}",
                    i + 2,
                    record.len()
                )));
            }
            let score: f64 = record[1].parse().map_err(|e| {
                Error::Parse(format!(
                    "table '{label}' row {}: bad score '{}': {e}",
                    i + 2,
                    &record[1]
                ))
            })?;
            rows.push((record[0].to_string(), score));
        }
        ResultTable::new(label, rows)
    }

    /// Reads a CSV file; the table label is the file stem.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))?;
        Self::from_csv_reader(label, file)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,score\n");
        for (id, score) in &self.rows {
            out.push_str(&format!("{id},{score}\n"));
        }
        out
    }
}

/// Rank agreement between two score tables over their shared ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrReport {
    pub a_label: String,
    pub b_label: String,
    pub r_s: f64,
    /// Ids present in both tables.
    pub common: usize,
    pub only_a: usize,
    pub only_b: usize,
    /// `common / max(|A|, |B|)`.
    pub coverage: f64,
    /// Set when the shared ids cover less than 80% of the larger table.
    pub warning: Option<String>,
}

/// Correlates two tables over the intersection of their ids, walked in the
/// first table's row order.
pub fn corr_tables(a: &ResultTable, b: &ResultTable) -> Result<CorrReport> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (id, score) in a.rows() {
        if let Some(other) = b.score(id) {
            xs.push(*score);
            ys.push(other);
        }
    }
    if xs.len() < 2 {
        return Err(Error::Correlation(format!(
            "tables '{}' and '{}' share only {} id(s); need at least 2",
            a.label(),
            b.label(),
            xs.len()
        )));
    }
    let common = xs.len();
    let larger = a.rows().len().max(b.rows().len());
    let coverage = common as f64 / larger as f64;
    let warning = (coverage < 0.8).then(|| {
        format!(
            "only {common} of {larger} ids are shared ({:.0}% coverage); \
             the correlation ignores the rest",
            coverage * 100.0
        )
    });
    Ok(CorrReport {
        a_label: a.label().to_string(),
        b_label: b.label().to_string(),
        r_s: spearman(&xs, &ys)?,
        common,
        only_a: a.rows().len() - common,
        only_b: b.rows().len() - common,
        coverage,
        warning,
    })
}

pub fn render_corr(report: &CorrReport) -> String {
    let mut out = format!(
        "rank correlation of '{}' vs '{}'\n  r_s = {:.6} over {} shared ids\n",
        report.a_label, report.b_label, report.r_s, report.common
    );
    out.push_str(&format!(
        "  only in '{}': {}   only in '{}': {}   coverage: {:.1}%\n",
        report.a_label,
        report.only_a,
        report.b_label,
        report.only_b,
        report.coverage * 100.0
    ));
    if let Some(w) = &report.warning {
        out.push_str(&format!("  warning: {w}\n"));
    }
    out
}

/// Indices of the trials on the cost/correlation Pareto frontier: no other
/// trial is at most as expensive *and* at least as rank-accurate with one of
/// the two strictly better. Duplicates survive together. Returned sorted by
/// cost ascending.
pub fn pareto(records: &[TrialRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&i, &j| {
        records[i]
            .mean_cost
            .partial_cmp(&records[j].mean_cost)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                records[j]
                    .r_s
                    .partial_cmp(&records[i].r_s)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    let mut frontier = Vec::new();
    let mut best_rs = f64::NEG_INFINITY;
    let mut at = 0;
    while at < order.len() {
        // One group of equal-cost trials; the first carries the group's best
        // correlation because the sort puts higher r_s first.
        let cost = records[order[at]].mean_cost;
        let mut end = at;
        while end < order.len() && records[order[end]].mean_cost == cost {
            end += 1;
        }
        let group_best = records[order[at]].r_s;
        if group_best > best_rs {
            frontier.extend(
                order[at..end]
                    .iter()
                    .copied()
                    .filter(|&i| records[i].r_s == group_best),
            );
            best_rs = group_best;
        }
        at = end;
    }
    frontier
}

pub fn render_pareto(space: &HyperSpace, records: &[TrialRecord], frontier: &[usize]) -> String {
    let mut out = format!(
        "cost/correlation frontier: {} of {} trials\n",
        frontier.len(),
        records.len()
    );
    out.push_str("  iter  r_s       mean_cost    objective  config\n");
    for &i in frontier {
        let r = &records[i];
        out.push_str(&format!(
            "  {:<5} {:<9.4} {:<12.6} {:<10.4} {}\n",
            r.iteration,
            r.r_s,
            r.mean_cost,
            r.objective,
            space.render_config(&r.config)
        ));
    }
    out
}

pub fn pareto_csv(space: &HyperSpace, records: &[TrialRecord], frontier: &[usize]) -> String {
    let mut out = String::from("iteration,config,r_s,mean_cost,objective\n");
    for &i in frontier {
        let r = &records[i];
        out.push_str(&format!(
            "{},\"{}\",{},{},{}\n",
            r.iteration,
            space.render_config(&r.config),
            r.r_s,
            r.mean_cost,
            r.objective
        ));
    }
    out
}

/// Which config supplies the non-swept coordinates of a sweep curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepContext {
    /// The best trial of the run (by its own selection rule).
    Best,
    /// Every free dimension at its cheapest level.
    MinCost,
}

/// One cell of the iteration × dimension importance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceCell {
    /// The dimension was free when this iteration's model was fitted.
    Importance(f64),
    /// The dimension was pinned in an earlier iteration.
    Pinned { level_label: String, at_iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub iteration: usize,
    /// One cell per space dimension, in dimension order.
    pub cells: Vec<ImportanceCell>,
}

/// Predicted correlation when one level is substituted into the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    pub encoding: f64,
    pub mean: f64,
    /// Spread across the model's trees (population standard deviation).
    pub std: f64,
}

/// The pinned dimension of one iteration swept through the model that
/// decided its pin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub dim: usize,
    pub dim_name: String,
    pub pinned_iteration: usize,
    pub points: Vec<SweepPoint>,
}

/// Everything the importance report renders: the per-iteration table and one
/// sweep curve per pinned dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub table: Vec<ImportanceRow>,
    pub curves: Vec<SweepCurve>,
    pub notes: Vec<String>,
}

fn population_std(values: &[f64], mean: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

fn table_rows(state: &MipState) -> Vec<ImportanceRow> {
    let n = state.space.len();
    state
        .summaries
        .iter()
        .map(|s| {
            let cells = (0..n)
                .map(|d| {
                    if let Some(&(_, v)) = s.importances.iter().find(|&&(dim, _)| dim == d) {
                        ImportanceCell::Importance(v)
                    } else {
                        let earlier = state
                            .summaries
                            .iter()
                            .find(|p| p.pinned_dim == d)
                            .expect("a missing dimension was pinned earlier");
                        ImportanceCell::Pinned {
                            level_label: state.space.dim(d).levels()[earlier.pinned_level]
                                .label
                                .clone(),
                            at_iteration: earlier.iteration,
                        }
                    }
                })
                .collect();
            ImportanceRow { iteration: s.iteration, cells }
        })
        .collect()
}

/// Builds the importance report for a run directory. Each pinned dimension
/// is swept through the forest of the iteration that pinned it, with the
/// other free dimensions held at the chosen context.
pub fn importance_report(dir: &RunDir, context: SweepContext) -> Result<ImportanceReport> {
    let state = dir.read_state()?;
    let mut notes = Vec::new();
    let mut curves = Vec::new();
    let best = state.dataset.best(state.params.select_by).cloned();

    for s in &state.summaries {
        if !dir.has_forest(s.iteration) {
            notes.push(format!(
                "iteration {} kept no model snapshot; its sweep curve is skipped",
                s.iteration
            ));
            continue;
        }
        let snapshot = dir.read_forest(s.iteration)?;
        let Some(swept) = snapshot.feature_dims.iter().position(|&d| d == s.pinned_dim) else {
            notes.push(format!(
                "iteration {} snapshot does not cover dimension '{}'; skipped",
                s.iteration,
                state.space.dim(s.pinned_dim).name()
            ));
            continue;
        };
        let mut x: Vec<f64> = snapshot
            .feature_dims
            .iter()
            .map(|&d| {
                let dim = state.space.dim(d);
                let level = match (&context, &best) {
                    (SweepContext::Best, Some(record)) => record.config.level(d),
                    _ => dim.min_cost_level(),
                };
                dim.levels()[level].encoding
            })
            .collect();
        let dim = state.space.dim(s.pinned_dim);
        let mut points = Vec::with_capacity(dim.len());
        for level in dim.levels() {
            x[swept] = level.encoding;
            let per_tree = snapshot.forest.predict_per_tree(&x)?;
            let mean = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
            points.push(SweepPoint {
                label: level.label.clone(),
                encoding: level.encoding,
                mean,
                std: population_std(&per_tree, mean),
            });
        }
        curves.push(SweepCurve {
            dim: s.pinned_dim,
            dim_name: dim.name().to_string(),
            pinned_iteration: s.iteration,
            points,
        });
    }

    Ok(ImportanceReport { table: table_rows(&state), curves, notes })
}

pub fn render_importance(space: &HyperSpace, report: &ImportanceReport) -> String {
    let mut out = String::from("dimension importance by iteration\n");
    let names: Vec<&str> = (0..space.len()).map(|d| space.dim(d).name()).collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(14);
    out.push_str(&format!("  {:<5}", "iter"));
    for name in &names {
        out.push_str(&format!(" {name:<width$}"));
    }
    out.push('\n');
    for row in &report.table {
        out.push_str(&format!("  {:<5}", row.iteration));
        for cell in &row.cells {
            let text = match cell {
                ImportanceCell::Importance(v) => format!("{v:.4}"),
                ImportanceCell::Pinned { level_label, at_iteration } => {
                    format!("[{level_label} @it{at_iteration}]")
                }
            };
            out.push_str(&format!(" {text:<width$}"));
        }
        out.push('\n');
    }
    if !report.curves.is_empty() {
        out.push_str("\npredicted r_s when sweeping each pinned dimension\n");
        for curve in &report.curves {
            out.push_str(&format!(
                "  {} (pinned at iteration {}):\n",
                curve.dim_name, curve.pinned_iteration
            ));
            for p in &curve.points {
                out.push_str(&format!(
                    "    {:<12} {:>10.4} ± {:.4}\n",
                    p.label, p.mean, p.std
                ));
            }
        }
    }
    for note in &report.notes {
        out.push_str(&format!("note: {note}\n"));
    }
    out
}

pub fn importance_csv(space: &HyperSpace, report: &ImportanceReport) -> String {
    let mut out = String::from("iteration,dimension,importance,pinned_level\n");
    for row in &report.table {
        for (d, cell) in row.cells.iter().enumerate() {
            let name = space.dim(d).name();
            match cell {
                ImportanceCell::Importance(v) => {
                    out.push_str(&format!("{},{},{},\n", row.iteration, name, v));
                }
                ImportanceCell::Pinned { level_label, .. } => {
                    out.push_str(&format!("{},{},,{}\n", row.iteration, name, level_label));
                }
            }
        }
    }
    out
}

pub fn curves_csv(report: &ImportanceReport) -> String {
    let mut out = String::from("dimension,level,encoding,predicted_rs_mean,predicted_rs_std\n");
    for curve in &report.curves {
        for p in &curve.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                curve.dim_name, p.label, p.encoding, p.mean, p.std
            ));
        }
    }
    out
}
