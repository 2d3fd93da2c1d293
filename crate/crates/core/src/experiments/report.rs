use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::ExperimentPlan;
use crate::curation::SelectionResult;
use crate::error::{Error, Result};
use crate::metrics::{radar_data, ComparisonTable, MetricReport, RadarData, TableKind, TableRow, REPORT_SCHEMA};

pub const REPORT_FILE: &str = "report.json";

/// What a row was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub train_entries: usize,
    pub synthetic_entries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionResult>,
}

/// The outcome of one plan. Holds no wall-clock values, so reruns of the
/// same plan and seed serialise identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub plan_hash: String,
    pub table: ComparisonTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radar: Option<RadarData>,
    pub groups: Vec<GroupSummary>,
    pub reports: Vec<MetricReport>,
}

impl ExperimentReport {
    pub fn new(
        plan: &ExperimentPlan,
        kind: TableKind,
        groups: Vec<GroupSummary>,
        reports: Vec<MetricReport>,
    ) -> Result<Self> {
        let table = ComparisonTable {
            kind,
            rows: reports
                .iter()
                .map(|r| TableRow {
                    label: r.label.clone(),
                    metrics: r.aggregate.clone(),
                })
                .collect(),
        };
        let radar = match kind {
            TableKind::RatioScale if table.rows.iter().any(|r| r.label == crate::metrics::RADAR_ANCHOR) => {
                Some(radar_data(&table.rows)?)
            }
            _ => None,
        };
        Ok(Self {
            schema: REPORT_SCHEMA,
            name: plan.name.clone(),
            kind: plan.kind.name().to_string(),
            seed: plan.seed,
            plan_hash: plan.hash()?,
            table,
            radar,
            groups,
            reports,
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# {}\n\n", self.name);
        if let Some(r) = self.reports.first() {
            out.push_str(&format!(
                "FVD embedder: {}. Identity embedder: {}.",
                r.fvd_embedder, r.identity_embedder
            ));
            if let Some(p) = &r.perceptual {
                out.push_str(&format!(" LPIPS column: {p}."));
            }
            out.push_str("\n\n");
        }
        out.push_str(&self.table.to_markdown());
        if let Some(radar) = &self.radar {
            out.push_str(&format!(
                "\nNormalised to [0, 1] with the {} row as the minimum; LPIPS and FVD inverted.\n\n",
                radar.anchor
            ));
            out.push_str(&radar.to_markdown());
        }
        out
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: Self =
            serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::Report(format!(
                "{} has schema {} (expected {REPORT_SCHEMA})",
                path.display(),
                report.schema
            )));
        }
        Ok(report)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `report.md` and, for ratio runs, `radar.json`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(REPORT_FILE), &serde_json::to_string_pretty(report)?)?;
    write(&dir.join("report.md"), &report.to_markdown())?;
    if let Some(radar) = &report.radar {
        write(&dir.join("radar.json"), &serde_json::to_string_pretty(radar)?)?;
    }
    Ok(())
}

/// Rows of several runs in one table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedReport {
    pub schema: u32,
    pub sources: Vec<String>,
    pub table: ComparisonTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radar: Option<RadarData>,
}

impl MergedReport {
    pub fn to_markdown(&self) -> String {
        let mut out = self.table.to_markdown();
        if let Some(radar) = &self.radar {
            out.push('\n');
            out.push_str(&radar.to_markdown());
        }
        out
    }
}

/// Concatenates the rows of `reports` in order. All runs must share the
/// table kind and the embedders behind each column. A ratio merge also
/// yields radar data, which needs a `0:1` row.
pub fn merge_reports(reports: &[ExperimentReport]) -> Result<MergedReport> {
    let first = reports.first().ok_or_else(|| Error::Report("nothing to merge".into()))?;
    let kind = first.table.kind;
    let key = |r: &MetricReport| (r.fvd_embedder.clone(), r.identity_embedder.clone(), r.perceptual.clone());
    let want = first.reports.first().map(key);
    let mut rows = Vec::new();
    let mut labels = HashSet::new();
    for rep in reports {
        if rep.table.kind != kind {
            return Err(Error::Report(format!(
                "cannot merge a {:?} table into a {:?} table",
                rep.table.kind, kind
            )));
        }
        for m in &rep.reports {
            if m.schema != REPORT_SCHEMA || Some(key(m)) != want {
                return Err(Error::Report(format!(
                    "run `{}` row `{}` uses a different metric schema or embedders",
                    rep.name, m.label
                )));
            }
        }
        for row in &rep.table.rows {
            if !labels.insert(row.label.clone()) {
                return Err(Error::Report(format!("row `{}` appears in more than one run", row.label)));
            }
            rows.push(row.clone());
        }
    }
    let table = ComparisonTable { kind, rows };
    let radar = match kind {
        TableKind::RatioScale => Some(radar_data(&table.rows)?),
        _ => None,
    };
    Ok(MergedReport {
        schema: REPORT_SCHEMA,
        sources: reports.iter().map(|r| r.name.clone()).collect(),
        table,
        radar,
    })
}
