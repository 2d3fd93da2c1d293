use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub csim: f64,
}

/// Means over the per-video rows, plus the set-level Fréchet distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub fvd: f64,
    pub csim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: u32,
    pub label: String,
    /// Embedder behind the Fréchet column; values are only comparable
    /// between reports that share it.
    pub fvd_embedder: String,
    pub identity_embedder: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perceptual: Option<String>,
    pub videos: Vec<VideoMetrics>,
    pub aggregate: Aggregate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Psnr,
    Ssim,
    Lpips,
    Fvd,
    Csim,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Psnr, Metric::Ssim, Metric::Lpips, Metric::Fvd, Metric::Csim];

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Psnr | Metric::Ssim | Metric::Csim)
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "PSNR",
            Metric::Ssim => "SSIM",
            Metric::Lpips => "LPIPS",
            Metric::Fvd => "FVD",
            Metric::Csim => "CSIM",
        }
    }

    pub fn value(self, a: &Aggregate) -> Option<f64> {
        match self {
            Metric::Psnr => Some(a.psnr),
            Metric::Ssim => Some(a.ssim),
            Metric::Lpips => a.lpips,
            Metric::Fvd => Some(a.fvd),
            Metric::Csim => Some(a.csim),
        }
    }
}

/// The three comparison layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// Baseline against fine-tuned.
    Finetune,
    /// One row per synthetic:real ratio.
    RatioScale,
    /// One row per selection strategy.
    TargetedSelect,
}

impl TableKind {
    pub fn row_header(self) -> &'static str {
        match self {
            TableKind::Finetune => "",
            TableKind::RatioScale => "Sim:real distribution",
            TableKind::TargetedSelect => "Selection",
        }
    }

    pub fn columns(self) -> &'static [Metric] {
        match self {
            TableKind::Finetune | TableKind::RatioScale => &Metric::ALL,
            TableKind::TargetedSelect => &[Metric::Psnr, Metric::Ssim, Metric::Lpips, Metric::Csim],
        }
    }

    pub fn column_title(self, m: Metric) -> String {
        let name = match (self, m) {
            (TableKind::Finetune, Metric::Csim) => "ID-Sim",
            _ => m.name(),
        };
        let arrow = if m.higher_is_better() { "↑" } else { "↓" };
        format!("{name}{arrow}")
    }
}

/// A labelled row of aggregate metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub metrics: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub kind: TableKind,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    /// Markdown with arrows in the header, the best value per column in
    /// bold and absent values shown as `–`.
    pub fn to_markdown(&self) -> String {
        let cols = self.kind.columns();
        let mut out = String::new();
        write!(out, "| {} |", self.kind.row_header()).unwrap();
        for &m in cols {
            write!(out, " {} |", self.kind.column_title(m)).unwrap();
        }
        out.push('\n');
        out.push_str(&"|---".repeat(cols.len() + 1));
        out.push_str("|\n");
        let best: Vec<Option<f64>> = cols
            .iter()
            .map(|&m| {
                let vals = self.rows.iter().filter_map(|r| m.value(&r.metrics));
                if m.higher_is_better() {
                    vals.reduce(f64::max)
                } else {
                    vals.reduce(f64::min)
                }
            })
            .collect();
        for r in &self.rows {
            write!(out, "| {} |", r.label).unwrap();
            for (&m, b) in cols.iter().zip(&best) {
                match m.value(&r.metrics) {
                    None => out.push_str(" – |"),
                    Some(v) if Some(v) == *b && self.rows.len() > 1 => write!(out, " **{v:.4}** |").unwrap(),
                    Some(v) => write!(out, " {v:.4} |").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Label of the row that anchors radar normalisation.
pub const RADAR_ANCHOR: &str = "0:1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarRow {
    pub label: String,
    pub values: BTreeMap<Metric, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarData {
    pub anchor: String,
    pub metrics: Vec<Metric>,
    pub rows: Vec<RadarRow>,
}

/// Normalises every metric to `[0, 1]` with the `0:1` row as the minimum
/// and larger meaning better.
///
/// Lower-is-better metrics (LPIPS, FVD) are inverted so that improvement
/// over the anchor points upwards: `(a - x) / (a - min)`. The others use
/// `(x - a) / (max - a)`. Rows worse than the anchor clamp to 0; a metric
/// with no row better than the anchor is 0 everywhere. Metrics absent from
/// any row are left out.
pub fn radar_data(rows: &[TableRow]) -> Result<RadarData> {
    let anchor = rows.iter().find(|r| r.label == RADAR_ANCHOR).ok_or_else(|| {
        Error::Report(format!(
            "radar normalisation uses the {RADAR_ANCHOR} row as its minimum, but no such row exists"
        ))
    })?;
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|m| rows.iter().all(|r| m.value(&r.metrics).is_some()))
        .collect();
    let mut out: Vec<RadarRow> = rows
        .iter()
        .map(|r| RadarRow {
            label: r.label.clone(),
            values: BTreeMap::new(),
        })
        .collect();
    for &m in &metrics {
        let a = m.value(&anchor.metrics).unwrap();
        // signed improvement over the anchor
        let gain = |x: f64| if m.higher_is_better() { x - a } else { a - x };
        let top = rows
            .iter()
            .map(|r| gain(m.value(&r.metrics).unwrap()))
            .fold(0.0, f64::max);
        for (o, r) in out.iter_mut().zip(rows) {
            let g = gain(m.value(&r.metrics).unwrap());
            let v = if top > 0.0 { (g / top).clamp(0.0, 1.0) } else { 0.0 };
            o.values.insert(m, v);
        }
    }
    Ok(RadarData {
        anchor: RADAR_ANCHOR.into(),
        metrics,
        rows: out,
    })
}

impl RadarData {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Sim:real distribution |");
        for m in &self.metrics {
            write!(out, " {} |", m.name()).unwrap();
        }
        out.push('\n');
        out.push_str(&"|---".repeat(self.metrics.len() + 1));
        out.push_str("|\n");
        for r in &self.rows {
            write!(out, "| {} |", r.label).unwrap();
            for m in &self.metrics {
                write!(out, " {:.4} |", r.values[m]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(psnr: f64, lpips: Option<f64>, fvd: f64) -> Aggregate {
        Aggregate {
            psnr,
            ssim: 0.5,
            lpips,
            fvd,
            csim: 0.25,
        }
    }

    fn row(label: &str, a: Aggregate) -> TableRow {
        TableRow {
            label: label.into(),
            metrics: a,
        }
    }

    #[test]
    fn finetune_layout() {
        let t = ComparisonTable {
            kind: TableKind::Finetune,
            rows: vec![row("Baseline", agg(20.0, None, 8.0)), row("Finetuned", agg(21.0, None, 7.0))],
        };
        let md = t.to_markdown();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "|  | PSNR↑ | SSIM↑ | LPIPS↓ | FVD↓ | ID-Sim↑ |");
        assert_eq!(lines[3], "| Finetuned | **21.0000** | **0.5000** | – | **7.0000** | **0.2500** |");
        assert_eq!(lines[2], "| Baseline | 20.0000 | **0.5000** | – | 8.0000 | **0.2500** |");
    }

    #[test]
    fn selection_layout() {
        let t = ComparisonTable {
            kind: TableKind::TargetedSelect,
            rows: vec![row("Random", agg(1.0, Some(0.2), 1.0))],
        };
        assert!(t.to_markdown().starts_with("| Selection | PSNR↑ | SSIM↑ | LPIPS↓ | CSIM↑ |\n"));
    }

    #[test]
    fn radar_rule() {
        let rows = vec![
            row("0:1", agg(18.0, Some(0.22), 12.0)),
            row("1:1", agg(19.0, Some(0.20), 10.0)),
            row("4:1", agg(20.0, Some(0.18), 13.0)),
        ];
        let r = radar_data(&rows).unwrap();
        let v = |i: usize, m: Metric| r.rows[i].values[&m];
        assert_eq!(v(0, Metric::Psnr), 0.0);
        assert_eq!(v(1, Metric::Psnr), 0.5);
        assert_eq!(v(2, Metric::Psnr), 1.0);
        assert!((v(1, Metric::Lpips) - 0.5).abs() < 1e-12);
        assert_eq!(v(2, Metric::Lpips), 1.0);
        assert_eq!(v(1, Metric::Fvd), 1.0);
        assert_eq!(v(2, Metric::Fvd), 0.0);
        // no row beats the anchor on SSIM
        assert!(r.rows.iter().all(|row| row.values[&Metric::Ssim] == 0.0));
        assert!(radar_data(&rows[1..]).is_err());
    }
}
