use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ReportFormat, RunConfig};
use super::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    pub original_len: usize,
    pub compressed_len: usize,
    pub achieved_ratio: f64,
    /// Metric values; components appear as `metric.component`, scores
    /// against alternative targets as `metric@target`.
    pub metrics: BTreeMap<String, f64>,
    /// Metrics that could not be computed for this row, with the reason.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub unavailable: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub rows: usize,
    /// No rows survived.
    pub empty: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_achieved_ratio: Option<f64>,
    /// Mean of each metric over the rows that have it.
    pub metrics: BTreeMap<String, f64>,
    /// How many rows contributed to each metric mean.
    pub counts: BTreeMap<String, usize>,
}

impl Aggregates {
    pub fn from_rows(rows: &[Row]) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for row in rows {
            for (k, v) in &row.metrics {
                let e = sums.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let mean_achieved_ratio = (!rows.is_empty())
            .then(|| rows.iter().map(|r| r.achieved_ratio).sum::<f64>() / rows.len() as f64);
        Aggregates {
            rows: rows.len(),
            empty: rows.is_empty(),
            mean_achieved_ratio,
            metrics: sums.iter().map(|(k, (s, n))| (k.clone(), s / *n as f64)).collect(),
            counts: sums.into_iter().map(|(k, (_, n))| (k, n)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub ratio: f64,
    pub rows: Vec<Row>,
    pub skips: Vec<Skip>,
    pub aggregates: Aggregates,
}

impl Section {
    pub fn new(ratio: f64, rows: Vec<Row>, skips: Vec<Skip>) -> Self {
        let aggregates = Aggregates::from_rows(&rows);
        Section {
            ratio,
            rows,
            skips,
            aggregates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub timestamp: String,
    pub config: RunConfig,
    pub dataset_size: usize,
    pub sections: Vec<Section>,
}

impl EvalReport {
    /// Pretty JSON with keys sorted at every level.
    pub fn to_json(&self) -> Result<String, RunError> {
        let value = serde_json::to_value(self).map_err(|e| RunError::Report(e.to_string()))?;
        serde_json::to_string_pretty(&value)
            .map(|s| s + "\n")
            .map_err(|e| RunError::Report(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Report(e.to_string()))
    }

    /// Item rows first, then one aggregate line per section.
    pub fn to_csv(&self) -> Result<String, RunError> {
        let metric_cols: BTreeSet<&String> = self
            .sections
            .iter()
            .flat_map(|s| s.rows.iter().flat_map(|r| r.metrics.keys()))
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "kind".to_string(),
            "ratio".into(),
            "id".into(),
            "original_len".into(),
            "compressed_len".into(),
            "achieved_ratio".into(),
            "latency_ms".into(),
        ];
        header.extend(metric_cols.iter().map(|m| m.to_string()));
        let err = |e: csv::Error| RunError::Report(e.to_string());
        w.write_record(&header).map_err(err)?;

        let metric_cells = |values: &BTreeMap<String, f64>| -> Vec<String> {
            metric_cols
                .iter()
                .map(|m| values.get(*m).map(f64::to_string).unwrap_or_default())
                .collect()
        };
        for s in &self.sections {
            for r in &s.rows {
                let mut rec = vec![
                    "row".to_string(),
                    s.ratio.to_string(),
                    r.id.clone(),
                    r.original_len.to_string(),
                    r.compressed_len.to_string(),
                    r.achieved_ratio.to_string(),
                    r.latency_ms.map(|l| l.to_string()).unwrap_or_default(),
                ];
                rec.extend(metric_cells(&r.metrics));
                w.write_record(&rec).map_err(err)?;
            }
        }
        for s in &self.sections {
            let a = &s.aggregates;
            let mut rec = vec![
                "aggregate".to_string(),
                s.ratio.to_string(),
                if a.empty { "empty".into() } else { "mean".into() },
                String::new(),
                String::new(),
                a.mean_achieved_ratio.map(|m| m.to_string()).unwrap_or_default(),
                String::new(),
            ];
            rec.extend(metric_cells(&a.metrics));
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| RunError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| RunError::Report(e.to_string()))
    }
}

pub fn write_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<(), RunError> {
    let text = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv()?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<EvalReport, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EvalReport::from_json(&text)
}
