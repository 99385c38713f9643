//! Evaluation report schema and its CSV/JSON renderings.
//!
//! CSV headers follow the experiment:
//!
//! | experiment          | columns                                          |
//! |---------------------|--------------------------------------------------|
//! | `rmse_pairwise`     | `Datatype,Group size,RMSE`                       |
//! | `retrieval_overlap` | `Datatype,Group size,Accuracy`                   |
//! | `sts_correlation`   | `Dataset,Datatype,Correlation coefficient,Ratio` |
//!
//! The JSON form carries every field of [`EvalReport`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    RmsePairwise,
    RetrievalOverlap,
    StsCorrelation,
}

impl Experiment {
    fn value_column(self) -> &'static str {
        match self {
            Experiment::RmsePairwise => "RMSE",
            Experiment::RetrievalOverlap => "Accuracy",
            Experiment::StsCorrelation => "Correlation coefficient",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Table label: `Fp32`, `Bf16`, `Int8`, `Int4` or `PQ[M,K]`.
    pub label: String,
    /// Machine form of the method: a dtype string or `pq:M:K`.
    pub method: String,
    /// Group size for grouped integer dtypes; empty otherwise.
    pub group: Option<u32>,
    pub value: f64,
    /// The full-precision value the row is compared with.
    pub baseline: f64,
    /// `value / baseline`, absent when the baseline is zero.
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_query_overlap: Option<Vec<usize>>,
}

impl ReportRow {
    pub fn new(label: String, method: String, group: Option<u32>, value: f64, baseline: f64) -> Self {
        let ratio = (baseline != 0.0).then(|| value / baseline);
        Self { label, method, group, value, baseline, ratio, per_query_overlap: None }
    }
}

/// Binned similarity values over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub method: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(method: String, values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = ((v - lo) / width).floor();
            let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Self { method, lo, hi, counts }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    /// Experiment parameters (sample size, split sizes, k, ...).
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_checksum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_hnsw_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub histograms: Vec<Histogram>,
    pub metadata: Metadata,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        match self.experiment {
            Experiment::StsCorrelation => {
                w.write_record(["Dataset", "Datatype", "Correlation coefficient", "Ratio"])?;
                let dataset = self.dataset.clone().unwrap_or_default();
                for r in &self.rows {
                    let ratio = r.ratio.map(|v| v.to_string()).unwrap_or_default();
                    w.write_record([dataset.as_str(), &r.label, &r.value.to_string(), &ratio])?;
                }
            }
            e => {
                w.write_record(["Datatype", "Group size", e.value_column()])?;
                for r in &self.rows {
                    let group = r.group.map(|g| g.to_string()).unwrap_or_default();
                    w.write_record([r.label.as_str(), &group, &r.value.to_string()])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `<prefix>.csv` and `<prefix>.json`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let csv_path = prefix.with_extension("csv");
        let json_path = prefix.with_extension("json");
        std::fs::write(csv_path, self.to_csv()?)?;
        std::fs::write(json_path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Several reports gathered into one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedReport {
    pub reports: Vec<EvalReport>,
}

impl MergedReport {
    /// Long-format table with one line per row of every report.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["Experiment", "Dataset", "Datatype", "Method", "Group size", "Value", "Baseline", "Ratio"])?;
        for rep in &self.reports {
            let exp = serde_json::to_value(rep.experiment)?;
            let exp = exp.as_str().unwrap_or_default().to_string();
            for r in &rep.rows {
                w.write_record([
                    exp.as_str(),
                    rep.dataset.as_deref().unwrap_or(""),
                    &r.label,
                    &r.method,
                    &r.group.map(|g| g.to_string()).unwrap_or_default(),
                    &r.value.to_string(),
                    &r.baseline.to_string(),
                    &r.ratio.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
    }
}
