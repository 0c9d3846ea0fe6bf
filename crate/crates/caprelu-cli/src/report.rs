//! Report rows, CSV assembly and atomic file output.

use crate::config::{AdvRegime, Arch, CapValue, Placement};
use anyhow::{bail, Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// One cell row of the adversarial-training accuracy table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub max_val: CapValue,
    pub adv: AdvRegime,
    pub clean_acc: f64,
    pub fgsm_acc: f64,
    pub pgd_acc: f64,
    /// `None` when CW evaluation is disabled; the CSV cell stays empty.
    pub cw_acc: Option<f64>,
}

/// One per-layer distance row of the perturbation-growth experiment.
#[derive(Debug, Clone)]
pub struct LayerDistRow {
    pub cap_layers: Placement,
    pub train_beta: f64,
    pub norm: &'static str,
    pub layer_index: usize,
    pub mean_distance: f64,
}

/// One accuracy row of the sweep-style experiments.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub arch: Arch,
    pub cap_layers: Placement,
    pub train_beta: f64,
    pub eval_beta: f64,
    pub std_acc: f64,
    pub rob_acc: f64,
    pub success_rate: f64,
}

/// One zero-gradient distance row.
#[derive(Debug, Clone)]
pub struct ZeroGradRow {
    pub arch: Arch,
    pub cap_layers: Placement,
    pub train_beta: f64,
    pub eval_beta: f64,
    /// Mean Euclidean distance over probes that found a zero gradient;
    /// `None` (empty cell) when none did.
    pub mean_distance: Option<f64>,
    pub found_fraction: f64,
}

/// One sensitivity-map total row; `image_id` −1 is the test-set mean.
#[derive(Debug, Clone)]
pub struct SmapRow {
    pub train_beta: CapValue,
    pub image_id: i64,
    pub total: f64,
}

fn acc(v: f64) -> String {
    format!("{v:.6}")
}

fn dist(v: f64) -> String {
    format!("{v:.9}")
}

pub const TABLE_HEADER: &str = "max_val,adv_training,clean_acc,fgsm_acc,pgd_acc,cw_acc";
pub const LAYERDIST_HEADER: &str = "cap_layers,train_beta,norm,layer_index,mean_distance";
pub const SWEEP_HEADER: &str = "arch,cap_layers,train_beta,eval_beta,std_acc,rob_acc,success_rate";
pub const ZEROGRAD_HEADER: &str = "arch,cap_layers,train_beta,eval_beta,mean_distance,found_fraction";
pub const SMAP_HEADER: &str = "train_beta,image_id,total";

impl TableRow {
    pub fn to_csv(&self) -> String {
        let cw = match self.cw_acc {
            Some(v) => acc(v),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{}",
            self.max_val,
            self.adv.label(),
            acc(self.clean_acc),
            acc(self.fgsm_acc),
            acc(self.pgd_acc),
            cw
        )
    }

    pub fn key(&self) -> String {
        format!("{}|{}", self.max_val, self.adv.label())
    }
}

impl LayerDistRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.cap_layers,
            self.train_beta,
            self.norm,
            self.layer_index,
            dist(self.mean_distance)
        )
    }

    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.cap_layers, self.train_beta, self.norm, self.layer_index
        )
    }
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.arch,
            self.cap_layers,
            self.train_beta,
            self.eval_beta,
            acc(self.std_acc),
            acc(self.rob_acc),
            acc(self.success_rate)
        )
    }

    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.arch, self.cap_layers, self.train_beta, self.eval_beta
        )
    }
}

impl ZeroGradRow {
    pub fn to_csv(&self) -> String {
        let mean = match self.mean_distance {
            Some(v) => dist(v),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{},{}",
            self.arch, self.cap_layers, self.train_beta, self.eval_beta, mean,
            acc(self.found_fraction)
        )
    }

    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.arch, self.cap_layers, self.train_beta, self.eval_beta
        )
    }
}

impl SmapRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{:e}", self.train_beta, self.image_id, self.total)
    }

    pub fn key(&self) -> String {
        format!("{}|{}", self.train_beta, self.image_id)
    }
}

/// Assemble a CSV document and reject duplicate cell keys.
pub fn to_csv_doc<R>(
    header: &str,
    rows: &[R],
    key: impl Fn(&R) -> String,
    line: impl Fn(&R) -> String,
) -> Result<String> {
    let mut seen = std::collections::HashSet::new();
    let mut doc = String::with_capacity(rows.len() * 48 + header.len() + 1);
    doc.push_str(header);
    doc.push('\n');
    for r in rows {
        let k = key(r);
        if !seen.insert(k.clone()) {
            bail!("duplicate report cell key {k:?}");
        }
        let _ = writeln!(doc, "{}", line(r));
    }
    Ok(doc)
}

/// Render a 28×28 map as 28 CSV lines of 28 values, no header.
pub fn map_to_csv(map: &ndarray::Array2<f64>) -> String {
    let mut doc = String::new();
    for row in map.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(doc, "{}", cells.join(","));
    }
    doc
}

/// Metadata written next to the CSVs; timings stay out of the CSV rows.
#[derive(Debug, Serialize)]
pub struct ReportMeta<C: Serialize> {
    pub experiment: String,
    pub version: String,
    pub config: C,
    pub timings_seconds: BTreeMap<String, f64>,
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes)
        .with_context(|| format!("cannot write temporary file {}", tmp.display()))?;
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move report into place at {}", path.display()))?;
    Ok(())
}

/// Write the meta JSON for an experiment run.
pub fn write_meta<C: Serialize>(dir: &Path, meta: &ReportMeta<C>) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).context("cannot serialize report meta")?;
    write_atomic(&dir.join("report.json"), text.as_bytes())
}
