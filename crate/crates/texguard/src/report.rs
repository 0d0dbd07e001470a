//! CSV report emission. Every file opens with `#` comment lines that pin the
//! distortion convention and the hyperparameters of the run, so a report is
//! interpretable on its own.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use texguard_core::metrics::{DefenseReport, EvalRecord, ReportRow};
use texguard_core::perturb::EpochLog;

use crate::config::RunConfig;

/// Hyperparameters echoed into every report header.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub epsilon: f64,
    pub dsr_threshold: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub mask_threshold: f64,
    pub seed: u64,
}

impl ReportMeta {
    pub fn from_config(cfg: &RunConfig, dsr_threshold: f64) -> Self {
        Self {
            epsilon: cfg.defense.epsilon,
            dsr_threshold,
            lambda1: cfg.loss.lambda1,
            lambda2: cfg.loss.lambda2,
            lambda3: cfg.loss.lambda3,
            mask_threshold: cfg.loss.threshold,
            seed: cfg.seed,
        }
    }

    fn header(&self) -> String {
        let mut s = String::new();
        s.push_str(
            "# distortion_d = mean squared pixel difference between the edit of the\n\
             # original image and the edit of the protected image; a defense counts\n\
             # as successful when distortion_d >= dsr_threshold.\n",
        );
        s.push_str(&format!(
            "# epsilon = {:.6}, dsr_threshold = {:.6}, seed = {}\n",
            self.epsilon, self.dsr_threshold, self.seed
        ));
        s.push_str(&format!(
            "# lambda1 = {:.6}, lambda2 = {:.6}, lambda3 = {:.6}, mask_threshold = {:.6}\n",
            self.lambda1, self.lambda2, self.lambda3, self.mask_threshold
        ));
        s
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Per-image evaluation rows, one group of records per edit kind.
pub fn write_records_csv(
    path: &Path,
    meta: &ReportMeta,
    groups: &[(&str, &[EvalRecord])],
) -> Result<()> {
    let mut s = meta.header();
    s.push_str("image_id,edit_kind,psnr_db,ssim,distortion_d,success\n");
    for (kind, records) in groups {
        for r in *records {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.image_id,
                kind,
                fmt(r.psnr_db),
                fmt(r.ssim),
                fmt(r.distortion_d),
                u8::from(r.success)
            ));
        }
    }
    fs::write(path, s).with_context(|| format!("write {}", path.display()))
}

/// Aggregate report, one row per edit configuration.
pub fn write_report_csv(path: &Path, meta: &ReportMeta, report: &DefenseReport) -> Result<()> {
    let mut s = meta.header();
    s.push_str("edit_kind,mean_distortion,dsr_percent,mean_psnr,mean_ssim\n");
    for row in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            row.edit_kind,
            fmt(row.mean_distortion),
            fmt(row.dsr_percent),
            fmt(row.mean_psnr),
            fmt(row.mean_ssim)
        ));
    }
    fs::write(path, s).with_context(|| format!("write {}", path.display()))
}

/// Defense training curve.
pub fn write_training_csv(path: &Path, meta: &ReportMeta, logs: &[EpochLog]) -> Result<()> {
    let mut s = meta.header();
    s.push_str("epoch,loss_mae,loss_mse,loss_cam,loss_total\n");
    for l in logs {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            l.epoch,
            fmt(l.mae),
            fmt(l.mse),
            fmt(l.cam),
            fmt(l.total)
        ));
    }
    fs::write(path, s).with_context(|| format!("write {}", path.display()))
}

/// Parse an aggregate report back, skipping `#` comments and the header row.
pub fn read_report_csv(path: &Path) -> Result<DefenseReport> {
    let text =
        fs::read_to_string(path).with_context(|| format!("read report {}", path.display()))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("edit_kind,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("{}: expected 5 fields, got {line:?}", path.display());
        }
        rows.push(ReportRow {
            edit_kind: fields[0].to_string(),
            mean_distortion: fields[1].parse()?,
            dsr_percent: fields[2].parse()?,
            mean_psnr: fields[3].parse()?,
            mean_ssim: fields[4].parse()?,
        });
    }
    Ok(DefenseReport { rows })
}
