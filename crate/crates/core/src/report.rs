//! JSON run reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::fusion::FusionWeights;

/// Headline metrics; absent fields were not computed by the command.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub st_rc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lt_rc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

/// Per-modality validation/test diagnostics of an evaluation run.
#[derive(Debug, Clone, Serialize)]
pub struct ModalityRc {
    pub v: f64,
    pub t: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub op: String,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoSummaryEntry {
    pub video_id: String,
    pub selected_clips: Vec<String>,
    pub budget_frames: usize,
    pub selected_frames: usize,
    pub objective: f64,
    pub value_shift: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationArm {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Rank correlation of the motion regression head on each seed's test split.
    pub per_seed_motion_st_rc: Vec<f64>,
    pub mean_motion_st_rc: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MuSweepRow {
    pub mu: f64,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AblationSection {
    pub arms: Vec<AblationArm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_motion_st_rc: Option<f64>,
    pub mu_sweep: Vec<MuSweepRow>,
}

/// One run's full output document.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_weights: Option<FusionWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modality_st_rc: Option<ModalityRc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
    /// Mean contrastive term per epoch; the regression component of the
    /// combined trace is `loss - lambda * contrastive`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrastive_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_checks: Option<Vec<GradCheckEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summaries: Option<Vec<VideoSummaryEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSection>,
    /// Files the command wrote, by role.
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

impl Report {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            metrics: Metrics::default(),
            fusion_weights: None,
            modality_st_rc: None,
            loss_trace: None,
            contrastive_trace: None,
            grad_checks: None,
            summaries: None,
            ablation: None,
            artifacts: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join("report.json");
        std::fs::write(&path, self.to_json()?)?;
        Ok(path)
    }
}
