//! Memorability-weighted summary correction and knapsack clip selection.
//!
//! Clip importance scores are rectified as `base + mu * memorability`
//! with the memorability predicted per clip, then clips are selected by
//! 0-1 knapsack dynamic programming under a total-frame budget (15% by
//! default).

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataio::{Clip, ClipManifest, LatentModel, SyntheticConfig};
use crate::error::{Error, Result};
use crate::metrics::{summary_f1, SummaryEval};
use crate::tmccl::MotionModel;
use crate::util::{fnv1a, sigmoid, standard_normal};

/// Rectified importance scores for one video.
#[derive(Debug, Clone, Serialize)]
pub struct RectifiedScores {
    pub base: Vec<f64>,
    pub memorability: Vec<f64>,
    pub rectified: Vec<f64>,
    pub mu: f64,
}

/// Outcome of clip selection.
#[derive(Debug, Clone, Serialize)]
pub struct SummarySelection {
    /// Indices of the selected clips, ascending.
    pub selected: Vec<usize>,
    pub total_selected_frames: usize,
    /// Sum of the (unshifted) values of the selected clips.
    pub objective: f64,
    pub budget_frames: usize,
    /// Constant added to every value to make them nonnegative for the DP;
    /// zero when no value was negative.
    pub value_shift: f64,
}

/// Predicted memorability of one clip (inference mode, dropout off).
pub fn score_memorability(motion_seq: &[Vec<f64>], model: &MotionModel) -> Result<f64> {
    model.encoder.score_value(&model.params, motion_seq)
}

/// Elementwise `rectified = base + mu * memorability`.
pub fn rectify(base: &[f64], memorability: &[f64], mu: f64) -> Result<RectifiedScores> {
    if base.len() != memorability.len() {
        return Err(Error::Schema(format!(
            "rectify: {} base scores vs {} memorability scores",
            base.len(),
            memorability.len()
        )));
    }
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "mu",
            reason: format!("must be a nonnegative real, got {mu}"),
        });
    }
    let rectified: Vec<f64> = base
        .iter()
        .zip(memorability)
        .map(|(y, s)| y + mu * s)
        .collect();
    Ok(RectifiedScores {
        base: base.to_vec(),
        memorability: memorability.to_vec(),
        rectified,
        mu,
    })
}

/// 0-1 knapsack over frame counts: maximize total value within
/// `floor(budget_fraction * total_frames)` frames.
///
/// Ties between equal-value subsets break toward fewer total frames, then
/// the lexicographically smallest index set. Negative values are shifted
/// up by `-min(value)` first; the DP never selects a negative-value item
/// while the selection is meant to fill the budget.
pub fn knapsack_select(
    frame_counts: &[usize],
    values: &[f64],
    budget_fraction: f64,
) -> Result<SummarySelection> {
    if frame_counts.len() != values.len() {
        return Err(Error::Schema(format!(
            "knapsack: {} frame counts vs {} values",
            frame_counts.len(),
            values.len()
        )));
    }
    if frame_counts.contains(&0) {
        return Err(Error::Schema("knapsack: frame counts must be positive".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "knapsack values".into(),
        });
    }
    if !(budget_fraction.is_finite() && budget_fraction >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "budget_fraction",
            reason: format!("must be a nonnegative real, got {budget_fraction}"),
        });
    }
    let total: usize = frame_counts.iter().sum();
    let budget = (budget_fraction * total as f64).floor() as usize;

    let min_v = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let value_shift = if min_v < 0.0 { -min_v } else { 0.0 };
    let work: Vec<f64> = values.iter().map(|v| v + value_shift).collect();

    let n = frame_counts.len();
    // suffix[i][w]: best (value, frames) using items i.. with capacity w.
    let width = budget + 1;
    let mut suffix = vec![(0.0f64, 0usize); (n + 1) * width];
    for i in (0..n).rev() {
        for w in 0..width {
            let skip = suffix[(i + 1) * width + w];
            let mut best = skip;
            if frame_counts[i] <= w {
                let rest = suffix[(i + 1) * width + (w - frame_counts[i])];
                let take = (work[i] + rest.0, frame_counts[i] + rest.1);
                if take.0 > best.0 || (take.0 == best.0 && take.1 < best.1) {
                    best = take;
                }
            }
            suffix[i * width + w] = best;
        }
    }

    // Greedy reconstruction; preferring to take at exact (value, frames)
    // ties yields the lexicographically smallest index set.
    let mut selected = Vec::new();
    let mut w = budget;
    for i in 0..n {
        if frame_counts[i] > w {
            continue;
        }
        let skip = suffix[(i + 1) * width + w];
        let rest = suffix[(i + 1) * width + (w - frame_counts[i])];
        let take = (work[i] + rest.0, frame_counts[i] + rest.1);
        if take.0 > skip.0 || (take.0 == skip.0 && take.1 <= skip.1) {
            selected.push(i);
            w -= frame_counts[i];
        }
    }

    let total_selected_frames: usize = selected.iter().map(|&i| frame_counts[i]).sum();
    let objective: f64 = selected.iter().map(|&i| values[i]).sum();
    debug_assert!(total_selected_frames <= budget);
    Ok(SummarySelection {
        selected,
        total_selected_frames,
        objective,
        budget_frames: budget,
        value_shift,
    })
}

/// Full per-video pipeline: score clips, rectify, select, evaluate.
pub fn summarize(
    manifest: &ClipManifest,
    model: &MotionModel,
    mu: f64,
    budget_fraction: f64,
) -> Result<(SummarySelection, RectifiedScores, SummaryEval)> {
    manifest.validate()?;
    let base: Vec<f64> = manifest.clips.iter().map(|c| c.base_importance).collect();
    let memorability: Vec<f64> = manifest
        .clips
        .iter()
        .map(|c| score_memorability(&c.motion_seq, model))
        .collect::<Result<_>>()?;
    let rectified = rectify(&base, &memorability, mu)?;
    let frame_counts: Vec<usize> = manifest.clips.iter().map(|c| c.frame_count).collect();
    let selection = knapsack_select(&frame_counts, &rectified.rectified, budget_fraction)?;
    let mut pred_frames = BTreeSet::new();
    for &i in &selection.selected {
        pred_frames.extend(manifest.clip_frame_range(i));
    }
    let eval = summary_f1(&pred_frames, &manifest.ground_truth_frames, manifest.total_frames)?;
    Ok((selection, rectified, eval))
}

/// Controls for the synthetic summarization corpus.
#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub videos: usize,
    pub clips_per_video: usize,
    pub min_clip_frames: usize,
    pub max_clip_frames: usize,
    /// Weight of true memorability in the ground-truth importance mix.
    pub memorability_mix: f64,
    pub budget_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            videos: 20,
            clips_per_video: 20,
            min_clip_frames: 30,
            max_clip_frames: 120,
            memorability_mix: 0.5,
            budget_fraction: 0.15,
        }
    }
}

/// Synthetic summarization corpus sharing the latent factor loadings of
/// the record generator (same `base.seed`): a motion encoder trained on
/// those records predicts each clip's true memorability. Ground-truth
/// summaries select by a base/memorability importance mix.
pub fn generate_corpus(base: &SyntheticConfig, cfg: &CorpusConfig) -> Result<Vec<ClipManifest>> {
    base.validate()?;
    if cfg.videos == 0 || cfg.clips_per_video == 0 {
        return Err(Error::InvalidParameter {
            name: "corpus",
            reason: "videos and clips_per_video must be positive".into(),
        });
    }
    if cfg.min_clip_frames == 0 || cfg.min_clip_frames > cfg.max_clip_frames {
        return Err(Error::InvalidParameter {
            name: "corpus clip frames",
            reason: format!(
                "need 0 < min <= max, got {}..{}",
                cfg.min_clip_frames, cfg.max_clip_frames
            ),
        });
    }
    if !(0.0..=1.0).contains(&cfg.memorability_mix) {
        return Err(Error::InvalidParameter {
            name: "memorability_mix",
            reason: format!("must lie in [0, 1], got {}", cfg.memorability_mix),
        });
    }
    let model = LatentModel::from_config(base);
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed ^ fnv1a("summ-corpus"));
    let mut manifests = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let mut clips = Vec::with_capacity(cfg.clips_per_video);
        let mut gt_importance = Vec::with_capacity(cfg.clips_per_video);
        for c in 0..cfg.clips_per_video {
            let z: Vec<f64> = (0..base.latent_dim)
                .map(|_| standard_normal(&mut rng))
                .collect();
            let motion_base = LatentModel::project(&model.a_motion, base.d_raw, &z);
            let motion_seq: Vec<Vec<f64>> = (0..base.t_m)
                .map(|_| {
                    motion_base
                        .iter()
                        .map(|x| x + base.motion_noise * standard_normal(&mut rng))
                        .collect()
                })
                .collect();
            let logit: f64 = model.w_st.iter().zip(&z).map(|(w, zv)| w * zv).sum();
            let true_mem = sigmoid(logit);
            let base_importance: f64 = rng.gen_range(0.0..1.0);
            let frame_count = rng.gen_range(cfg.min_clip_frames..=cfg.max_clip_frames);
            gt_importance.push(
                (1.0 - cfg.memorability_mix) * base_importance + cfg.memorability_mix * true_mem,
            );
            clips.push(Clip {
                clip_id: format!("v{v:03}-c{c:03}"),
                frame_count,
                base_importance,
                motion_seq,
            });
        }
        let frame_counts: Vec<usize> = clips.iter().map(|c| c.frame_count).collect();
        let total_frames: usize = frame_counts.iter().sum();
        let gt_sel = knapsack_select(&frame_counts, &gt_importance, cfg.budget_fraction)?;
        let mut ground_truth_frames = BTreeSet::new();
        let mut offset = 0usize;
        for (i, fc) in frame_counts.iter().enumerate() {
            if gt_sel.selected.contains(&i) {
                ground_truth_frames.extend(offset..offset + fc);
            }
            offset += fc;
        }
        let manifest = ClipManifest {
            video_id: format!("summ-{v:03}"),
            total_frames,
            clips,
            ground_truth_frames,
        };
        manifest.validate()?;
        manifests.push(manifest);
    }
    Ok(manifests)
}
