//! Flat key=value run configuration.
//!
//! Every key has a documented default; unknown keys are rejected. Lines
//! starting with `#` and blank lines are ignored; values may carry an
//! inline `#` comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::appearance::AppearanceConfig;
use crate::dataio::SyntheticConfig;
use crate::error::{Error, Result};
use crate::summarizer::CorpusConfig;
use crate::tmccl::{MotionEncoderConfig, TrainConfig};

/// All knobs of the pipeline, desk-scale defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset_path: PathBuf,
    pub manifest_dir: PathBuf,
    pub model_path: PathBuf,

    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,

    pub num_records: usize,
    pub frames_per_video: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub t_m: usize,
    pub d_raw: usize,
    pub latent_dim: usize,
    pub text_noise: f64,
    pub motion_noise: f64,
    pub frame_noise: f64,
    pub score_noise: f64,

    pub corpus_videos: usize,
    pub corpus_clips: usize,
    pub corpus_min_frames: usize,
    pub corpus_max_frames: usize,
    pub corpus_mix: f64,

    pub k: usize,
    pub tau: f64,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub step_epochs: usize,
    pub lr_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub use_tmccl: bool,
    pub queue_capacity: usize,
    pub text_cosine: bool,

    pub enc_channels: usize,
    pub enc_embed_dim: usize,
    pub enc_proj_dim: usize,
    pub enc_reg_hidden: usize,
    pub enc_dropout: f64,

    pub app_hidden: usize,
    pub app_channels: usize,
    pub app_l: usize,
    pub app_common_dim: usize,
    pub head_hidden: usize,
    pub eval_epochs: usize,
    pub eval_batch: usize,
    pub eval_lr: f64,
    pub fusion_step: f64,

    pub mu: f64,
    pub budget_fraction: f64,

    pub ablation_seeds: Vec<u64>,
    pub ablation_arms: Vec<String>,
    pub mu_sweep: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dataset_path: "data/dataset.jsonl".into(),
            manifest_dir: "data/manifests".into(),
            model_path: "out/model.json".into(),

            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,

            num_records: 256,
            frames_per_video: 8,
            d_v: 18,
            d_t: 16,
            t_m: 12,
            d_raw: 16,
            latent_dim: 8,
            text_noise: 0.1,
            motion_noise: 0.1,
            frame_noise: 0.1,
            score_noise: 0.05,

            corpus_videos: 20,
            corpus_clips: 20,
            corpus_min_frames: 30,
            corpus_max_frames: 120,
            corpus_mix: 0.5,

            k: 8,
            tau: 0.07,
            lambda: 0.5,
            lr: 0.001,
            weight_decay: 0.0001,
            step_epochs: 60,
            lr_decay: 0.1,
            batch: 16,
            epochs: 40,
            use_tmccl: true,
            queue_capacity: 1024,
            text_cosine: false,

            enc_channels: 16,
            enc_embed_dim: 32,
            enc_proj_dim: 16,
            enc_reg_hidden: 16,
            enc_dropout: 0.5,

            app_hidden: 18,
            app_channels: 9,
            app_l: 9,
            app_common_dim: 16,
            head_hidden: 16,
            eval_epochs: 30,
            eval_batch: 16,
            eval_lr: 0.005,
            fusion_step: 0.05,

            mu: 0.5,
            budget_fraction: 0.15,

            ablation_seeds: vec![1, 2, 3],
            ablation_arms: vec!["with_tmccl".into(), "without_tmccl".into()],
            mu_sweep: vec![1.0, 0.5, 0.1, 0.0],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!(
        "key `{key}`: cannot parse `{value}` as {}",
        std::any::type_name::<T>()
    )))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!(
            "key `{key}`: expected a boolean, got `{other}`"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse::<T>(key, s))
        .collect()
}

impl RunConfig {
    /// Apply one `key = value` pair. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "dataset_path" => self.dataset_path = value.trim().into(),
            "manifest_dir" => self.manifest_dir = value.trim().into(),
            "model_path" => self.model_path = value.trim().into(),
            "train_frac" => self.train_frac = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            "test_frac" => self.test_frac = parse(key, value)?,
            "num_records" => self.num_records = parse(key, value)?,
            "frames_per_video" => self.frames_per_video = parse(key, value)?,
            "d_v" => self.d_v = parse(key, value)?,
            "d_t" => self.d_t = parse(key, value)?,
            "t_m" => self.t_m = parse(key, value)?,
            "d_raw" => self.d_raw = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "text_noise" => self.text_noise = parse(key, value)?,
            "motion_noise" => self.motion_noise = parse(key, value)?,
            "frame_noise" => self.frame_noise = parse(key, value)?,
            "score_noise" => self.score_noise = parse(key, value)?,
            "corpus_videos" => self.corpus_videos = parse(key, value)?,
            "corpus_clips" => self.corpus_clips = parse(key, value)?,
            "corpus_min_frames" => self.corpus_min_frames = parse(key, value)?,
            "corpus_max_frames" => self.corpus_max_frames = parse(key, value)?,
            "corpus_mix" => self.corpus_mix = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "step_epochs" => self.step_epochs = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "use_tmccl" => self.use_tmccl = parse_bool(key, value)?,
            "queue_capacity" => self.queue_capacity = parse(key, value)?,
            "text_cosine" => self.text_cosine = parse_bool(key, value)?,
            "enc_channels" => self.enc_channels = parse(key, value)?,
            "enc_embed_dim" => self.enc_embed_dim = parse(key, value)?,
            "enc_proj_dim" => self.enc_proj_dim = parse(key, value)?,
            "enc_reg_hidden" => self.enc_reg_hidden = parse(key, value)?,
            "enc_dropout" => self.enc_dropout = parse(key, value)?,
            "app_hidden" => self.app_hidden = parse(key, value)?,
            "app_channels" => self.app_channels = parse(key, value)?,
            "app_l" => self.app_l = parse(key, value)?,
            "app_common_dim" => self.app_common_dim = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "eval_epochs" => self.eval_epochs = parse(key, value)?,
            "eval_batch" => self.eval_batch = parse(key, value)?,
            "eval_lr" => self.eval_lr = parse(key, value)?,
            "fusion_step" => self.fusion_step = parse(key, value)?,
            "mu" => self.mu = parse(key, value)?,
            "budget_fraction" => self.budget_fraction = parse(key, value)?,
            "ablation_seeds" => self.ablation_seeds = parse_list(key, value)?,
            "ablation_arms" => {
                self.ablation_arms = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
                for arm in &self.ablation_arms {
                    if arm != "with_tmccl" && arm != "without_tmccl" {
                        return Err(Error::Config(format!(
                            "key `ablation_arms`: unknown arm `{arm}`"
                        )));
                    }
                }
            }
            "mu_sweep" => self.mu_sweep = parse_list(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse a `key = value` text file on top of the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!(
                "cannot read config file {}: {e}",
                path.as_ref().display()
            ))
        })?;
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Echo of every key for the report.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("dataset_path", self.dataset_path.display().to_string());
        put("manifest_dir", self.manifest_dir.display().to_string());
        put("model_path", self.model_path.display().to_string());
        put("train_frac", self.train_frac.to_string());
        put("val_frac", self.val_frac.to_string());
        put("test_frac", self.test_frac.to_string());
        put("num_records", self.num_records.to_string());
        put("frames_per_video", self.frames_per_video.to_string());
        put("d_v", self.d_v.to_string());
        put("d_t", self.d_t.to_string());
        put("t_m", self.t_m.to_string());
        put("d_raw", self.d_raw.to_string());
        put("latent_dim", self.latent_dim.to_string());
        put("text_noise", self.text_noise.to_string());
        put("motion_noise", self.motion_noise.to_string());
        put("frame_noise", self.frame_noise.to_string());
        put("score_noise", self.score_noise.to_string());
        put("corpus_videos", self.corpus_videos.to_string());
        put("corpus_clips", self.corpus_clips.to_string());
        put("corpus_min_frames", self.corpus_min_frames.to_string());
        put("corpus_max_frames", self.corpus_max_frames.to_string());
        put("corpus_mix", self.corpus_mix.to_string());
        put("k", self.k.to_string());
        put("tau", self.tau.to_string());
        put("lambda", self.lambda.to_string());
        put("lr", self.lr.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("step_epochs", self.step_epochs.to_string());
        put("lr_decay", self.lr_decay.to_string());
        put("batch", self.batch.to_string());
        put("epochs", self.epochs.to_string());
        put("use_tmccl", self.use_tmccl.to_string());
        put("queue_capacity", self.queue_capacity.to_string());
        put("text_cosine", self.text_cosine.to_string());
        put("enc_channels", self.enc_channels.to_string());
        put("enc_embed_dim", self.enc_embed_dim.to_string());
        put("enc_proj_dim", self.enc_proj_dim.to_string());
        put("enc_reg_hidden", self.enc_reg_hidden.to_string());
        put("enc_dropout", self.enc_dropout.to_string());
        put("app_hidden", self.app_hidden.to_string());
        put("app_channels", self.app_channels.to_string());
        put("app_l", self.app_l.to_string());
        put("app_common_dim", self.app_common_dim.to_string());
        put("head_hidden", self.head_hidden.to_string());
        put("eval_epochs", self.eval_epochs.to_string());
        put("eval_batch", self.eval_batch.to_string());
        put("eval_lr", self.eval_lr.to_string());
        put("fusion_step", self.fusion_step.to_string());
        put("mu", self.mu.to_string());
        put("budget_fraction", self.budget_fraction.to_string());
        put(
            "ablation_seeds",
            self.ablation_seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("ablation_arms", self.ablation_arms.join(","));
        put(
            "mu_sweep",
            self.mu_sweep
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        m
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_records: self.num_records,
            n: self.frames_per_video,
            d_v: self.d_v,
            d_t: self.d_t,
            t_m: self.t_m,
            d_raw: self.d_raw,
            latent_dim: self.latent_dim,
            text_noise: self.text_noise,
            motion_noise: self.motion_noise,
            frame_noise: self.frame_noise,
            score_noise: self.score_noise,
            seed: self.seed,
        }
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            videos: self.corpus_videos,
            clips_per_video: self.corpus_clips,
            min_clip_frames: self.corpus_min_frames,
            max_clip_frames: self.corpus_max_frames,
            memorability_mix: self.corpus_mix,
            budget_fraction: self.budget_fraction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            k: self.k,
            tau: self.tau,
            lambda: self.lambda,
            lr: self.lr,
            weight_decay: self.weight_decay,
            step_epochs: self.step_epochs,
            lr_decay: self.lr_decay,
            batch: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            queue_capacity: self.queue_capacity,
            text_cosine: self.text_cosine,
        }
    }

    pub fn encoder_config(&self) -> MotionEncoderConfig {
        MotionEncoderConfig {
            d_raw: self.d_raw,
            channels: self.enc_channels,
            embed_dim: self.enc_embed_dim,
            proj_dim: self.enc_proj_dim,
            reg_hidden: self.enc_reg_hidden,
            dropout: self.enc_dropout,
        }
    }

    pub fn appearance_config(&self, d_v: usize) -> AppearanceConfig {
        AppearanceConfig {
            d_v,
            hidden: self.app_hidden,
            channels: self.app_channels,
            l: self.app_l,
            common_dim: self.app_common_dim,
        }
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train_frac, self.val_frac, self.test_frac)
    }
}
