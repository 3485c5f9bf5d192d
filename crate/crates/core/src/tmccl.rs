//! Text-motion cross-modal contrastive training of the motion encoder.
//!
//! For each target record, the text vectors of the remaining records pick
//! a latent set of the 2K most text-similar samples; K of them are drawn
//! uniformly as positives. Negatives come from a fixed-capacity FIFO queue
//! of detached projected embeddings maintained across batches. The
//! contrastive term rewards the target embedding for sitting close to its
//! positives relative to the queue, and is combined with the MSE
//! regression loss on the memorability score.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureRecord;
use crate::error::{Error, Result};
use crate::numerics::{
    Adam, AdamConfig, Conv1dLayer, DropoutLayer, LinearLayer, MlpHead, ParamSet, StepLr, Tape,
    Tensor, Var,
};
use crate::util::fnv1a;

/// Training hyperparameters. Defaults are the full-scale settings; the
/// CLI overrides batch/epochs with desk-scale values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub tau: f64,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub step_epochs: usize,
    pub lr_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub queue_capacity: usize,
    /// Compare text vectors by cosine instead of raw dot product.
    pub text_cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            tau: 0.07,
            lambda: 0.5,
            lr: 0.001,
            weight_decay: 0.0001,
            step_epochs: 60,
            lr_decay: 0.1,
            batch: 64,
            epochs: 200,
            seed: 42,
            queue_capacity: 1024,
            text_cosine: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: format!("must be > 0, got {}", self.tau),
            });
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be >= 0, got {}", self.lambda),
            });
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: "must be >= 1".into(),
            });
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::InvalidParameter {
                name: "batch/epochs",
                reason: "must be >= 1".into(),
            });
        }
        if self.queue_capacity == 0 {
            return Err(Error::InvalidParameter {
                name: "queue_capacity",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Motion encoder shape.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MotionEncoderConfig {
    pub d_raw: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub reg_hidden: usize,
    pub dropout: f64,
}

impl Default for MotionEncoderConfig {
    fn default() -> Self {
        Self {
            d_raw: 16,
            channels: 16,
            embed_dim: 32,
            proj_dim: 16,
            reg_hidden: 16,
            dropout: 0.5,
        }
    }
}

/// Conv backbone + projection head + regression head over raw motion
/// descriptor sequences.
#[derive(Debug, Clone)]
pub struct MotionEncoder {
    pub cfg: MotionEncoderConfig,
    conv1: Conv1dLayer,
    conv2: Conv1dLayer,
    projection: MlpHead,
    reg_fc1: LinearLayer,
    reg_fc2: LinearLayer,
    dropout: DropoutLayer,
}

impl MotionEncoder {
    pub fn new(cfg: MotionEncoderConfig) -> Result<Self> {
        Ok(Self {
            conv1: Conv1dLayer::new("motion.conv1", cfg.d_raw, cfg.channels, 3)?,
            conv2: Conv1dLayer::new("motion.conv2", cfg.channels, cfg.embed_dim, 3)?,
            projection: MlpHead::new("motion.proj", cfg.embed_dim, cfg.proj_dim, cfg.proj_dim)
                .linear_output(),
            reg_fc1: LinearLayer::new("motion.reg.fc1", cfg.embed_dim, cfg.reg_hidden),
            reg_fc2: LinearLayer::new("motion.reg.fc2", cfg.reg_hidden, 1),
            dropout: DropoutLayer::new(cfg.dropout)?,
            cfg,
        })
    }

    pub fn init(&self, ps: &mut ParamSet<f64>) -> Result<()> {
        self.conv1.init(ps)?;
        self.conv2.init(ps)?;
        self.projection.init(ps)?;
        self.reg_fc1.init(ps)?;
        self.reg_fc2.init(ps)
    }

    /// Backbone: conv -> ReLU -> conv -> ReLU -> mean pool over time.
    pub fn embed(&self, tape: &mut Tape<f64>, ps: &ParamSet<f64>, motion: Var) -> Result<Var> {
        let c1 = self.conv1.forward(tape, ps, motion)?;
        let c1 = tape.relu(c1)?;
        let c2 = self.conv2.forward(tape, ps, c1)?;
        let c2 = tape.relu(c2)?;
        tape.mean_axis0(c2)
    }

    /// Projection head output, L2-normalized for similarity computation.
    pub fn project(&self, tape: &mut Tape<f64>, ps: &ParamSet<f64>, f_m: Var) -> Result<Var> {
        let z = self.projection.forward(tape, ps, f_m)?;
        tape.l2_normalize(z)
    }

    /// Regression head: linear -> dropout -> linear -> sigmoid.
    pub fn regress(
        &self,
        tape: &mut Tape<f64>,
        ps: &ParamSet<f64>,
        f_m: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let h = self.reg_fc1.forward(tape, ps, f_m)?;
        let h = self.dropout.forward(tape, h, train, rng)?;
        let y = self.reg_fc2.forward(tape, ps, h)?;
        tape.sigmoid(y)
    }

    fn motion_tensor(motion_seq: &[Vec<f64>]) -> Result<Tensor<f64>> {
        Tensor::from_rows(motion_seq)
    }

    /// Detached projected embedding of one motion sequence.
    pub fn project_value(&self, ps: &ParamSet<f64>, motion_seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let m = tape.constant(&Self::motion_tensor(motion_seq)?)?;
        let f_m = self.embed(&mut tape, ps, m)?;
        let z = self.project(&mut tape, ps, f_m)?;
        Ok(tape.data(z).to_vec())
    }

    /// Detached backbone feature of one motion sequence.
    pub fn embed_value(&self, ps: &ParamSet<f64>, motion_seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let m = tape.constant(&Self::motion_tensor(motion_seq)?)?;
        let f_m = self.embed(&mut tape, ps, m)?;
        Ok(tape.data(f_m).to_vec())
    }

    /// Deterministic inference-mode score (dropout disabled).
    pub fn score_value(&self, ps: &ParamSet<f64>, motion_seq: &[Vec<f64>]) -> Result<f64> {
        if motion_seq.first().map_or(0, Vec::len) != self.cfg.d_raw {
            return Err(Error::Schema(format!(
                "motion descriptor width {} does not match the trained encoder ({})",
                motion_seq.first().map_or(0, Vec::len),
                self.cfg.d_raw
            )));
        }
        let mut tape = Tape::new();
        let m = tape.constant(&Self::motion_tensor(motion_seq)?)?;
        let f_m = self.embed(&mut tape, ps, m)?;
        let mut rng = DropoutLayer::stream(0, 0);
        let y = self.regress(&mut tape, ps, f_m, false, &mut rng)?;
        tape.item(y)
    }
}

/// One detached embedding in the negative queue.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub id: String,
    pub embedding: Vec<f64>,
}

/// Fixed-capacity FIFO of detached projected embeddings.
#[derive(Debug, Clone)]
pub struct NegativeQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
    enqueued: u64,
    evicted: u64,
}

impl NegativeQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::new(),
            enqueued: 0,
            evicted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    pub fn push(&mut self, entry: QueueEntry) {
        self.entries.push_back(entry);
        self.enqueued += 1;
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
            self.evicted += 1;
        }
    }
}

/// Enqueue a batch of detached embeddings, oldest evicted past capacity.
pub fn queue_update(queue: &mut NegativeQueue, batch: Vec<QueueEntry>) {
    for e in batch {
        queue.push(e);
    }
}

/// Positive/negative sample sets for one target.
#[derive(Debug, Clone)]
pub struct SampleSets {
    pub target_id: String,
    /// Dataset indices of the K positives.
    pub positives: Vec<usize>,
    pub positive_ids: Vec<String>,
    /// Snapshot of the queue minus the positives and the target.
    pub negatives: Vec<QueueEntry>,
}

fn text_similarity(a: &FeatureRecord, b: &FeatureRecord, cosine: bool) -> f64 {
    let dot: f64 = a.text.iter().zip(&b.text).map(|(x, y)| x * y).sum();
    if !cosine {
        return dot;
    }
    let na: f64 = a.text.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.text.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The `2K` pool indices with highest text similarity to the target,
/// ties broken by ascending record id; the whole pool when it is smaller.
pub fn text_topk(
    target_idx: usize,
    records: &[FeatureRecord],
    k: usize,
    cosine: bool,
) -> Result<Vec<usize>> {
    if records.len() < 2 {
        return Err(Error::Domain {
            op: "text_topk",
            reason: "empty candidate pool".into(),
        });
    }
    let target = &records[target_idx];
    let mut scored: Vec<(usize, f64)> = records
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(i, r)| (i, text_similarity(target, r, cosine)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite text features")
            .then_with(|| records[a.0].video_id.cmp(&records[b.0].video_id))
    });
    scored.truncate(2 * k);
    Ok(scored.into_iter().map(|(i, _)| i).collect())
}

/// Draw K positives uniformly without replacement from the latent set and
/// snapshot the queue minus positives and target as negatives.
pub fn build_sample_sets(
    target_idx: usize,
    records: &[FeatureRecord],
    latent_set: &[usize],
    queue: &NegativeQueue,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> SampleSets {
    let take = k.min(latent_set.len());
    let chosen = rand::seq::index::sample(rng, latent_set.len(), take);
    let mut positives: Vec<usize> = chosen.iter().map(|i| latent_set[i]).collect();
    positives.sort_unstable();
    let positive_ids: Vec<String> = positives
        .iter()
        .map(|&i| records[i].video_id.clone())
        .collect();
    let target_id = records[target_idx].video_id.clone();
    let exclude: BTreeSet<&str> = positive_ids
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(target_id.as_str()))
        .collect();
    let negatives: Vec<QueueEntry> = queue
        .iter()
        .filter(|e| !exclude.contains(e.id.as_str()))
        .cloned()
        .collect();
    SampleSets {
        target_id,
        positives,
        positive_ids,
        negatives,
    }
}

/// `exp(dot(a, b) / tau)` for L2-normalized vectors.
pub fn similarity(a: &[f64], b: &[f64], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must be > 0, got {tau}"),
        });
    }
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / tau).exp())
}

/// Contrastive loss `-log(Σ_pos sim / (Σ_pos sim + Σ_neg sim))` on the tape.
///
/// Zero when the negative set is empty, strictly positive otherwise, and
/// differentiable w.r.t. every embedding node passed in.
pub fn tmccl_loss(
    tape: &mut Tape<f64>,
    target: Var,
    positives: &[Var],
    negatives: &[Var],
    tau: f64,
) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must be > 0, got {tau}"),
        });
    }
    if positives.is_empty() {
        return Err(Error::Domain {
            op: "tmccl_loss",
            reason: "at least one positive sample is required".into(),
        });
    }
    if negatives.is_empty() {
        return tape.constant_scalar(0.0);
    }
    let inv_tau = 1.0 / tau;
    let sims = |vars: &[Var], tape: &mut Tape<f64>| -> Result<Var> {
        let mut terms = Vec::with_capacity(vars.len());
        for &v in vars {
            let d = tape.dot(target, v)?;
            let d = tape.scale(d, inv_tau)?;
            terms.push(tape.exp(d)?);
        }
        let all = tape.concat(&terms)?;
        tape.sum_all(all)
    };
    let pos_sum = sims(positives, tape)?;
    let neg_sum = sims(negatives, tape)?;
    let denom = tape.add(pos_sum, neg_sum)?;
    let ratio = tape.div(pos_sum, denom)?;
    let log = tape.ln(ratio)?;
    tape.scale(log, -1.0)
}

/// Per-sample combined objective `(pred - gt)^2 + lambda * contrastive`.
pub fn overall_loss(pred: f64, gt: f64, contrastive: f64, lambda: f64) -> f64 {
    let d = pred - gt;
    d * d + lambda * contrastive
}

/// A trained motion model: encoder shape, parameters, train settings.
#[derive(Debug, Clone)]
pub struct MotionModel {
    pub encoder: MotionEncoder,
    pub params: ParamSet<f64>,
    pub train_config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct SerializedParam {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SerializedModel {
    train_config: TrainConfig,
    encoder_config: MotionEncoderConfig,
    params: std::collections::BTreeMap<String, SerializedParam>,
}

impl MotionModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let params = self
            .params
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    SerializedParam {
                        shape: t.shape().to_vec(),
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let doc = SerializedModel {
            train_config: self.train_config.clone(),
            encoder_config: self.encoder.cfg,
            params,
        };
        std::fs::write(path.as_ref(), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: SerializedModel = serde_json::from_str(&std::fs::read_to_string(path.as_ref())?)?;
        let encoder = MotionEncoder::new(doc.encoder_config)?;
        let mut params = ParamSet::new(doc.train_config.seed);
        for (path, p) in doc.params {
            params.insert(&path, Tensor::from_vec(p.shape, p.values)?);
        }
        Ok(Self {
            encoder,
            params,
            train_config: doc.train_config,
        })
    }
}

/// Loss trace and final model from [`train_motion_encoder`].
pub struct TrainOutcome {
    pub model: MotionModel,
    /// Mean combined loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Mean contrastive term per epoch (zero for the MSE-only arm).
    pub contrastive_trace: Vec<f64>,
}

/// Train the motion encoder on a dataset. With `use_tmccl` false, lambda
/// is forced to zero (pure MSE baseline). Deterministic given the seed.
pub fn train_motion_encoder(
    dataset: &[FeatureRecord],
    cfg: &TrainConfig,
    enc_cfg: MotionEncoderConfig,
    use_tmccl: bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain {
            op: "train_motion_encoder",
            reason: "empty dataset".into(),
        });
    }
    let enc_cfg = MotionEncoderConfig {
        d_raw: dataset[0].motion_seq[0].len(),
        ..enc_cfg
    };
    let encoder = MotionEncoder::new(enc_cfg)?;
    let mut params = ParamSet::new(cfg.seed);
    encoder.init(&mut params)?;

    let lambda = if use_tmccl { cfg.lambda } else { 0.0 };
    let contrastive_on = use_tmccl && lambda > 0.0 && dataset.len() >= 2;

    // Latent sets depend only on the fixed text features.
    let latent_sets: Vec<Vec<usize>> = if contrastive_on {
        (0..dataset.len())
            .map(|i| text_topk(i, dataset, cfg.k, cfg.text_cosine))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    // Independent positive-draw stream per record.
    let mut draw_rngs: Vec<ChaCha8Rng> = (0..dataset.len())
        .map(|i| ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64)))
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a("epoch-order"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a("dropout"));

    let mut queue = NegativeQueue::new(cfg.queue_capacity);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let schedule = StepLr {
        base_lr: cfg.lr,
        step_epochs: cfg.step_epochs,
        decay: cfg.lr_decay,
    };

    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut contrastive_trace = Vec::with_capacity(cfg.epochs);
    let mut warned_empty_queue = false;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut order_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_con = 0.0;
        let mut batches = 0.0;

        for (step, batch_idx) in order.chunks(cfg.batch).enumerate() {
            let mut tape = Tape::new();
            let mut sample_losses = Vec::with_capacity(batch_idx.len());
            let mut batch_embeddings = Vec::with_capacity(batch_idx.len());
            let mut batch_con = 0.0;

            for &i in batch_idx {
                let rec = &dataset[i];
                let motion = tape.constant(&Tensor::from_rows(&rec.motion_seq)?)?;
                let f_m = encoder.embed(&mut tape, &params, motion)?;
                let pred = encoder.regress(&mut tape, &params, f_m, true, &mut dropout_rng)?;
                let gt = tape.constant_scalar(rec.st_score)?;
                let mse = tape.squared_error(pred, gt)?;

                let loss_i = if contrastive_on {
                    let z_t = encoder.project(&mut tape, &params, f_m)?;
                    let sets = build_sample_sets(
                        i,
                        dataset,
                        &latent_sets[i],
                        &queue,
                        cfg.k,
                        &mut draw_rngs[i],
                    );
                    assert!(
                        !sets.positive_ids.contains(&sets.target_id),
                        "positive set must not contain the target"
                    );
                    assert!(
                        sets.negatives
                            .iter()
                            .all(|n| !sets.positive_ids.contains(&n.id)),
                        "negatives must exclude positives"
                    );
                    if sets.negatives.is_empty() && !warned_empty_queue {
                        log::warn!(
                            "negative queue empty at epoch {epoch} step {step}; contrastive term is 0 until the queue warms up"
                        );
                        warned_empty_queue = true;
                    }
                    let mut pos_vars = Vec::with_capacity(sets.positives.len());
                    for &p in &sets.positives {
                        let z = encoder.project_value(&params, &dataset[p].motion_seq)?;
                        pos_vars.push(tape.constant_vector(z)?);
                    }
                    let mut neg_vars = Vec::with_capacity(sets.negatives.len());
                    for n in &sets.negatives {
                        neg_vars.push(tape.constant_vector(n.embedding.clone())?);
                    }
                    let con = tmccl_loss(&mut tape, z_t, &pos_vars, &neg_vars, cfg.tau)?;
                    batch_con += tape.item(con)?;
                    batch_embeddings.push(QueueEntry {
                        id: rec.video_id.clone(),
                        embedding: tape.data(z_t).to_vec(),
                    });
                    let scaled = tape.scale(con, lambda)?;
                    tape.add(mse, scaled)?
                } else {
                    mse
                };
                sample_losses.push(loss_i);
            }

            let stacked = tape.concat(&sample_losses)?;
            let batch_loss = tape.mean_all(stacked)?;
            let loss_value = tape.item(batch_loss)?;
            if !loss_value.is_finite() {
                return Err(Error::TrainingAborted {
                    epoch,
                    step,
                    reason: format!("non-finite loss {loss_value}"),
                });
            }
            tape.backward_params(batch_loss, &mut params)
                .map_err(|e| Error::TrainingAborted {
                    epoch,
                    step,
                    reason: e.to_string(),
                })?;
            adam.step(&mut params, lr)?;
            if contrastive_on {
                queue_update(&mut queue, batch_embeddings);
                debug_assert!(queue.len() <= queue.capacity());
            }

            epoch_loss += loss_value;
            epoch_con += batch_con / batch_idx.len() as f64;
            batches += 1.0;
        }
        loss_trace.push(epoch_loss / batches);
        contrastive_trace.push(epoch_con / batches);
    }

    Ok(TrainOutcome {
        model: MotionModel {
            encoder,
            params,
            train_config: TrainConfig {
                lambda,
                ..cfg.clone()
            },
        },
        loss_trace,
        contrastive_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticConfig};

    fn rec(id: &str, text: Vec<f64>) -> FeatureRecord {
        FeatureRecord {
            video_id: id.into(),
            frames: vec![vec![0.0; 2]],
            text,
            motion_seq: vec![vec![0.0; 2]; 2],
            st_score: 0.5,
            lt_score: None,
            caption: None,
        }
    }

    #[test]
    fn text_topk_orders_by_dot_product() {
        // pool dots against target [1, 0]: r1=0.9, r2=0.8, r3=0.1, r4=0.05
        let records = vec![
            rec("t", vec![1.0, 0.0]),
            rec("r1", vec![0.9, 0.0]),
            rec("r2", vec![0.8, 0.0]),
            rec("r3", vec![0.1, 0.0]),
            rec("r4", vec![0.05, 0.0]),
        ];
        let top = text_topk(0, &records, 1, false).unwrap();
        assert_eq!(top, vec![1, 2]);
    }

    #[test]
    fn text_topk_tie_break_by_id() {
        let records = vec![
            rec("t", vec![1.0]),
            rec("b", vec![0.5]),
            rec("a", vec![0.5]),
            rec("c", vec![0.5]),
        ];
        let top = text_topk(0, &records, 1, false).unwrap();
        // All tied; ascending id order picks "a" then "b".
        assert_eq!(top, vec![2, 1]);
    }

    #[test]
    fn text_topk_clamps_small_pools() {
        let records = vec![
            rec("t", vec![1.0]),
            rec("a", vec![0.5]),
            rec("b", vec![0.4]),
            rec("c", vec![0.3]),
        ];
        let top = text_topk(0, &records, 8, false).unwrap();
        assert_eq!(top.len(), 3);
    }

    #[test]
    fn text_topk_empty_pool_is_domain_error() {
        let records = vec![rec("t", vec![1.0])];
        assert!(matches!(
            text_topk(0, &records, 1, false),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn positive_draw_is_uniform() {
        let records = vec![rec("t", vec![1.0]), rec("a", vec![0.9]), rec("b", vec![0.8])];
        let latent = vec![1usize, 2usize];
        let queue = NegativeQueue::new(8);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut count_a = 0;
        for _ in 0..10_000 {
            let sets = build_sample_sets(0, &records, &latent, &queue, 1, &mut rng);
            assert_eq!(sets.positives.len(), 1);
            if sets.positives[0] == 1 {
                count_a += 1;
            }
        }
        assert!((4800..=5200).contains(&count_a), "count {count_a}");
    }

    #[test]
    fn negatives_exclude_positives_and_target() {
        let records = vec![rec("t", vec![1.0]), rec("a", vec![0.9]), rec("b", vec![0.8])];
        let mut queue = NegativeQueue::new(8);
        queue.push(QueueEntry {
            id: "a".into(),
            embedding: vec![1.0, 0.0],
        });
        queue.push(QueueEntry {
            id: "t".into(),
            embedding: vec![0.0, 1.0],
        });
        queue.push(QueueEntry {
            id: "x".into(),
            embedding: vec![0.5, 0.5],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sets = build_sample_sets(0, &records, &[1, 2], &queue, 2, &mut rng);
        assert_eq!(sets.positive_ids, vec!["a", "b"]);
        assert_eq!(sets.negatives.len(), 1);
        assert_eq!(sets.negatives[0].id, "x");
    }

    #[test]
    fn empty_queue_gives_empty_negatives() {
        let records = vec![rec("t", vec![1.0]), rec("a", vec![0.9])];
        let queue = NegativeQueue::new(8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sets = build_sample_sets(0, &records, &[1], &queue, 1, &mut rng);
        assert!(sets.negatives.is_empty());
    }

    #[test]
    fn queue_is_strict_fifo_with_capacity() {
        let mut q = NegativeQueue::new(1024);
        for i in 0..1030 {
            q.push(QueueEntry {
                id: format!("e{i}"),
                embedding: vec![i as f64],
            });
        }
        assert_eq!(q.len(), 1024);
        assert_eq!(q.iter().next().unwrap().id, "e6");
        assert_eq!(q.iter().last().unwrap().id, "e1029");
        assert_eq!(q.enqueued() - q.evicted(), q.len() as u64);

        let before = q.len();
        queue_update(&mut q, vec![]);
        assert_eq!(q.len(), before);
    }

    #[test]
    fn similarity_values() {
        let e = 1e-12;
        assert!((similarity(&[1.0, 0.0], &[0.0, 1.0], 0.07).unwrap() - 1.0).abs() < e);
        let same = similarity(&[1.0, 0.0], &[1.0, 0.0], 0.07).unwrap();
        assert!((same - (1.0f64 / 0.07).exp()).abs() < 1e-6 * same);
        let anti = similarity(&[1.0, 0.0], &[-1.0, 0.0], 1.0).unwrap();
        assert!((anti - (-1.0f64).exp()).abs() < e);
        assert!(similarity(&[1.0], &[1.0], 0.0).is_err());
        assert!(similarity(&[1.0], &[1.0], -1.0).is_err());
    }

    fn loss_value(target: &[f64], pos: &[Vec<f64>], neg: &[Vec<f64>], tau: f64) -> f64 {
        let mut tape = Tape::new();
        let t = tape.constant_vector(target.to_vec()).unwrap();
        let pv: Vec<Var> = pos
            .iter()
            .map(|p| tape.constant_vector(p.clone()).unwrap())
            .collect();
        let nv: Vec<Var> = neg
            .iter()
            .map(|n| tape.constant_vector(n.clone()).unwrap())
            .collect();
        let l = tmccl_loss(&mut tape, t, &pv, &nv, tau).unwrap();
        tape.item(l).unwrap()
    }

    #[test]
    fn loss_zero_without_negatives() {
        assert_eq!(loss_value(&[1.0, 0.0], &[vec![0.0, 1.0]], &[], 0.07), 0.0);
    }

    #[test]
    fn loss_ln2_with_balanced_pair() {
        // one positive and one negative at the same similarity
        let l = loss_value(
            &[1.0, 0.0],
            &[vec![0.0, 1.0]],
            &[vec![0.0, 1.0].clone()],
            0.07,
        );
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12, "{l}");
    }

    #[test]
    fn loss_errors() {
        let mut tape = Tape::new();
        let t = tape.constant_vector(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            tmccl_loss(&mut tape, t, &[], &[], 0.07),
            Err(Error::Domain { .. })
        ));
        let p = tape.constant_vector(vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            tmccl_loss(&mut tape, t, &[p], &[], -0.5),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn loss_decreases_when_positive_alignment_grows() {
        let neg = vec![vec![0.0, 1.0]];
        let far = loss_value(&[1.0, 0.0], &[vec![0.0, 1.0]], &neg, 0.5);
        let near = loss_value(&[1.0, 0.0], &[vec![1.0, 0.0]], &neg, 0.5);
        assert!(near < far, "near {near} far {far}");
    }

    #[test]
    fn loss_gradient_points_toward_positive() {
        // Moving the target toward the positive must reduce the loss:
        // the analytic gradient w.r.t. the pre-normalization target should
        // have a negative component along (target - positive).
        let mut tape = Tape::new();
        let mut raw = Tensor::vector(vec![0.8, 0.6]).unwrap();
        raw.set_grad_tracked(true);
        let t_raw = tape.feed(&raw).unwrap();
        let t = tape.l2_normalize(t_raw).unwrap();
        let p = tape.constant_vector(vec![0.0, 1.0]).unwrap();
        let n = tape.constant_vector(vec![1.0, 0.0]).unwrap();
        let loss = tmccl_loss(&mut tape, t, &[p], &[n], 0.5).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad_of(t_raw).unwrap();
        // Positive is up, negative is right: gradient must push left/up.
        assert!(g[0] > 0.0, "gx {} should be positive (descend moves left)", g[0]);
        assert!(g[1] < 0.0, "gy {} should be negative (descend moves up)", g[1]);
    }

    #[test]
    fn overall_loss_examples() {
        assert_eq!(overall_loss(0.5, 0.5, 0.0, 0.5), 0.0);
        let l = overall_loss(0.7, 0.5, 0.0, 0.0);
        assert!((l - 0.04).abs() < 1e-12);
        let l = overall_loss(0.7, 0.5, std::f64::consts::LN_2, 0.5);
        assert!((l - (0.04 + 0.5 * std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn regression_output_strictly_in_unit_interval() {
        let cfg = MotionEncoderConfig {
            d_raw: 4,
            ..Default::default()
        };
        let enc = MotionEncoder::new(cfg).unwrap();
        let mut ps = ParamSet::new(17);
        enc.init(&mut ps).unwrap();
        for s in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            use rand::Rng;
            let seq: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let y = enc.score_value(&ps, &seq).unwrap();
            assert!(y > 0.0 && y < 1.0, "score {y}");
        }
    }

    #[test]
    fn inference_is_deterministic() {
        let cfg = MotionEncoderConfig {
            d_raw: 3,
            ..Default::default()
        };
        let enc = MotionEncoder::new(cfg).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        let seq = vec![vec![0.1, -0.5, 0.3]; 4];
        let a = enc.score_value(&ps, &seq).unwrap();
        let b = enc.score_value(&ps, &seq).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn wrong_motion_width_is_schema_error() {
        let cfg = MotionEncoderConfig {
            d_raw: 3,
            ..Default::default()
        };
        let enc = MotionEncoder::new(cfg).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        let seq = vec![vec![0.1, -0.5]; 4];
        assert!(matches!(enc.score_value(&ps, &seq), Err(Error::Schema(_))));
    }

    fn tiny_dataset(n: usize, seed: u64) -> Vec<FeatureRecord> {
        generate_synthetic(&SyntheticConfig {
            num_records: n,
            n: 2,
            d_v: 4,
            d_t: 6,
            t_m: 4,
            d_raw: 6,
            latent_dim: 3,
            text_noise: 0.05,
            motion_noise: 0.05,
            frame_noise: 0.1,
            score_noise: 0.02,
            seed,
        })
        .unwrap()
    }

    fn tiny_train_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            k: 2,
            batch: 8,
            epochs: 6,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = tiny_dataset(24, 9);
        let cfg = tiny_train_cfg(31);
        let enc_cfg = MotionEncoderConfig {
            channels: 6,
            embed_dim: 8,
            proj_dim: 6,
            reg_hidden: 6,
            ..Default::default()
        };
        let a = train_motion_encoder(&data, &cfg, enc_cfg, true).unwrap();
        let b = train_motion_encoder(&data, &cfg, enc_cfg, true).unwrap();
        for ((pa, ta), (pb, tb)) in a.model.params.iter().zip(b.model.params.iter()) {
            assert_eq!(pa, pb);
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {pa}");
            }
        }
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn mse_arm_loss_mostly_decreases() {
        let data = tiny_dataset(64, 3);
        let cfg = TrainConfig {
            batch: 16,
            epochs: 15,
            seed: 5,
            ..Default::default()
        };
        let enc_cfg = MotionEncoderConfig {
            channels: 6,
            embed_dim: 8,
            proj_dim: 6,
            reg_hidden: 6,
            dropout: 0.0,
            ..Default::default()
        };
        let out = train_motion_encoder(&data, &cfg, enc_cfg, false).unwrap();
        assert!(out.contrastive_trace.iter().all(|&c| c == 0.0));
        let t = &out.loss_trace;
        let upticks = t.windows(2).filter(|w| w[1] > w[0] * 1.0001).count();
        assert!(
            upticks as f64 <= 0.05 * (t.len() - 1) as f64 + 1.0,
            "too many upticks: {upticks} in {t:?}"
        );
        assert!(t.last().unwrap() < t.first().unwrap());
    }

    #[test]
    fn tmccl_arm_pulls_positives_closer() {
        let data = tiny_dataset(32, 11);
        let cfg = TrainConfig {
            k: 2,
            batch: 8,
            epochs: 12,
            seed: 13,
            ..Default::default()
        };
        let enc_cfg = MotionEncoderConfig {
            channels: 6,
            embed_dim: 8,
            proj_dim: 6,
            reg_hidden: 6,
            dropout: 0.0,
            ..Default::default()
        };
        // Cosine alignment between targets and their latent-set positives,
        // averaged over the dataset, measured with fresh sample draws.
        let mean_alignment = |model: &MotionModel| -> f64 {
            let mut total = 0.0;
            let mut count = 0.0;
            for i in 0..data.len() {
                let latent = text_topk(i, &data, cfg.k, false).unwrap();
                let zt = model
                    .encoder
                    .project_value(&model.params, &data[i].motion_seq)
                    .unwrap();
                for &p in &latent {
                    let zp = model
                        .encoder
                        .project_value(&model.params, &data[p].motion_seq)
                        .unwrap();
                    total += zt.iter().zip(&zp).map(|(a, b)| a * b).sum::<f64>();
                    count += 1.0;
                }
            }
            total / count
        };

        // Epoch-0 model: same init, zero epochs of training.
        let init_cfg = TrainConfig { epochs: 1, ..cfg.clone() };
        let mut init_params = ParamSet::new(init_cfg.seed);
        let init_encoder = MotionEncoder::new(MotionEncoderConfig {
            d_raw: data[0].motion_seq[0].len(),
            ..enc_cfg
        })
        .unwrap();
        init_encoder.init(&mut init_params).unwrap();
        let before = mean_alignment(&MotionModel {
            encoder: init_encoder,
            params: init_params,
            train_config: init_cfg,
        });

        let out = train_motion_encoder(&data, &cfg, enc_cfg, true).unwrap();
        let after = mean_alignment(&out.model);
        assert!(
            after > before,
            "projection alignment should grow: before {before}, after {after}"
        );
    }

    /// Composite loss through the whole encoder (backbone, both heads,
    /// contrastive term) against central finite differences.
    #[test]
    fn composite_encoder_loss_grads_match_fd() {
        use crate::numerics::grad_check;
        let enc_cfg = MotionEncoderConfig {
            d_raw: 4,
            channels: 4,
            embed_dim: 5,
            proj_dim: 4,
            reg_hidden: 4,
            dropout: 0.0,
        };
        let encoder = MotionEncoder::new(enc_cfg).unwrap();
        let mut ps = ParamSet::new(55);
        encoder.init(&mut ps).unwrap();

        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let motion: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        };
        let pos = [unit(&mut rng), unit(&mut rng)];
        let neg = [unit(&mut rng), unit(&mut rng), unit(&mut rng)];

        let report = grad_check("composite_encoder", &ps, 1e-5, |tape, ps| {
            let m = tape.constant(&Tensor::from_rows(&motion)?)?;
            let f_m = encoder.embed(tape, ps, m)?;
            let z = encoder.project(tape, ps, f_m)?;
            let mut drng = DropoutLayer::stream(0, 0);
            let pred = encoder.regress(tape, ps, f_m, false, &mut drng)?;
            let gt = tape.constant_scalar(0.6)?;
            let mse = tape.squared_error(pred, gt)?;
            let pv: Vec<Var> = pos
                .iter()
                .map(|p| tape.constant_vector(p.clone()))
                .collect::<crate::error::Result<_>>()?;
            let nv: Vec<Var> = neg
                .iter()
                .map(|n| tape.constant_vector(n.clone()))
                .collect::<crate::error::Result<_>>()?;
            let con = tmccl_loss(tape, z, &pv, &nv, 0.07)?;
            let scaled = tape.scale(con, 0.5)?;
            tape.add(mse, scaled)
        })
        .unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "composite rel error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn model_save_load_round_trip() {
        let data = tiny_dataset(16, 2);
        let cfg = tiny_train_cfg(7);
        let enc_cfg = MotionEncoderConfig {
            channels: 4,
            embed_dim: 6,
            proj_dim: 4,
            reg_hidden: 4,
            ..Default::default()
        };
        let out = train_motion_encoder(&data, &cfg, enc_cfg, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        out.model.save(&path).unwrap();
        let loaded = MotionModel::load(&path).unwrap();
        let a = out.model.encoder.score_value(&out.model.params, &data[0].motion_seq).unwrap();
        let b = loaded.encoder.score_value(&loaded.params, &data[0].motion_seq).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
