//! Multi-level visual appearance encoding and text-visual attention.
//!
//! Frame features are summarized at three levels: a global mean, a
//! bidirectional-GRU temporal encoding, and multi-kernel 1-D convolution
//! local features. The concatenation is split into segments whose
//! relevance is scored against the text feature; the enhanced appearance
//! vector is the attention-weighted sum of the raw segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BiGruLayer, Conv1dLayer, LinearLayer, ParamSet, Tape, Var};

/// Kernel sizes of the local-feature convolutions.
pub const LOCAL_KERNEL_SIZES: [usize; 4] = [2, 3, 4, 5];

/// Dimensions of the appearance encoder.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AppearanceConfig {
    /// Frame feature width (from the dataset).
    pub d_v: usize,
    /// GRU hidden width per direction.
    pub hidden: usize,
    /// Convolution channels per kernel size.
    pub channels: usize,
    /// Number of attention segments.
    pub l: usize,
    /// Width of the shared projection space for attention scoring.
    pub common_dim: usize,
}

impl AppearanceConfig {
    /// Width of the concatenated multi-level feature.
    pub fn d_vm(&self) -> usize {
        self.d_v + 2 * self.hidden + LOCAL_KERNEL_SIZES.len() * self.channels
    }

    /// Width of one attention segment (and of the enhanced feature).
    pub fn segment_dim(&self) -> usize {
        self.d_vm() / self.l
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::Config("attention segment count must be >= 1".into()));
        }
        let d_vm = self.d_vm();
        if !d_vm.is_multiple_of(self.l) {
            return Err(Error::Config(format!(
                "multi-level width {d_vm} (= {} + 2*{} + 4*{}) is not divisible by l = {}",
                self.d_v, self.hidden, self.channels, self.l
            )));
        }
        Ok(())
    }
}

/// Value-level view of the three feature levels and their concatenation.
#[derive(Debug, Clone)]
pub struct MultiLevelFeature {
    pub global_part: Vec<f64>,
    pub temporal_part: Vec<f64>,
    pub local_part: Vec<f64>,
    pub concat: Vec<f64>,
}

/// Tape-level handles for the encoded levels.
#[derive(Debug, Clone, Copy)]
pub struct MultiLevelVars {
    pub global_part: Var,
    pub temporal_part: Var,
    pub local_part: Var,
    pub concat: Var,
}

/// The appearance encoder: GRU + convolution + attention parameters under
/// one path prefix.
#[derive(Debug, Clone)]
pub struct AppearanceEncoder {
    pub cfg: AppearanceConfig,
    prefix: String,
    gru: BiGruLayer,
    convs: Vec<Conv1dLayer>,
    proj_seg_inner: LinearLayer,
    proj_seg_outer: LinearLayer,
    proj_text_inner: LinearLayer,
    proj_text_outer: LinearLayer,
    score: LinearLayer,
}

impl AppearanceEncoder {
    pub fn new(prefix: impl Into<String>, cfg: AppearanceConfig, d_t: usize) -> Result<Self> {
        cfg.validate()?;
        let prefix = prefix.into();
        let gru = BiGruLayer::new(format!("{prefix}.gru"), cfg.d_v, cfg.hidden)?;
        let convs = LOCAL_KERNEL_SIZES
            .iter()
            .map(|&k| {
                Conv1dLayer::new(
                    format!("{prefix}.conv.k{k}"),
                    2 * cfg.hidden,
                    cfg.channels,
                    k,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let seg = cfg.segment_dim();
        Ok(Self {
            prefix: prefix.clone(),
            gru,
            convs,
            proj_seg_inner: LinearLayer::new(format!("{prefix}.attn.u_v"), seg, cfg.common_dim),
            proj_seg_outer: LinearLayer::new(
                format!("{prefix}.attn.w_v"),
                cfg.common_dim,
                cfg.common_dim,
            ),
            proj_text_inner: LinearLayer::new(format!("{prefix}.attn.u_t"), d_t, cfg.common_dim),
            proj_text_outer: LinearLayer::new(
                format!("{prefix}.attn.w_t"),
                cfg.common_dim,
                cfg.common_dim,
            ),
            score: LinearLayer::new(format!("{prefix}.attn.w"), cfg.common_dim, 1),
            cfg,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn init(&self, ps: &mut ParamSet<f64>) -> Result<()> {
        self.gru.init(ps)?;
        for c in &self.convs {
            c.init(ps)?;
        }
        self.proj_seg_inner.init(ps)?;
        self.proj_seg_outer.init(ps)?;
        self.proj_text_inner.init(ps)?;
        self.proj_text_outer.init(ps)?;
        self.score.init(ps)
    }

    /// Global level: mean over frames.
    pub fn encode_global(&self, tape: &mut Tape<f64>, frames: Var) -> Result<Var> {
        tape.mean_axis0(frames)
    }

    /// Temporal level: mean over the bidirectional GRU states.
    /// Returns `(pooled, states)`; the states feed the local level.
    pub fn encode_temporal(
        &self,
        tape: &mut Tape<f64>,
        ps: &ParamSet<f64>,
        frames: Var,
    ) -> Result<(Var, Var)> {
        let states = self.gru.forward(tape, ps, frames)?;
        let pooled = tape.mean_axis0(states)?;
        Ok((pooled, states))
    }

    /// Local level: per kernel size, mean-pooled ReLU of the convolution
    /// over the GRU states, concatenated in ascending kernel order.
    pub fn encode_local(&self, tape: &mut Tape<f64>, ps: &ParamSet<f64>, states: Var) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let c = conv.forward(tape, ps, states)?;
            let c = tape.relu(c)?;
            parts.push(tape.mean_axis0(c)?);
        }
        tape.concat(&parts)
    }

    /// All three levels plus their concatenation `[global; temporal; local]`.
    pub fn encode_multilevel(
        &self,
        tape: &mut Tape<f64>,
        ps: &ParamSet<f64>,
        frames: Var,
    ) -> Result<MultiLevelVars> {
        let global_part = self.encode_global(tape, frames)?;
        let (temporal_part, states) = self.encode_temporal(tape, ps, frames)?;
        let local_part = self.encode_local(tape, ps, states)?;
        let concat = tape.concat(&[global_part, temporal_part, local_part])?;
        debug_assert_eq!(tape.numel(concat), self.cfg.d_vm());
        Ok(MultiLevelVars {
            global_part,
            temporal_part,
            local_part,
            concat,
        })
    }

    /// Text-visual attention over the `l` segments of the multi-level
    /// feature. Returns the enhanced feature (a convex combination of the
    /// raw segments) and the attention weights.
    pub fn attend(
        &self,
        tape: &mut Tape<f64>,
        ps: &ParamSet<f64>,
        f_vm: Var,
        f_t: Var,
    ) -> Result<(Var, Var)> {
        let d_vm = self.cfg.d_vm();
        if tape.numel(f_vm) != d_vm {
            return Err(Error::Config(format!(
                "attend: multi-level feature has {} elements, encoder expects {d_vm}",
                tape.numel(f_vm)
            )));
        }
        let seg = self.cfg.segment_dim();
        let l = self.cfg.l;

        let t_inner = self.proj_text_inner.forward(tape, ps, f_t)?;
        let t_inner = tape.relu(t_inner)?;
        let t_hat = self.proj_text_outer.forward(tape, ps, t_inner)?;

        let mut segments = Vec::with_capacity(l);
        let mut logits = Vec::with_capacity(l);
        for i in 0..l {
            let s = tape.slice(f_vm, i * seg, seg)?;
            segments.push(s);
            let s_inner = self.proj_seg_inner.forward(tape, ps, s)?;
            let s_inner = tape.relu(s_inner)?;
            let s_hat = self.proj_seg_outer.forward(tape, ps, s_inner)?;
            let merged = tape.add(s_hat, t_hat)?;
            let merged = tape.tanh(merged)?;
            logits.push(self.score.forward(tape, ps, merged)?);
        }
        let e = tape.concat(&logits)?;
        let alphas = tape.softmax(e)?;
        // Weighted sum over the raw segments.
        let mut acc: Option<Var> = None;
        for (i, s) in segments.iter().enumerate() {
            let a_i = tape.slice(alphas, i, 1)?;
            let scaled = tape.mul_scalar_var(*s, a_i)?;
            acc = Some(match acc {
                None => scaled,
                Some(prev) => tape.add(prev, scaled)?,
            });
        }
        Ok((acc.expect("l >= 1"), alphas))
    }

    /// Full appearance path: frames + text to the enhanced feature.
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        ps: &ParamSet<f64>,
        frames: Var,
        f_t: Var,
    ) -> Result<(Var, Var)> {
        let ml = self.encode_multilevel(tape, ps, frames)?;
        self.attend(tape, ps, ml.concat, f_t)
    }

    /// Value-level multi-level feature for inspection.
    pub fn multilevel_values(&self, tape: &Tape<f64>, vars: MultiLevelVars) -> MultiLevelFeature {
        MultiLevelFeature {
            global_part: tape.data(vars.global_part).to_vec(),
            temporal_part: tape.data(vars.temporal_part).to_vec(),
            local_part: tape.data(vars.local_part).to_vec(),
            concat: tape.data(vars.concat).to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> AppearanceConfig {
        // d_vm = 18 + 2*18 + 4*9 = 90, divisible by l = 9
        AppearanceConfig {
            d_v: 18,
            hidden: 18,
            channels: 9,
            l: 9,
            common_dim: 8,
        }
    }

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn rand_vector(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
        Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn dimension_arithmetic_small() {
        let cfg = small_cfg();
        assert_eq!(cfg.d_vm(), 90);
        assert_eq!(cfg.segment_dim(), 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn dimension_arithmetic_paper_defaults() {
        let cfg = AppearanceConfig {
            d_v: 512,
            hidden: 1024,
            channels: 512,
            l: 9,
            common_dim: 512,
        };
        assert_eq!(cfg.d_vm(), 4608);
        assert_eq!(cfg.segment_dim(), 512);
        cfg.validate().unwrap();
    }

    #[test]
    fn indivisible_width_is_config_error() {
        let cfg = AppearanceConfig {
            d_v: 17,
            hidden: 18,
            channels: 9,
            l: 9,
            common_dim: 8,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn global_is_frame_mean_and_permutation_invariant() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut tape = Tape::new();
        let frames = tape
            .constant(&Tensor::matrix(2, 18, (0..36).map(f64::from).collect()).unwrap())
            .unwrap();
        let g = enc.encode_global(&mut tape, frames).unwrap();
        let expect: Vec<f64> = (0..18).map(|i| (i as f64 + (i + 18) as f64) / 2.0).collect();
        assert_eq!(tape.data(g), expect.as_slice());

        // Permuting the frames does not move the mean.
        let swapped: Vec<f64> = (18..36).chain(0..18).map(f64::from).collect();
        let frames2 = tape
            .constant(&Tensor::matrix(2, 18, swapped).unwrap())
            .unwrap();
        let g2 = enc.encode_global(&mut tape, frames2).unwrap();
        assert_eq!(tape.data(g), tape.data(g2).to_vec().as_slice());

        // Identical frames pool to the frame itself.
        let row: Vec<f64> = (0..18).map(|i| 0.1 * i as f64).collect();
        let stacked: Vec<f64> = row.iter().chain(&row).chain(&row).copied().collect();
        let frames3 = tape
            .constant(&Tensor::matrix(3, 18, stacked).unwrap())
            .unwrap();
        let g3 = enc.encode_global(&mut tape, frames3).unwrap();
        for (a, b) in tape.data(g3).iter().zip(&row) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn temporal_is_permutation_sensitive() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = rand_matrix(&mut rng, 4, 18);
        let mut tape = Tape::new();
        let f1 = tape.constant(&base).unwrap();
        let (t1, _) = enc.encode_temporal(&mut tape, &ps, f1).unwrap();
        // Reverse frame order.
        let mut rev_rows: Vec<f64> = Vec::new();
        for row in base.data().chunks(18).rev() {
            rev_rows.extend_from_slice(row);
        }
        let f2 = tape.constant(&Tensor::matrix(4, 18, rev_rows).unwrap()).unwrap();
        let (t2, _) = enc.encode_temporal(&mut tape, &ps, f2).unwrap();
        let d1 = tape.data(t1).to_vec();
        let d2 = tape.data(t2).to_vec();
        assert!(d1.iter().zip(&d2).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn temporal_single_frame_equals_state() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames = rand_matrix(&mut rng, 1, 18);
        let mut tape = Tape::new();
        let f = tape.constant(&frames).unwrap();
        let (pooled, states) = enc.encode_temporal(&mut tape, &ps, f).unwrap();
        assert_eq!(tape.data(pooled), &tape.data(states)[..36]);
    }

    #[test]
    fn local_zero_states_zero_bias_gives_zeros() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        let mut tape = Tape::new();
        let states = tape
            .constant(&Tensor::matrix(4, 36, vec![0.0; 4 * 36]).unwrap())
            .unwrap();
        let local = enc.encode_local(&mut tape, &ps, states).unwrap();
        assert_eq!(tape.numel(local), 36);
        assert!(tape.data(local).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_relu_kills_all_negative_channels() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        // Push the k=2 pre-activations far below zero; its block must
        // vanish while the other kernels stay untouched.
        ps.set_data("app.conv.k2.bias", vec![-100.0; 9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let states = rand_matrix(&mut rng, 4, 36);
        let mut tape = Tape::new();
        let s = tape.constant(&states).unwrap();
        let local = enc.encode_local(&mut tape, &ps, s).unwrap();
        let d = tape.data(local);
        assert!(d[..9].iter().all(|&v| v == 0.0), "k=2 block {:?}", &d[..9]);
        assert!(d[9..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn multilevel_layout_and_lengths() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = rand_matrix(&mut rng, 8, 18);
        let mut tape = Tape::new();
        let f = tape.constant(&frames).unwrap();
        let ml = enc.encode_multilevel(&mut tape, &ps, f).unwrap();
        let v = enc.multilevel_values(&tape, ml);
        assert_eq!(v.global_part.len(), 18);
        assert_eq!(v.temporal_part.len(), 36);
        assert_eq!(v.local_part.len(), 36);
        assert_eq!(v.concat.len(), 90);
        assert_eq!(&v.concat[..18], v.global_part.as_slice());
        assert_eq!(&v.concat[18..54], v.temporal_part.as_slice());
        assert_eq!(&v.concat[54..], v.local_part.as_slice());
    }

    #[test]
    fn attention_uniform_when_score_weight_zero() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut ps = ParamSet::new(3);
        enc.init(&mut ps).unwrap();
        // Zero the scoring layer: all logits equal -> uniform attention.
        ps.set_data("app.attn.w.weight", vec![0.0; cfg.common_dim]).unwrap();
        ps.set_data("app.attn.w.bias", vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f_vm = rand_vector(&mut rng, 90);
        let f_t = rand_vector(&mut rng, 8);
        let mut tape = Tape::new();
        let vm = tape.constant(&f_vm).unwrap();
        let t = tape.constant(&f_t).unwrap();
        let (f_ve, alphas) = enc.attend(&mut tape, &ps, vm, t).unwrap();
        for &a in tape.data(alphas) {
            assert!((a - 1.0 / 9.0).abs() < 1e-12);
        }
        // f_ve is the plain mean of the 9 raw segments.
        let seg = cfg.segment_dim();
        for j in 0..seg {
            let mean: f64 = (0..9).map(|i| f_vm.data()[i * seg + j]).sum::<f64>() / 9.0;
            assert!((tape.data(f_ve)[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_normalize_and_bound_fve() {
        let cfg = small_cfg();
        let enc = AppearanceEncoder::new("app", cfg, 8).unwrap();
        let mut ps = ParamSet::new(9);
        enc.init(&mut ps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let f_vm = rand_vector(&mut rng, 90);
            let f_t = rand_vector(&mut rng, 8);
            let mut tape = Tape::new();
            let vm = tape.constant(&f_vm).unwrap();
            let t = tape.constant(&f_t).unwrap();
            let (f_ve, alphas) = enc.attend(&mut tape, &ps, vm, t).unwrap();
            let sum: f64 = tape.data(alphas).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            // Convex combination: every coordinate within segment-wise bounds.
            let seg = cfg.segment_dim();
            for j in 0..seg {
                let col: Vec<f64> = (0..9).map(|i| f_vm.data()[i * seg + j]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = tape.data(f_ve)[j];
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
