//! Per-modality score heads and decision-level fusion.
//!
//! Three two-layer heads score the enhanced appearance feature, the text
//! feature, and the motion feature. The fused prediction is a convex
//! combination with simplex weights picked by grid search on validation
//! rank correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::spearman_rc;
use crate::numerics::{MlpHead, ParamSet, Tape, Var};

/// Per-modality predicted scores, each in [0, 1].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModalityScores {
    pub s_v: f64,
    pub s_t: f64,
    pub s_m: f64,
}

/// Simplex fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub theta_v: f64,
    pub theta_t: f64,
    pub theta_m: f64,
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        let comps = [self.theta_v, self.theta_t, self.theta_m];
        if comps.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::InvalidParameter {
                name: "fusion_weights",
                reason: format!("components must lie in [0, 1], got {self:?}"),
            });
        }
        let sum = self.theta_v + self.theta_t + self.theta_m;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "fusion_weights",
                reason: format!("components must sum to 1, got {sum}"),
            });
        }
        Ok(())
    }
}

/// The three modality heads under one parameter prefix.
#[derive(Debug, Clone)]
pub struct ModalityHeads {
    pub head_v: MlpHead,
    pub head_t: MlpHead,
    pub head_m: MlpHead,
}

impl ModalityHeads {
    pub fn new(
        prefix: &str,
        dim_v: usize,
        dim_t: usize,
        dim_m: usize,
        hidden: usize,
    ) -> Self {
        Self {
            head_v: MlpHead::new(format!("{prefix}.v"), dim_v, hidden, 1),
            head_t: MlpHead::new(format!("{prefix}.t"), dim_t, hidden, 1),
            head_m: MlpHead::new(format!("{prefix}.m"), dim_m, hidden, 1),
        }
    }

    pub fn init(&self, ps: &mut ParamSet<f64>) -> Result<()> {
        self.head_v.init(ps)?;
        self.head_t.init(ps)?;
        self.head_m.init(ps)
    }

    /// Score all three modalities on the tape.
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        ps: &ParamSet<f64>,
        f_ve: Var,
        f_t: Var,
        f_m: Var,
    ) -> Result<(Var, Var, Var)> {
        Ok((
            self.head_v.forward(tape, ps, f_ve)?,
            self.head_t.forward(tape, ps, f_t)?,
            self.head_m.forward(tape, ps, f_m)?,
        ))
    }

    /// Value-level scores for fixed feature vectors.
    pub fn score(
        &self,
        ps: &ParamSet<f64>,
        f_ve: &[f64],
        f_t: &[f64],
        f_m: &[f64],
    ) -> Result<ModalityScores> {
        let mut tape = Tape::new();
        let v = tape.constant_vector(f_ve.to_vec())?;
        let t = tape.constant_vector(f_t.to_vec())?;
        let m = tape.constant_vector(f_m.to_vec())?;
        let (sv, st, sm) = self.forward(&mut tape, ps, v, t, m)?;
        Ok(ModalityScores {
            s_v: tape.item(sv)?,
            s_t: tape.item(st)?,
            s_m: tape.item(sm)?,
        })
    }
}

/// Enumerate the feasible grid triples: `theta_v = 1 - t_v*c` and
/// `theta_m = 1 - t_m*c` for integer steps, `theta_t` the remainder,
/// keeping triples with all components in [0, 1].
pub fn grid_weights(c: f64) -> Result<Vec<FusionWeights>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: format!("step size must lie in (0, 1], got {c}"),
        });
    }
    let steps_f = 1.0 / c;
    let steps = steps_f.round();
    if (steps_f - steps).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: format!("1/c must be integral, got 1/{c} = {steps_f}"),
        });
    }
    let steps = steps as i64;
    let mut out = Vec::new();
    for t_v in 0..=steps {
        for t_m in 0..=steps {
            let theta_v = 1.0 - t_v as f64 * c;
            let theta_m = 1.0 - t_m as f64 * c;
            let theta_t = 1.0 - theta_v - theta_m;
            if !(-1e-9..=1.0 + 1e-9).contains(&theta_t) {
                continue;
            }
            let w = FusionWeights {
                theta_v,
                theta_t: theta_t.clamp(0.0, 1.0),
                theta_m,
            };
            out.push(w);
        }
    }
    Ok(out)
}

/// Weighted sum of the three modality scores.
pub fn fuse(scores: ModalityScores, w: FusionWeights) -> f64 {
    w.theta_v * scores.s_v + w.theta_t * scores.s_t + w.theta_m * scores.s_m
}

/// Grid-search the feasible triples for the one maximizing validation
/// Spearman rank correlation. Triples whose fused scores are constant
/// (undefined correlation) are skipped; ties break toward larger
/// `theta_v`, then larger `theta_t`.
pub fn select_weights(
    val_scores: &[ModalityScores],
    val_gt: &[f64],
    c: f64,
) -> Result<(FusionWeights, f64)> {
    if val_scores.is_empty() || val_scores.len() != val_gt.len() {
        return Err(Error::DegenerateData(format!(
            "validation sizes {} vs {}",
            val_scores.len(),
            val_gt.len()
        )));
    }
    let grid = grid_weights(c)?;
    let mut best: Option<(FusionWeights, f64)> = None;
    for w in grid {
        let fused: Vec<f64> = val_scores.iter().map(|&s| fuse(s, w)).collect();
        let rc = match spearman_rc(&fused, val_gt) {
            Ok(rc) => rc,
            Err(Error::UndefinedMetric(_)) => continue,
            Err(e) => return Err(e),
        };
        let better = match &best {
            None => true,
            Some((bw, brc)) => {
                rc > *brc
                    || (rc == *brc
                        && (w.theta_v > bw.theta_v
                            || (w.theta_v == bw.theta_v && w.theta_t > bw.theta_t)))
            }
        };
        if better {
            best = Some((w, rc));
        }
    }
    best.ok_or_else(|| {
        Error::DegenerateData(
            "no feasible fusion weights produced a defined rank correlation".into(),
        )
    })
}
