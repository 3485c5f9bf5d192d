//! Parameterized building blocks.
//!
//! A layer owns its configuration and parameter paths; the tensors live in
//! a [`ParamSet`]. `init` registers parameters (idempotent), `forward`
//! pulls them onto a tape.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::{ParamSet, Scalar};
use crate::error::{Error, Result};

/// Affine layer `y = x W + b`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub path: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl LinearLayer {
    pub fn new(path: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            path: path.into(),
            in_dim,
            out_dim,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn init<F: Scalar>(&self, ps: &mut ParamSet<F>) -> Result<()> {
        ps.get_or_create(&format!("{}.weight", self.path), &[self.in_dim, self.out_dim], self.in_dim)?;
        if self.bias {
            ps.get_or_zeros(&format!("{}.bias", self.path), &[self.out_dim])?;
        }
        Ok(())
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, ps: &ParamSet<F>, x: Var) -> Result<Var> {
        let w = tape.param(ps, &format!("{}.weight", self.path))?;
        let b = if self.bias {
            Some(tape.param(ps, &format!("{}.bias", self.path))?)
        } else {
            None
        };
        tape.linear(x, w, b)
    }
}

/// 1-D convolution over the time axis with length-preserving zero padding.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub path: String,
    pub in_dim: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

impl Conv1dLayer {
    pub fn new(
        path: impl Into<String>,
        in_dim: usize,
        out_channels: usize,
        kernel_size: usize,
    ) -> Result<Self> {
        if kernel_size == 0 {
            return Err(Error::InvalidParameter {
                name: "kernel_size",
                reason: "must be >= 1".into(),
            });
        }
        if out_channels == 0 {
            return Err(Error::InvalidParameter {
                name: "out_channels",
                reason: "must be >= 1".into(),
            });
        }
        Ok(Self {
            path: path.into(),
            in_dim,
            out_channels,
            kernel_size,
        })
    }

    pub fn init<F: Scalar>(&self, ps: &mut ParamSet<F>) -> Result<()> {
        let fan_in = self.in_dim * self.kernel_size;
        ps.get_or_create(
            &format!("{}.weight", self.path),
            &[self.out_channels, self.kernel_size, self.in_dim],
            fan_in,
        )?;
        ps.get_or_zeros(&format!("{}.bias", self.path), &[self.out_channels])?;
        Ok(())
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, ps: &ParamSet<F>, x: Var) -> Result<Var> {
        let w = tape.param(ps, &format!("{}.weight", self.path))?;
        let b = tape.param(ps, &format!("{}.bias", self.path))?;
        tape.conv1d(x, w, Some(b))
    }
}

/// Single-direction gated recurrent unit (reset gate applied to the
/// previous state before the candidate projection).
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub path: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(path: impl Into<String>, in_dim: usize, hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidParameter {
                name: "hidden",
                reason: "must be >= 1".into(),
            });
        }
        Ok(Self {
            path: path.into(),
            in_dim,
            hidden,
        })
    }

    pub fn init<F: Scalar>(&self, ps: &mut ParamSet<F>) -> Result<()> {
        for gate in ["z", "r", "h"] {
            ps.get_or_create(
                &format!("{}.w_{gate}", self.path),
                &[self.in_dim, self.hidden],
                self.in_dim,
            )?;
            ps.get_or_create(
                &format!("{}.u_{gate}", self.path),
                &[self.hidden, self.hidden],
                self.hidden,
            )?;
            ps.get_or_zeros(&format!("{}.b_{gate}", self.path), &[self.hidden])?;
        }
        Ok(())
    }

    /// One step: `h' = (1 - z) ⊙ h + z ⊙ tanh(W_h x + U_h (r ⊙ h) + b_h)`.
    pub fn step<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        ps: &ParamSet<F>,
        h: Var,
        x: Var,
    ) -> Result<Var> {
        let gate = |tape: &mut Tape<F>, g: &str, xin: Var, hin: Var| -> Result<Var> {
            let w = tape.param(ps, &format!("{}.w_{g}", self.path))?;
            let u = tape.param(ps, &format!("{}.u_{g}", self.path))?;
            let b = tape.param(ps, &format!("{}.b_{g}", self.path))?;
            let wx = tape.linear(xin, w, Some(b))?;
            let uh = tape.linear(hin, u, None)?;
            tape.add(wx, uh)
        };
        let z_pre = gate(tape, "z", x, h)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = gate(tape, "r", x, h)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, h)?;
        let cand_pre = gate(tape, "h", x, rh)?;
        let cand = tape.tanh(cand_pre)?;
        // (1 - z) ⊙ h + z ⊙ cand
        let neg_z = tape.scale(z, -F::one())?;
        let one_minus_z = tape.add_scalar(neg_z, F::one())?;
        let keep = tape.mul(one_minus_z, h)?;
        let update = tape.mul(z, cand)?;
        tape.add(keep, update)
    }

    /// Run over all rows of `x: [T, D]`, returning the `T` hidden states.
    pub fn run<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        ps: &ParamSet<F>,
        x: Var,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let t_len = tape.shape(x)[0];
        let zero = crate::numerics::Tensor::zeros(vec![self.hidden])?;
        let mut h = tape.constant(&zero)?;
        let mut states = Vec::with_capacity(t_len);
        for step in 0..t_len {
            let idx = if reverse { t_len - 1 - step } else { step };
            let xi = tape.row(x, idx)?;
            h = self.step(tape, ps, h, xi)?;
            states.push(h);
        }
        if reverse {
            states.reverse();
        }
        Ok(states)
    }
}

/// Bidirectional GRU; output row `i` is `[forward state i ; backward state i]`.
#[derive(Debug, Clone)]
pub struct BiGruLayer {
    pub fwd: GruLayer,
    pub bwd: GruLayer,
    pub hidden: usize,
}

impl BiGruLayer {
    pub fn new(path: impl Into<String>, in_dim: usize, hidden: usize) -> Result<Self> {
        let path = path.into();
        Ok(Self {
            fwd: GruLayer::new(format!("{path}.fwd"), in_dim, hidden)?,
            bwd: GruLayer::new(format!("{path}.bwd"), in_dim, hidden)?,
            hidden,
        })
    }

    pub fn init<F: Scalar>(&self, ps: &mut ParamSet<F>) -> Result<()> {
        self.fwd.init(ps)?;
        self.bwd.init(ps)
    }

    /// `x: [T, D] -> [T, 2*hidden]`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, ps: &ParamSet<F>, x: Var) -> Result<Var> {
        let fwd = self.fwd.run(tape, ps, x, false)?;
        let bwd = self.bwd.run(tape, ps, x, true)?;
        let rows: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat(&[f, b]))
            .collect::<Result<_>>()?;
        tape.stack_rows(&rows)
    }
}

/// Bernoulli dropout mask with inverted scaling, applied at train time only.
#[derive(Debug, Clone)]
pub struct DropoutLayer {
    pub rate: f64,
}

impl DropoutLayer {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidParameter {
                name: "dropout_rate",
                reason: format!("must be in [0, 1), got {rate}"),
            });
        }
        Ok(Self { rate })
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if !train || self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let scale = F::from_f64_c(1.0 / keep);
        let mask: Vec<F> = (0..tape.numel(x))
            .map(|_| {
                if rng.gen_range(0.0..1.0) < keep {
                    scale
                } else {
                    F::zero()
                }
            })
            .collect();
        tape.dropout(x, mask)
    }

    /// Deterministic mask stream derived from a seed and a step counter.
    pub fn stream(seed: u64, step: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed ^ step.rotate_left(17))
    }
}

/// Two-layer perceptron `linear -> ReLU -> linear` with optional sigmoid.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub first: LinearLayer,
    pub second: LinearLayer,
    pub sigmoid_output: bool,
}

impl MlpHead {
    pub fn new(path: impl Into<String>, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        let path = path.into();
        Self {
            first: LinearLayer::new(format!("{path}.fc1"), in_dim, hidden),
            second: LinearLayer::new(format!("{path}.fc2"), hidden, out_dim),
            sigmoid_output: true,
        }
    }

    pub fn linear_output(mut self) -> Self {
        self.sigmoid_output = false;
        self
    }

    pub fn init<F: Scalar>(&self, ps: &mut ParamSet<F>) -> Result<()> {
        self.first.init(ps)?;
        self.second.init(ps)
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, ps: &ParamSet<F>, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, ps, x)?;
        let h = tape.relu(h)?;
        let y = self.second.forward(tape, ps, h)?;
        if self.sigmoid_output {
            tape.sigmoid(y)
        } else {
            Ok(y)
        }
    }
}
