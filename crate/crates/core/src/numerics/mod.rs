//! Dense tensor values and a small reverse-mode differentiation engine.
//!
//! Everything here is generic over the scalar type through [`Scalar`];
//! the rest of the crate works with the `f64` aliases exported from the
//! crate root.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{BiGruLayer, Conv1dLayer, DropoutLayer, GruLayer, LinearLayer, MlpHead};
pub use optim::{Adam, AdamConfig, StepLr};
pub use params::ParamSet;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type the numeric kernels are generic over.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64` for constants and config values.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
