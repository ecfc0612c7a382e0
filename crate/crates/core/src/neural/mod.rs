//! The trainable aggregator.
//!
//! Each forecast in a window becomes one input step made of the current-day
//! flag, the prediction, a projected justification vector, and the projected
//! question vector. The steps run oldest first through an LSTM and the final
//! hidden state goes through a single sigmoid unit.
//!
//! Parameters are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for gradient checking.

mod adam;
mod model_file;
mod network;
mod params;
mod train;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use model_file::{load_model, save_model, ModelHeader, ModelManifest, TensorInfo};
pub use network::{backward, bce_loss, forward, predict, Trace, LOSS_EPSILON};
pub use params::{ModelParams, ModelShape, TENSOR_NAMES};
pub use train::{
    batch_gradient, build_instances, evaluate_instances, train, EarlyStopping, EpochLog, FeatureStore, Instance, NeuralAggregator,
    Step, StopDecision, TrainConfig, TrainLog,
};

use crate::error::{Error, Result};

pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite conversion")
    }

    fn of32(x: f32) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Which text representations accompany the prediction in each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub use_question: bool,
    pub use_justification: bool,
}

impl Ablation {
    pub const PREDICTION: Ablation = Ablation {
        use_question: false,
        use_justification: false,
    };
    pub const WITH_QUESTION: Ablation = Ablation {
        use_question: true,
        use_justification: false,
    };
    pub const WITH_JUSTIFICATION: Ablation = Ablation {
        use_question: false,
        use_justification: true,
    };
    pub const FULL: Ablation = Ablation {
        use_question: true,
        use_justification: true,
    };

    pub const ALL: [Ablation; 4] = [
        Self::PREDICTION,
        Self::WITH_QUESTION,
        Self::WITH_JUSTIFICATION,
        Self::FULL,
    ];
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match (self.use_question, self.use_justification) {
            (false, false) => "p",
            (true, false) => "pq",
            (false, true) => "pj",
            (true, true) => "pqj",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Self::PREDICTION),
            "pq" => Ok(Self::WITH_QUESTION),
            "pj" => Ok(Self::WITH_JUSTIFICATION),
            "pqj" => Ok(Self::FULL),
            other => Err(Error::InvalidConfig(format!(
                "unknown ablation `{other}` (expected p, pq, pj or pqj)"
            ))),
        }
    }
}
