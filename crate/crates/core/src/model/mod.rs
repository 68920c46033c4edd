//! The 2D-to-3D EDM regression network, its losses and training.
//!
//! The network maps the packed, normalized EDM of the `n` image keypoints to
//! the packed EDM of the full `2n + 2` point set. Training combines the
//! Frobenius distance loss on the predicted EDM with a joint-angle loss that
//! is propagated back through classical MDS, anchor alignment and the IK layer.

mod adam;
mod checkpoint;
mod geometry;
mod mlp;
mod train;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use checkpoint::{infer, Checkpoint, CHECKPOINT_VERSION};
pub use geometry::{GeometryTrace, GAP_REL};
pub use mlp::{
    BnCache, DropoutMasks, ForwardCache, Gradients, MlpParams, BN_EPSILON, BN_MOMENTUM, HIDDEN, RUNNING_NAMES,
    TRAINABLE_NAMES,
};
pub use train::{batch_objective, train, BatchObjective, EpochMetrics, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::distgeo::Edm;
use crate::error::{Error, Result};
use crate::kinematics::{wrap_angle, Configuration};

/// Which terms enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `L_c + λ L_d`.
    Full,
    /// `L_d` only.
    EdmOnly,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(LossMode::Full),
            "edm_only" => Ok(LossMode::EdmOnly),
            other => Err(Error::InvalidArgument(format!("unknown loss mode {other:?} (expected full or edm_only)"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Full => "full",
            LossMode::EdmOnly => "edm_only",
        })
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_iterations: u64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    /// The learning rate is multiplied by `decay_factor` for epochs after this one.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    /// Weight `λ` of the distance loss.
    pub lambda: f64,
    pub loss: LossMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            warmup_iterations: 2000,
            batch_size: 64,
            dropout: 0.5,
            epochs: 100,
            decay_epoch: 50,
            decay_factor: 0.5,
            lambda: 0.5,
            loss: LossMode::Full,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("train config: {msg}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return bad("decay_factor must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        Ok(())
    }
}

/// Learning rate for the given (1-based) update index and epoch.
pub fn lr_schedule(iteration: u64, epoch: usize, cfg: &TrainConfig) -> f64 {
    let warm = if cfg.warmup_iterations == 0 {
        1.0
    } else {
        (iteration as f64 / cfg.warmup_iterations as f64).min(1.0)
    };
    let decay = if epoch > cfg.decay_epoch { cfg.decay_factor } else { 1.0 };
    cfg.learning_rate * warm * decay
}

/// `‖D̂ − D‖_F` over the full symmetric matrices.
pub fn loss_distance(pred: &Edm, target: &Edm) -> Result<f64> {
    if pred.size() != target.size() {
        return Err(Error::Dimension {
            what: "loss_distance",
            expected: target.size(),
            got: pred.size(),
        });
    }
    Ok((pred.matrix() - target.matrix()).norm())
}

/// [`loss_distance`] on packed vectors, with its gradient.
pub fn packed_distance_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let diff: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = (2.0 * diff.iter().map(|d| d * d).sum::<f64>()).sqrt();
    let grad = if loss > 0.0 {
        diff.iter().map(|d| 2.0 * d / loss).collect()
    } else {
        vec![0.0; diff.len()]
    };
    (loss, grad)
}

/// Mean wrapped absolute angle difference over joints.
pub fn loss_config(pred: &Configuration, target: &Configuration) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            what: "loss_config",
            expected: target.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| wrap_angle(p - t).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Differences smaller than this get a zero subgradient.
pub const ANGLE_DEADZONE: f64 = 1e-9;

fn angle_loss_grad(diff: f64) -> f64 {
    let w = wrap_angle(diff);
    if w.abs() < ANGLE_DEADZONE {
        0.0
    } else {
        w.signum()
    }
}

/// `L_c + λ L_d`, or `L_d` alone in [`LossMode::EdmOnly`].
pub fn loss_total(l_c: f64, l_d: f64, lambda: f64, mode: LossMode) -> f64 {
    match mode {
        LossMode::Full => l_c + lambda * l_d,
        LossMode::EdmOnly => l_d,
    }
}
