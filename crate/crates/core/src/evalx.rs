//! Error metrics and evaluation of a regressor over a dataset.

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::distgeo::{unpack, PackedEdm};
use crate::error::{Error, Result};
use crate::kinematics::{reconstruct, wrap_angle, KinematicChain};
use crate::model::Checkpoint;

/// Mean wrapped absolute difference over joints.
pub fn mae_angles(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            what: "mae_angles",
            expected: target.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mae_angles of empty vectors".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| wrap_angle(p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean of the `⌈fraction · N⌉` smallest errors; ties keep sample order.
pub fn top_fraction_mean(errors: &[f64], fraction: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("top_fraction_mean of an empty series".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((fraction * errors.len() as f64).ceil() as usize).clamp(1, errors.len());
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            what: "pearson",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least two pairs".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Anything mapping a normalized 2D input EDM to a packed 3D EDM.
pub trait EdmRegressor {
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>>;
}

impl EdmRegressor for Checkpoint {
    fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Checkpoint::predict(self, input)
    }
}

/// Mean and population standard deviation of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Summary { mean, std: var.sqrt() })
    }
}

/// Evaluation of a regressor over a dataset.
///
/// Angle errors are per-sample MAE over joints in radians. EDM errors are the
/// mean absolute error over the strict upper triangle in square meters.
/// Standard deviations are across samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub evaluated: usize,
    pub failures: usize,
    pub mirrored: usize,
    pub angle_mae: Option<Summary>,
    /// Mean and std over the half of samples with the smallest angle MAE.
    pub angle_mae_top50: Option<Summary>,
    pub edm_mae: Option<Summary>,
    pub pearson_edm_angle: Option<f64>,
    /// Overall angle MAE in units of 10 degrees.
    pub angle_mae_10deg: Option<f64>,
    pub angle_mae_top50_10deg: Option<f64>,
    pub per_sample_angle_mae: Vec<Option<f64>>,
    pub per_sample_edm_mae: Vec<f64>,
    pub failure_messages: Vec<String>,
}

fn to_10deg(rad: f64) -> f64 {
    rad.to_degrees() / 10.0
}

/// Runs `model` on every sample, reconstructs the configuration and scores it.
pub fn evaluate(model: &impl EdmRegressor, samples: &[Sample], chain: &KinematicChain) -> Result<EvalReport> {
    let n = chain.point_count();
    let mut angle = Vec::with_capacity(samples.len());
    let mut edm_err = Vec::with_capacity(samples.len());
    let mut mirrored = 0;
    let mut failure_messages = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let out = model.predict(&s.input)?;
        if out.len() != s.target.len() {
            return Err(Error::Dimension {
                what: "regressor output",
                expected: s.target.len(),
                got: out.len(),
            });
        }
        edm_err.push(out.iter().zip(&s.target).map(|(a, b)| (a - b).abs()).sum::<f64>() / out.len() as f64);
        let result = PackedEdm::new(out)
            .and_then(|p| unpack(&p, n))
            .and_then(|d| reconstruct(&d, chain));
        match result {
            Ok(rec) => {
                mirrored += usize::from(rec.mirrored);
                angle.push(Some(mae_angles(rec.config.as_slice(), &s.theta)?));
            }
            Err(e) => {
                failure_messages.push(format!("sample {i}: {e}"));
                angle.push(None);
            }
        }
    }

    let ok_angle: Vec<f64> = angle.iter().flatten().copied().collect();
    let ok_edm: Vec<f64> = angle.iter().zip(&edm_err).filter(|(a, _)| a.is_some()).map(|(_, &e)| e).collect();
    let angle_mae = Summary::of(&ok_angle);
    let top = if ok_angle.is_empty() {
        None
    } else {
        let mut sorted = ok_angle.clone();
        sorted.sort_by(f64::total_cmp);
        let k = (0.5 * sorted.len() as f64).ceil() as usize;
        Summary::of(&sorted[..k])
    };
    Ok(EvalReport {
        samples: samples.len(),
        evaluated: ok_angle.len(),
        failures: samples.len() - ok_angle.len(),
        mirrored,
        angle_mae,
        angle_mae_top50: top,
        edm_mae: Summary::of(&edm_err),
        pearson_edm_angle: pearson(&ok_edm, &ok_angle).ok(),
        angle_mae_10deg: angle_mae.map(|s| to_10deg(s.mean)),
        angle_mae_top50_10deg: top.map(|s| to_10deg(s.mean)),
        per_sample_angle_mae: angle,
        per_sample_edm_mae: edm_err,
        failure_messages,
    })
}
