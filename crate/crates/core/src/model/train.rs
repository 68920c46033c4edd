use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::checkpoint::Checkpoint;
use super::geometry::GeometryTrace;
use super::mlp::{DropoutMasks, MlpParams};
use super::{angle_loss_grad, loss_total, lr_schedule, packed_distance_loss, LossMode, TrainConfig};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::kinematics::{wrap_angle, KinematicChain};

/// Offset separating the dropout stream from the shuffling streams.
const DROPOUT_SEED_OFFSET: u64 = 0x5eed_d50f;
const VALIDATION_CHUNK: usize = 512;

/// Loss of a batch of network outputs and, optionally, its gradient.
#[derive(Debug, Clone)]
pub struct BatchObjective {
    pub loss: f64,
    /// Mean Frobenius distance loss over the batch.
    pub l_d: f64,
    /// Mean wrapped angle error over joints and the samples whose geometry
    /// head succeeded; `None` in [`LossMode::EdmOnly`].
    pub l_c: Option<f64>,
    pub outputs_bar: Option<Array2<f64>>,
    /// Samples whose angle-loss path was dropped (degenerate geometry).
    pub skipped: usize,
}

/// Evaluates the training objective on network `outputs` for `batch`.
pub fn batch_objective(
    outputs: ArrayView2<f64>,
    batch: &[&Sample],
    chain: &KinematicChain,
    cfg: &TrainConfig,
    with_gradient: bool,
) -> Result<BatchObjective> {
    let b = batch.len();
    assert_eq!(outputs.nrows(), b);
    let inv_b = 1.0 / b as f64;
    let d_weight = match cfg.loss {
        LossMode::Full => cfg.lambda,
        LossMode::EdmOnly => 1.0,
    };
    let mut outputs_bar = with_gradient.then(|| Array2::zeros(outputs.raw_dim()));
    let mut l_d = 0.0;
    let rows: Vec<Vec<f64>> = outputs.outer_iter().map(|r| r.to_vec()).collect();
    for (k, (row, sample)) in rows.iter().zip(batch).enumerate() {
        let (loss, grad) = packed_distance_loss(row, &sample.target);
        l_d += loss * inv_b;
        if let Some(ob) = outputs_bar.as_mut() {
            for (o, g) in ob.row_mut(k).iter_mut().zip(&grad) {
                *o += d_weight * g * inv_b;
            }
        }
    }

    let mut skipped = 0;
    let l_c = match cfg.loss {
        LossMode::EdmOnly => None,
        LossMode::Full => {
            let traces: Vec<Option<GeometryTrace>> = rows
                .iter()
                .map(|row| GeometryTrace::forward(row, chain).ok())
                .collect();
            let ok = traces.iter().filter(|t| t.is_some()).count();
            skipped += b - ok;
            let n = chain.dof() as f64;
            let mut sum = 0.0;
            for (k, (trace, sample)) in traces.iter().zip(batch).enumerate() {
                let Some(trace) = trace else { continue };
                let diffs: Vec<f64> = trace.angles.iter().zip(&sample.theta).map(|(a, t)| a - t).collect();
                sum += diffs.iter().map(|&d| wrap_angle(d).abs()).sum::<f64>();
                if let Some(ob) = outputs_bar.as_mut() {
                    let scale = 1.0 / (n * ok as f64);
                    let angles_bar: Vec<f64> = diffs.iter().map(|&d| angle_loss_grad(d) * scale).collect();
                    if angles_bar.iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    match trace.backward(&angles_bar) {
                        Ok(packed_bar) => {
                            for (o, g) in ob.row_mut(k).iter_mut().zip(&packed_bar) {
                                *o += g;
                            }
                        }
                        Err(_) => skipped += 1,
                    }
                }
            }
            Some(if ok > 0 { sum / (n * ok as f64) } else { 0.0 })
        }
    };
    Ok(BatchObjective {
        loss: loss_total(l_c.unwrap_or(0.0), l_d, cfg.lambda, cfg.loss),
        l_d,
        l_c,
        outputs_bar,
        skipped,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_l_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_l_c: Option<f64>,
    pub skipped_gradients: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_l_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_l_c: Option<f64>,
    /// Joint-angle MAE on the validation set (radians).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_mae: Option<f64>,
    pub val_failures: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MAE (the last
    /// epoch when there is no validation set).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

struct Validation {
    l_d: f64,
    mae: Option<f64>,
    failures: usize,
}

fn validate(params: &MlpParams, val: &[Sample], chain: &KinematicChain) -> Validation {
    let mut l_d = 0.0;
    let mut mae_sum = 0.0;
    let mut ok = 0usize;
    for chunk in val.chunks(VALIDATION_CHUNK) {
        let x = stack_inputs(chunk.iter());
        let out = params.forward_infer(x.view());
        for (row, sample) in out.outer_iter().zip(chunk) {
            let row = row.to_vec();
            l_d += packed_distance_loss(&row, &sample.target).0;
            if let Ok(trace) = GeometryTrace::forward(&row, chain) {
                let n = trace.angles.len() as f64;
                mae_sum += trace
                    .angles
                    .iter()
                    .zip(&sample.theta)
                    .map(|(a, t)| wrap_angle(a - t).abs())
                    .sum::<f64>()
                    / n;
                ok += 1;
            }
        }
    }
    Validation {
        l_d: l_d / val.len() as f64,
        mae: (ok > 0).then(|| mae_sum / ok as f64),
        failures: val.len() - ok,
    }
}

fn stack_inputs<'a>(samples: impl ExactSizeIterator<Item = &'a Sample>) -> Array2<f64> {
    let rows: Vec<&Sample> = samples.collect();
    let width = rows.first().map_or(0, |s| s.input.len());
    Array2::from_shape_fn((rows.len(), width), |(i, j)| rows[i].input[j])
}

/// Trains a fresh network on `train_set`, selecting the checkpoint with the
/// lowest validation MAE. `on_epoch` sees every log line as it is produced.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    chain: &KinematicChain,
    cfg: &TrainConfig,
    image_diagonal: f64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Training("need at least two training samples".into()));
    }
    let input_dim = train_set[0].input.len();
    let output_dim = train_set[0].target.len();
    if input_dim != crate::distgeo::packed_len(chain.dof()) || output_dim != crate::distgeo::packed_len(chain.point_count()) {
        return Err(Error::Dimension {
            what: "training sample",
            expected: crate::distgeo::packed_len(chain.dof()),
            got: input_dim,
        });
    }

    let mut params = MlpParams::init(input_dim, output_dim, cfg.seed);
    let mut adam = AdamState::new(&params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(DROPOUT_SEED_OFFSET));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut iteration = 0u64;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, MlpParams)> = None;

    for epoch in 1..=cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);

        let (mut loss_sum, mut l_d_sum, mut l_c_sum, mut batches, mut skipped) = (0.0, 0.0, 0.0, 0usize, 0usize);
        let mut lr = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let x = stack_inputs(batch.iter().copied());
            let masks = DropoutMasks::sample(batch.len(), cfg.dropout, &mut dropout_rng);
            let (out, cache) = params.forward_train(x.view(), &masks);
            let obj = batch_objective(out.view(), &batch, chain, cfg, true)?;
            if !obj.loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, iteration {}",
                    iteration + 1
                )));
            }
            let grads = params.backward(&cache, obj.outputs_bar.as_ref().expect("gradient requested"));
            params.update_running_stats(&cache);
            iteration += 1;
            lr = lr_schedule(iteration, epoch, cfg);
            adam_step(&mut params, &grads, &mut adam, lr);

            loss_sum += obj.loss;
            l_d_sum += obj.l_d;
            l_c_sum += obj.l_c.unwrap_or(0.0);
            skipped += obj.skipped;
            batches += 1;
        }
        let per = 1.0 / batches.max(1) as f64;
        let full = cfg.loss == LossMode::Full;
        let mut m = EpochMetrics {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum * per,
            train_l_d: l_d_sum * per,
            train_l_c: full.then_some(l_c_sum * per),
            skipped_gradients: skipped,
            val_loss: None,
            val_l_d: None,
            val_l_c: None,
            val_mae: None,
            val_failures: 0,
        };
        if !val_set.is_empty() {
            let v = validate(&params, val_set, chain);
            m.val_l_d = Some(v.l_d);
            m.val_mae = v.mae;
            m.val_failures = v.failures;
            if full {
                m.val_l_c = v.mae;
            }
            m.val_loss = Some(loss_total(v.mae.unwrap_or(f64::NAN), v.l_d, cfg.lambda, cfg.loss));
        }
        on_epoch(&m);

        let score = if val_set.is_empty() { 0.0 } else { m.val_mae.unwrap_or(f64::INFINITY) };
        if best.as_ref().is_none_or(|(s, _, _)| score < *s || val_set.is_empty()) {
            best = Some((score, epoch, params.clone()));
        }
        metrics.push(m);
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: Checkpoint {
            chain_name: chain.name().to_string(),
            image_diagonal,
            config: cfg.clone(),
            params: best_params,
        },
        best_epoch,
        metrics,
    })
}
