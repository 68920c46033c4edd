#![allow(dead_code)]

use edmik::dataset::{generate, load_camera, to_samples, GenerateOptions, Sample};
use edmik::kinematics::{wrap_angle, KinematicChain};
use edmik::model::{batch_objective, DropoutMasks, GeometryTrace, MlpParams, TrainConfig, BN_EPSILON, HIDDEN};
use ndarray::{Array1, Array2, Axis};

/// Noiseless samples of the fixture chain seen by the bundled camera.
pub fn panda_samples(count: usize, seed: u64) -> Vec<Sample> {
    let chain = KinematicChain::panda();
    let cam = load_camera("cam0").unwrap();
    let opts = GenerateOptions {
        count,
        seed,
        noise_sigma: 0.0,
    };
    let records = generate(&chain, std::slice::from_ref(&cam), &opts).unwrap();
    to_samples(&records, &chain, cam.image_diagonal(), false).unwrap()
}

pub fn stack(samples: &[Sample]) -> Array2<f64> {
    Array2::from_shape_fn((samples.len(), samples[0].input.len()), |(i, j)| samples[i].input[j])
}

/// `|a − f| / max(|a|, |f|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|x| x.max(0.0));
    a
}

/// Batch-norm of one column with biased batch variance.
fn bn_column(z: &Array1<f64>, gamma: f64, beta: f64) -> Array1<f64> {
    let mean = z.mean().unwrap();
    let var = z.mapv(|v| (v - mean).powi(2)).mean().unwrap();
    z.mapv(|v| gamma * (v - mean) / (var + BN_EPSILON).sqrt() + beta)
}

/// Training-mode loss of a fixed batch as a function of the parameters,
/// evaluated from scratch for the first block and incrementally (one hidden
/// or output column at a time) for the rest.
pub struct LossProbe<'a> {
    pub params: MlpParams,
    pub x: Array2<f64>,
    pub masks: DropoutMasks,
    pub batch: Vec<&'a Sample>,
    pub chain: &'a KinematicChain,
    pub cfg: TrainConfig,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
    z3: Array2<f64>,
}

impl<'a> LossProbe<'a> {
    pub fn new(
        params: MlpParams,
        samples: &'a [Sample],
        masks: DropoutMasks,
        chain: &'a KinematicChain,
        cfg: TrainConfig,
    ) -> Self {
        let x = stack(samples);
        let (_, cache) = params.forward_train(x.view(), &masks);
        let z2 = cache.h1.dot(&params.w2) + &params.b2;
        LossProbe {
            h1: cache.h1.clone(),
            z2,
            h2: cache.h2.clone(),
            z3: cache.z3.clone(),
            params,
            x,
            masks,
            batch: samples.iter().collect(),
            chain,
            cfg,
        }
    }

    pub fn loss_of_outputs(&self, out: &Array2<f64>) -> f64 {
        batch_objective(out.view(), &self.batch, self.chain, &self.cfg, false).unwrap().loss
    }

    pub fn loss(&self) -> f64 {
        self.loss_of_outputs(&relu(self.z3.clone()))
    }

    pub fn analytic(&self) -> Vec<f64> {
        let (out, cache) = self.params.forward_train(self.x.view(), &self.masks);
        let obj = batch_objective(out.view(), &self.batch, self.chain, &self.cfg, true).unwrap();
        self.params.backward(&cache, obj.outputs_bar.as_ref().unwrap()).flatten()
    }

    /// Parameter value at tensor `t`, flat index `k`.
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.params.trainable()[t][k]
    }

    /// Loss with tensor `t`, flat index `k` shifted by `delta`.
    pub fn shifted_loss(&self, t: usize, k: usize, delta: f64) -> f64 {
        if t < 4 {
            let mut p = self.params.clone();
            p.trainable_mut()[t][k] += delta;
            let (out, _) = p.forward_train(self.x.view(), &self.masks);
            return self.loss_of_outputs(&out);
        }
        let p = &self.params;
        let mut z3 = self.z3.clone();
        match t {
            4..=7 => {
                let j = if t == 4 { k % HIDDEN } else { k };
                let mut z = self.z2.column(j).to_owned();
                let (mut gamma, mut beta) = (p.gamma2[j], p.beta2[j]);
                match t {
                    4 => z.scaled_add(delta, &self.h1.column(k / HIDDEN)),
                    5 => z += delta,
                    6 => gamma += delta,
                    _ => beta += delta,
                }
                let h = bn_column(&z, gamma, beta).mapv(|v| v.max(0.0)) * self.masks.hidden2.column(j);
                let dh = h - self.h2.column(j);
                let dh = dh.insert_axis(Axis(1));
                let w = p.w3.row(j).insert_axis(Axis(0));
                z3 += &dh.dot(&w);
            }
            8 => {
                let (i, j) = (k / p.output_dim(), k % p.output_dim());
                z3.column_mut(j).scaled_add(delta, &self.h2.column(i));
            }
            9 => z3.column_mut(k).mapv_inplace(|v| v + delta),
            _ => unreachable!("ten trainable tensors"),
        }
        self.loss_of_outputs(&relu(z3))
    }

    /// Central difference at one coordinate.
    pub fn numeric(&self, t: usize, k: usize, h: f64) -> f64 {
        (self.shifted_loss(t, k, h) - self.shifted_loss(t, k, -h)) / (2.0 * h)
    }
}

/// True when every row of `out` has a working geometry head and angle
/// errors away from the kinks of the wrapped absolute value.
pub fn geometry_is_regular(out: &Array2<f64>, samples: &[Sample], chain: &KinematicChain, margin: f64) -> bool {
    out.outer_iter().zip(samples).all(|(row, s)| {
        let Ok(trace) = GeometryTrace::forward(&row.to_vec(), chain) else {
            return false;
        };
        let bar = vec![1.0; chain.dof()];
        trace.backward(&bar).is_ok()
            && trace.angles.iter().zip(&s.theta).all(|(a, t)| {
                let d = wrap_angle(a - t).abs();
                d > margin && d < std::f64::consts::PI - margin
            })
    })
}
