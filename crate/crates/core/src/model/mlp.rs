//! The regression network: two `Dense → BatchNorm → ReLU → Dropout` blocks
//! and a `Dense → ReLU` output, with a hand-written backward pass.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Width of both hidden layers.
pub const HIDDEN: usize = 512;
/// Added to the batch variance before normalizing.
pub const BN_EPSILON: f64 = 1e-8;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Names of the trainable tensors, in canonical order.
pub const TRAINABLE_NAMES: [&str; 10] = [
    "dense1.weight",
    "dense1.bias",
    "bn1.gamma",
    "bn1.beta",
    "dense2.weight",
    "dense2.bias",
    "bn2.gamma",
    "bn2.beta",
    "output.weight",
    "output.bias",
];

/// Names of the batch-norm running statistics.
pub const RUNNING_NAMES: [&str; 4] = ["bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var"];

/// Network weights. Dense weights are stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub gamma1: Array1<f64>,
    pub beta1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub gamma2: Array1<f64>,
    pub beta2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub running_mean1: Array1<f64>,
    pub running_var1: Array1<f64>,
    pub running_mean2: Array1<f64>,
    pub running_var2: Array1<f64>,
}

/// Gradients of the trainable tensors, same shapes as in [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub gamma1: Array1<f64>,
    pub beta1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub gamma2: Array1<f64>,
    pub beta2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng))
}

impl MlpParams {
    /// He-normal weights, zero biases, unit scales, running stats `(0, 1)`.
    pub fn init(input: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = he_normal(&mut rng, input, HIDDEN);
        let w2 = he_normal(&mut rng, HIDDEN, HIDDEN);
        let w3 = he_normal(&mut rng, HIDDEN, output);
        let zeros = || Array1::zeros(HIDDEN);
        let ones = || Array1::ones(HIDDEN);
        MlpParams {
            w1,
            b1: zeros(),
            gamma1: ones(),
            beta1: zeros(),
            w2,
            b2: zeros(),
            gamma2: ones(),
            beta2: zeros(),
            w3,
            b3: Array1::zeros(output),
            running_mean1: zeros(),
            running_var1: ones(),
            running_mean2: zeros(),
            running_var2: ones(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w3.ncols()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn trainable(&self) -> [&[f64]; 10] {
        [
            slice(self.w1.as_slice()),
            slice(self.b1.as_slice()),
            slice(self.gamma1.as_slice()),
            slice(self.beta1.as_slice()),
            slice(self.w2.as_slice()),
            slice(self.b2.as_slice()),
            slice(self.gamma2.as_slice()),
            slice(self.beta2.as_slice()),
            slice(self.w3.as_slice()),
            slice(self.b3.as_slice()),
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut [f64]; 10] {
        [
            slice_mut(self.w1.as_slice_mut()),
            slice_mut(self.b1.as_slice_mut()),
            slice_mut(self.gamma1.as_slice_mut()),
            slice_mut(self.beta1.as_slice_mut()),
            slice_mut(self.w2.as_slice_mut()),
            slice_mut(self.b2.as_slice_mut()),
            slice_mut(self.gamma2.as_slice_mut()),
            slice_mut(self.beta2.as_slice_mut()),
            slice_mut(self.w3.as_slice_mut()),
            slice_mut(self.b3.as_slice_mut()),
        ]
    }

    pub fn running(&self) -> [&[f64]; 4] {
        [
            slice(self.running_mean1.as_slice()),
            slice(self.running_var1.as_slice()),
            slice(self.running_mean2.as_slice()),
            slice(self.running_var2.as_slice()),
        ]
    }

    pub fn running_mut(&mut self) -> [&mut [f64]; 4] {
        [
            slice_mut(self.running_mean1.as_slice_mut()),
            slice_mut(self.running_var1.as_slice_mut()),
            slice_mut(self.running_mean2.as_slice_mut()),
            slice_mut(self.running_var2.as_slice_mut()),
        ]
    }

    /// Shapes of all named tensors: trainable first, then running statistics.
    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (i, o) = (self.input_dim(), self.output_dim());
        let mut out = vec![
            ("dense1.weight", vec![i, HIDDEN]),
            ("dense1.bias", vec![HIDDEN]),
            ("bn1.gamma", vec![HIDDEN]),
            ("bn1.beta", vec![HIDDEN]),
            ("dense2.weight", vec![HIDDEN, HIDDEN]),
            ("dense2.bias", vec![HIDDEN]),
            ("bn2.gamma", vec![HIDDEN]),
            ("bn2.beta", vec![HIDDEN]),
            ("output.weight", vec![HIDDEN, o]),
            ("output.bias", vec![o]),
        ];
        out.extend(RUNNING_NAMES.iter().map(|&n| (n, vec![HIDDEN])));
        out
    }

    /// Inference: running statistics, no dropout.
    pub fn forward_infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let z1 = x.dot(&self.w1) + &self.b1;
        let h1 = bn_infer(&z1, &self.running_mean1, &self.running_var1, &self.gamma1, &self.beta1);
        let z2 = h1.dot(&self.w2) + &self.b2;
        let h2 = bn_infer(&z2, &self.running_mean2, &self.running_var2, &self.gamma2, &self.beta2);
        relu(h2.dot(&self.w3) + &self.b3)
    }

    /// Training forward pass with batch statistics and the given dropout masks.
    pub fn forward_train(&self, x: ArrayView2<f64>, masks: &DropoutMasks) -> (Array2<f64>, ForwardCache) {
        assert!(x.nrows() >= 2, "batch statistics need at least two samples");
        let z1 = x.dot(&self.w1) + &self.b1;
        let bn1 = BnCache::forward(&z1);
        let y1 = bn1.scale(&self.gamma1, &self.beta1);
        let h1 = relu(y1.clone()) * &masks.hidden1;
        let z2 = h1.dot(&self.w2) + &self.b2;
        let bn2 = BnCache::forward(&z2);
        let y2 = bn2.scale(&self.gamma2, &self.beta2);
        let h2 = relu(y2.clone()) * &masks.hidden2;
        let z3 = h2.dot(&self.w3) + &self.b3;
        let out = relu(z3.clone());
        let cache = ForwardCache {
            input: x.to_owned(),
            bn1,
            y1,
            h1,
            bn2,
            y2,
            h2,
            z3,
            masks: masks.clone(),
        };
        (out, cache)
    }

    /// Folds the batch statistics of a training pass into the running ones.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let b = cache.input.nrows() as f64;
        let unbias = b / (b - 1.0);
        let m = BN_MOMENTUM;
        let blend = |run: &mut Array1<f64>, batch: &Array1<f64>, scale: f64| {
            Zip::from(run).and(batch).for_each(|r, &x| *r = (1.0 - m) * *r + m * x * scale);
        };
        blend(&mut self.running_mean1, &cache.bn1.mean, 1.0);
        blend(&mut self.running_var1, &cache.bn1.var, unbias);
        blend(&mut self.running_mean2, &cache.bn2.mean, 1.0);
        blend(&mut self.running_var2, &cache.bn2.var, unbias);
    }

    /// Gradients of a scalar loss given its gradient on the network outputs.
    pub fn backward(&self, cache: &ForwardCache, out_bar: &Array2<f64>) -> Gradients {
        let dz3 = relu_backward(out_bar, &cache.z3);
        let w3 = cache.h2.t().dot(&dz3);
        let b3 = dz3.sum_axis(Axis(0));
        let dh2 = dz3.dot(&self.w3.t()) * &cache.masks.hidden2;
        let dy2 = relu_backward(&dh2, &cache.y2);
        let (dz2, gamma2, beta2) = cache.bn2.backward(&dy2, &self.gamma2);
        let w2 = cache.h1.t().dot(&dz2);
        let b2 = dz2.sum_axis(Axis(0));
        let dh1 = dz2.dot(&self.w2.t()) * &cache.masks.hidden1;
        let dy1 = relu_backward(&dh1, &cache.y1);
        let (dz1, gamma1, beta1) = cache.bn1.backward(&dy1, &self.gamma1);
        let w1 = cache.input.t().dot(&dz1);
        let b1 = dz1.sum_axis(Axis(0));
        Gradients {
            w1,
            b1,
            gamma1,
            beta1,
            w2,
            b2,
            gamma2,
            beta2,
            w3,
            b3,
        }
    }
}

impl Gradients {
    pub fn tensors(&self) -> [&[f64]; 10] {
        [
            slice(self.w1.as_slice()),
            slice(self.b1.as_slice()),
            slice(self.gamma1.as_slice()),
            slice(self.beta1.as_slice()),
            slice(self.w2.as_slice()),
            slice(self.b2.as_slice()),
            slice(self.gamma2.as_slice()),
            slice(self.beta2.as_slice()),
            slice(self.w3.as_slice()),
            slice(self.b3.as_slice()),
        ]
    }

    /// All gradient entries in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

fn slice(s: Option<&[f64]>) -> &[f64] {
    s.expect("parameter arrays are contiguous")
}

fn slice_mut(s: Option<&mut [f64]>) -> &mut [f64] {
    s.expect("parameter arrays are contiguous")
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|x| x.max(0.0));
    a
}

fn relu_backward(grad: &Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    Zip::from(&mut out).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

fn bn_infer(z: &Array2<f64>, mean: &Array1<f64>, var: &Array1<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array2<f64> {
    let scale: Array1<f64> = Zip::from(gamma).and(var).map_collect(|&g, &v| g / (v + BN_EPSILON).sqrt());
    let shift: Array1<f64> = Zip::from(beta).and(mean).and(&scale).map_collect(|&b, &m, &s| b - m * s);
    relu(z * &scale + &shift)
}

/// Per-unit dropout multipliers, `0` or `1 / (1 − p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub hidden1: Array2<f64>,
    pub hidden2: Array2<f64>,
}

impl DropoutMasks {
    /// Masks that keep every unit.
    pub fn ones(batch: usize) -> Self {
        DropoutMasks {
            hidden1: Array2::ones((batch, HIDDEN)),
            hidden2: Array2::ones((batch, HIDDEN)),
        }
    }

    pub fn sample(batch: usize, rate: f64, rng: &mut impl Rng) -> Self {
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mut draw = || Array2::from_shape_simple_fn((batch, HIDDEN), || if rng.random::<f64>() < keep { scale } else { 0.0 });
        let hidden1 = draw();
        let hidden2 = draw();
        DropoutMasks { hidden1, hidden2 }
    }
}

/// Batch-norm statistics of one training pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub mean: Array1<f64>,
    /// Biased batch variance.
    pub var: Array1<f64>,
    pub inv_std: Array1<f64>,
    pub xhat: Array2<f64>,
}

impl BnCache {
    pub fn forward(z: &Array2<f64>) -> Self {
        let mean = z.mean_axis(Axis(0)).expect("nonempty batch");
        let centered = z - &mean;
        let var = centered.mapv(|x| x * x).mean_axis(Axis(0)).expect("nonempty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
        let xhat = centered * &inv_std;
        BnCache { mean, var, inv_std, xhat }
    }

    fn scale(&self, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array2<f64> {
        &self.xhat * gamma + beta
    }

    /// Returns `(dz, dgamma, dbeta)`.
    fn backward(&self, dy: &Array2<f64>, gamma: &Array1<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let b = dy.nrows() as f64;
        let dgamma = (dy * &self.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &self.xhat).sum_axis(Axis(0));
        let mut dz = dxhat * b - &sum_dxhat - &self.xhat * &sum_dxhat_xhat;
        dz *= &(&self.inv_std / b);
        (dz, dgamma, dbeta)
    }
}

/// Activations kept from [`MlpParams::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    pub bn1: BnCache,
    pub y1: Array2<f64>,
    pub h1: Array2<f64>,
    pub bn2: BnCache,
    pub y2: Array2<f64>,
    pub h2: Array2<f64>,
    pub z3: Array2<f64>,
    pub masks: DropoutMasks,
}
