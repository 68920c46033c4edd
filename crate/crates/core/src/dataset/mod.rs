//! Synthetic samples: random configurations seen by pinhole cameras.

mod camera;
mod records;

pub use camera::{load_camera, Camera, CameraFile, PoseSpec, Projection, CAM0};
pub use records::{read_records, write_records, SampleRecord};

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::distgeo::{pack_upper, packed_len, PackedEdm};
use crate::error::{Error, Result};
use crate::kinematics::{build_point_set, config_to_edm, Configuration, KinematicChain};

/// Uniform draw from each `[lo, hi]`; equal bounds give that value exactly.
pub fn sample_within(limits: &[(f64, f64)], rng: &mut impl Rng) -> Vec<f64> {
    limits
        .iter()
        .map(|&(lo, hi)| if lo < hi { rng.random_range(lo..=hi) } else { lo })
        .collect()
}

/// A configuration drawn uniformly from the chain's limit box.
pub fn sample_configuration(chain: &KinematicChain, rng: &mut impl Rng) -> Configuration {
    Configuration::new(sample_within(&chain.limits(), rng)).expect("limits are finite")
}

/// Projects base-frame points through `camera`.
pub fn project_keypoints(camera: &Camera, points: &[Vector3<f64>]) -> Projection {
    camera.project(points)
}

/// Squared pixel distances between keypoints over the squared image
/// diagonal, packed row by row.
pub fn input_edm_from_2d(kp2d: &[[f64; 2]], image_diagonal: f64) -> PackedEdm {
    let scale = 1.0 / (image_diagonal * image_diagonal);
    let mut v = Vec::with_capacity(packed_len(kp2d.len()));
    for (i, a) in kp2d.iter().enumerate() {
        for b in &kp2d[i + 1..] {
            let (du, dv) = (a[0] - b[0], a[1] - b[1]);
            v.push((du * du + dv * dv) * scale);
        }
    }
    PackedEdm::new(v).expect("squared distances are nonnegative")
}

/// Projects the keypoints `p_1 … p_n` of `theta` through `camera`.
pub fn make_sample(chain: &KinematicChain, camera: &Camera, theta: &Configuration) -> Result<SampleRecord> {
    let points = build_point_set(chain, theta)?;
    let keypoints: Vec<Vector3<f64>> = chain.keypoint_indices().iter().map(|&i| points.points()[i]).collect();
    let pr = camera.project(&keypoints);
    Ok(SampleRecord {
        theta: theta.as_slice().to_vec(),
        kp2d: pr.uv,
        visible: pr.visible,
        camera_id: camera.id.clone(),
    })
}

/// Settings for [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub count: usize,
    pub seed: u64,
    /// Standard deviation of isotropic pixel noise; zero disables it.
    pub noise_sigma: f64,
}

/// Generates `count` samples. Sample `i` draws from its own stream of the
/// master seed, so any sample can be regenerated on its own.
pub fn generate(chain: &KinematicChain, cameras: &[Camera], opts: &GenerateOptions) -> Result<Vec<SampleRecord>> {
    if cameras.is_empty() {
        return Err(Error::InvalidArgument("at least one camera is required".into()));
    }
    if !(opts.noise_sigma >= 0.0 && opts.noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument("noise sigma must be finite and nonnegative".into()));
    }
    (0..opts.count)
        .map(|i| generate_one(chain, cameras, opts, i as u64))
        .collect()
}

fn generate_one(chain: &KinematicChain, cameras: &[Camera], opts: &GenerateOptions, index: u64) -> Result<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index);
    let camera = &cameras[rng.random_range(0..cameras.len())];
    let theta = sample_configuration(chain, &mut rng);
    let mut record = make_sample(chain, camera, &theta)?;
    if opts.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, opts.noise_sigma).expect("valid sigma");
        for (uv, &vis) in record.kp2d.iter_mut().zip(&record.visible) {
            if vis {
                uv[0] += noise.sample(&mut rng);
                uv[1] += noise.sample(&mut rng);
            }
        }
    }
    Ok(record)
}

/// Fraction of records whose keypoints are all visible.
pub fn visible_fraction(records: &[SampleRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.all_visible()).count() as f64 / records.len() as f64
}

/// A network training example: normalized 2D input, 3D target and angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Sample {
    /// Builds the example for `record`; the target EDM is recomputed from `theta`.
    pub fn from_record(record: &SampleRecord, chain: &KinematicChain, image_diagonal: f64) -> Result<Self> {
        record.validate(chain).map_err(Error::InvalidArgument)?;
        let theta = Configuration::new(record.theta.clone())?;
        let target = pack_upper(&config_to_edm(chain, &theta)?).into_vec();
        Ok(Sample {
            input: input_edm_from_2d(&record.kp2d, image_diagonal).into_vec(),
            target,
            theta: record.theta.clone(),
        })
    }
}

/// Converts records to examples, dropping those with an invisible keypoint
/// unless `keep_invisible` is set.
pub fn to_samples(
    records: &[SampleRecord],
    chain: &KinematicChain,
    image_diagonal: f64,
    keep_invisible: bool,
) -> Result<Vec<Sample>> {
    records
        .iter()
        .filter(|r| keep_invisible || r.all_visible())
        .map(|r| Sample::from_record(r, chain, image_diagonal))
        .collect()
}
