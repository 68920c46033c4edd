//! Checkpoint files: one JSON header line followed by the tensors as
//! little-endian `f64` in manifest order.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, HIDDEN};
use super::TrainConfig;
use crate::distgeo::{packed_len, unpack, Edm, PackedEdm};
use crate::error::{Error, Result};
use crate::kinematics::{reconstruct, Configuration, KinematicChain};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained network with what is needed to use it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub chain_name: String,
    /// Inputs are squared pixel distances divided by this value squared.
    pub image_diagonal: f64,
    pub config: TrainConfig,
    pub params: MlpParams,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    chain_name: String,
    image_diagonal: f64,
    config: TrainConfig,
    arrays: Vec<ArraySpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArraySpec {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            chain_name: self.chain_name.clone(),
            image_diagonal: self.image_diagonal,
            config: self.config.clone(),
            arrays: self
                .params
                .shapes()
                .into_iter()
                .map(|(name, shape)| ArraySpec {
                    name: name.to_string(),
                    shape,
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for t in self.params.trainable().iter().chain(self.params.running().iter()) {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        let (input, output) = match header.arrays.first().map(|a| a.shape.as_slice()) {
            Some(&[i, h]) if h == HIDDEN => (i, header.arrays.get(8).and_then(|a| a.shape.get(1)).copied().unwrap_or(0)),
            _ => return Err(bad("unexpected first array".into())),
        };
        let mut params = MlpParams::init(input, output, 0);
        let expected = params.shapes();
        if header.arrays.len() != expected.len()
            || header
                .arrays
                .iter()
                .zip(&expected)
                .any(|(a, (name, shape))| a.name != *name || a.shape != *shape)
        {
            return Err(bad("array manifest does not match the network layout".into()));
        }
        let body = &bytes[nl + 1..];
        let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if body.len() != total * 8 {
            return Err(bad(format!("expected {} data bytes, found {}", total * 8, body.len())));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut fill = |dst: &mut [f64]| {
            for d in dst.iter_mut() {
                *d = values.next().expect("length checked");
            }
        };
        for t in params.trainable_mut() {
            fill(t);
        }
        for t in params.running_mut() {
            fill(t);
        }
        if params.trainable().iter().chain(params.running().iter()).any(|t| t.iter().any(|x| !x.is_finite())) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(Checkpoint {
            chain_name: header.chain_name,
            image_diagonal: header.image_diagonal,
            config: header.config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Network output for one normalized input.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let dim = self.params.input_dim();
        if input.len() != dim {
            return Err(Error::Dimension {
                what: "network input",
                expected: dim,
                got: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let x = Array2::from_shape_vec((1, dim), input.to_vec()).expect("shape matches");
        Ok(self.params.forward_infer(x.view()).row(0).to_vec())
    }

    /// A checkpoint whose network ignores its input and always outputs `packed`.
    pub fn constant(chain: &KinematicChain, image_diagonal: f64, packed: &[f64]) -> Result<Self> {
        let out = packed_len(chain.point_count());
        if packed.len() != out {
            return Err(Error::Dimension {
                what: "constant output",
                expected: out,
                got: packed.len(),
            });
        }
        let mut params = MlpParams::init(packed_len(chain.dof()), out, 0);
        params.w3.fill(0.0);
        params.b3 = Array1::from(packed.to_vec());
        Ok(Checkpoint {
            chain_name: chain.name().to_string(),
            image_diagonal,
            config: TrainConfig::default(),
            params,
        })
    }
}

/// Predicted EDM and recovered configuration for one normalized input.
pub fn infer(checkpoint: &Checkpoint, input: &PackedEdm, chain: &KinematicChain) -> Result<(Edm, Configuration)> {
    let out = checkpoint.predict(input.as_slice())?;
    let edm = unpack(&PackedEdm::new(out)?, chain.point_count())?;
    let config = reconstruct(&edm, chain)?.config;
    Ok((edm, config))
}
