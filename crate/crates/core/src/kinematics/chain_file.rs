use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Joint, KinematicChain};
use crate::error::{Error, Result};

/// JSON source of the bundled 7-DoF fixture.
pub const PANDA_FIXTURE: &str = include_str!("../../data/panda.json");

/// On-disk chain description.
///
/// ```json
/// {
///   "name": "one",
///   "joints": [
///     { "translation": [1, 0, 0], "rotation_rpy": [0, 0, 0], "limits": [-3.14, 3.14] }
///   ],
///   "ee_offset": [1, 0, 0]
/// }
/// ```
///
/// Each joint rotates about the `z` axis of its parent frame and then applies
/// `translation` and the fixed rotation `Rz(yaw) Ry(pitch) Rx(roll)`. An
/// optional `axis` field is accepted only if it equals `[0, 0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub ee_offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub translation: [f64; 3],
    pub rotation_rpy: [f64; 3],
    pub limits: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<[f64; 3]>,
}

impl ChainFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            msg: e.to_string(),
        })
    }

    pub fn into_chain(self) -> Result<KinematicChain> {
        let mut joints = Vec::with_capacity(self.joints.len());
        for (k, spec) in self.joints.into_iter().enumerate() {
            if let Some(axis) = spec.axis {
                if axis != [0.0, 0.0, 1.0] {
                    return Err(Error::InvalidChain {
                        joint: k + 1,
                        reason: format!("axis {axis:?} is not supported; joints rotate about local z"),
                    });
                }
            }
            let [roll, pitch, yaw] = spec.rotation_rpy;
            joints.push(Joint {
                translation: Vector3::from(spec.translation),
                rotation: Rotation3::from_euler_angles(roll, pitch, yaw).into_inner(),
                lower: spec.limits[0],
                upper: spec.limits[1],
            });
        }
        KinematicChain::new(self.name, joints, Vector3::from(self.ee_offset))
    }
}

/// Loads and validates a chain file. The names `fixture` and `panda` select
/// the bundled 7-DoF chain.
pub fn load_chain(path: impl AsRef<Path>) -> Result<KinematicChain> {
    let path = path.as_ref();
    if let Some(name) = path.to_str() {
        if name == "fixture" || name == "panda" {
            return Ok(KinematicChain::panda());
        }
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ChainFile::parse(&text, &path.display().to_string())?.into_chain()
}
