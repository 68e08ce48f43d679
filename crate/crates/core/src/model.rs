//! Rigid eight-part mouse model and its parametric pace-gait / head-nod
//! deformation.
//!
//! Model frame: X lateral (left positive), Y anterior, Z up, origin at the
//! body centre of gravity. All coordinates in millimetres.

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::PoseVector;
use crate::scalar::Real;

pub const PART_COUNT: usize = 8;

pub const NOSE_TIP: usize = 0;
pub const LEFT_EAR: usize = 1;
pub const RIGHT_EAR: usize = 2;
pub const LEFT_FRONT_PAW: usize = 3;
pub const RIGHT_FRONT_PAW: usize = 4;
pub const LEFT_HIND_PAW: usize = 5;
pub const RIGHT_HIND_PAW: usize = 6;
pub const TAIL_ROOT: usize = 7;

/// Parts rotating with the head.
pub const HEAD_PARTS: [usize; 3] = [NOSE_TIP, LEFT_EAR, RIGHT_EAR];
/// Diagonal pair that swings during the first quarter of the gait cycle.
pub const LEADING_PAWS: [usize; 2] = [LEFT_FRONT_PAW, RIGHT_HIND_PAW];
/// Diagonal pair that is on the ground during the first quarter.
pub const TRAILING_PAWS: [usize; 2] = [RIGHT_FRONT_PAW, LEFT_HIND_PAW];

const TABLE: [(&str, [f64; 3]); PART_COUNT] = [
    ("nose tip", [0.0, 36.0, 2.5]),
    ("left ear", [7.75, 16.0, 19.0]),
    ("right ear", [-7.75, 16.0, 19.0]),
    ("left front paw", [5.5, 20.0, -8.0]),
    ("right front paw", [-5.5, 20.0, -8.0]),
    ("left hind paw", [13.5, -8.5, -8.0]),
    ("right hind paw", [-13.5, -8.5, -8.0]),
    ("tail root", [0.0, -30.0, -6.0]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct BodyPart<T: Real> {
    pub id: usize,
    pub name: String,
    pub position: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidMouseModel<T: Real> {
    pub parts: Vec<BodyPart<T>>,
}

/// On-disk model entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartRecord {
    pub id: usize,
    pub name: String,
    pub xyz_mm: [f64; 3],
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("model must list exactly {PART_COUNT} parts with ids 0..{PART_COUNT}, got {0}")]
    WrongParts(String),
    #[error("model file: {0}")]
    Parse(#[from] serde_json::Error),
}

impl<T: Real> Default for RigidMouseModel<T> {
    fn default() -> Self {
        Self::table()
    }
}

impl<T: Real> RigidMouseModel<T> {
    /// The biologically plausible reference coordinates.
    pub fn table() -> Self {
        let parts = TABLE
            .iter()
            .enumerate()
            .map(|(id, (name, xyz))| BodyPart {
                id,
                name: (*name).to_string(),
                position: Vector3::new(T::lit(xyz[0]), T::lit(xyz[1]), T::lit(xyz[2])),
            })
            .collect();
        Self { parts }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn rigid_part_positions(&self) -> Vec<Vector3<T>> {
        self.parts.iter().map(|p| p.position).collect()
    }

    /// Axis-aligned bounding box `(min, max)` of the part coordinates.
    pub fn bounding_box(&self) -> (Vector3<T>, Vector3<T>) {
        let first = self.parts[0].position;
        self.parts.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(&p.position), hi.sup(&p.position))
        })
    }

    /// Midpoint of the line joining the ears; pivot of the head rotation.
    pub fn ear_midpoint(&self) -> Vector3<T> {
        (self.parts[LEFT_EAR].position + self.parts[RIGHT_EAR].position) * T::lit(0.5)
    }

    /// Part positions in the global frame for a model pose and an optional
    /// deformation: `H(pose) (X_i + Δ_i)`.
    pub fn world_part_positions(
        &self,
        pose: &PoseVector<T>,
        deformation: Option<&DeformationState<T>>,
    ) -> Vec<Vector3<T>> {
        let h = pose.to_transform();
        self.parts
            .iter()
            .enumerate()
            .map(|(i, part)| match deformation {
                Some(d) => h.apply(&(part.position + d.offsets[i])),
                None => h.apply(&part.position),
            })
            .collect()
    }

    pub fn to_records(&self) -> Vec<PartRecord> {
        self.parts
            .iter()
            .map(|p| PartRecord {
                id: p.id,
                name: p.name.clone(),
                xyz_mm: [
                    p.position.x.as_f64(),
                    p.position.y.as_f64(),
                    p.position.z.as_f64(),
                ],
            })
            .collect()
    }

    pub fn from_records(records: &[PartRecord]) -> Result<Self, ModelError> {
        let mut sorted = records.to_vec();
        sorted.sort_by_key(|r| r.id);
        let ids: Vec<usize> = sorted.iter().map(|r| r.id).collect();
        if ids != (0..PART_COUNT).collect::<Vec<_>>() {
            return Err(ModelError::WrongParts(format!("{ids:?}")));
        }
        Ok(Self {
            parts: sorted
                .into_iter()
                .map(|r| BodyPart {
                    id: r.id,
                    name: r.name,
                    position: Vector3::new(
                        T::lit(r.xyz_mm[0]),
                        T::lit(r.xyz_mm[1]),
                        T::lit(r.xyz_mm[2]),
                    ),
                })
                .collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let records: Vec<PartRecord> = serde_json::from_str(text)?;
        Self::from_records(&records)
    }
}

/// Model-frame offsets of every part at one instant of the gait.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState<T: Real> {
    /// Gait phase in `[0, 1)`.
    pub phase: T,
    /// Head rotation, radians.
    pub head_angle: T,
    /// Per-part model-frame offsets `Δ_i`, mm.
    pub offsets: Vec<Vector3<T>>,
}

impl<T: Real> DeformationState<T> {
    pub fn none(parts: usize) -> Self {
        Self {
            phase: T::zero(),
            head_angle: T::zero(),
            offsets: vec![Vector3::zeros(); parts],
        }
    }

    /// Deformed model-frame positions `X_i + Δ_i`.
    pub fn deformed_positions(&self, model: &RigidMouseModel<T>) -> Vec<Vector3<T>> {
        model
            .parts
            .iter()
            .zip(&self.offsets)
            .map(|(p, d)| p.position + d)
            .collect()
    }
}

/// Gait and head-motion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaitConfig {
    /// Frames per full pace cycle.
    pub cycle_frames: usize,
    /// Head nodding axis in the model frame (through the ear midpoint).
    pub head_axis: [f64; 3],
    /// Angle intervals (degrees) visited cyclically by the head.
    pub head_intervals_deg: Vec<[f64; 2]>,
    /// Frames spent sweeping back and forth inside one interval.
    pub head_sweep_frames: usize,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            cycle_frames: 10,
            head_axis: [1.0, 0.0, 0.0],
            head_intervals_deg: vec![[-15.0, -5.0], [-5.0, 5.0], [5.0, 15.0]],
            head_sweep_frames: 20,
        }
    }
}

/// Triangle wave with unit slope magnitude 4 per cycle: 0 at φ=0, +1 at
/// φ=¼, −1 at φ=¾.
fn pace_wave<T: Real>(phase: T) -> T {
    let q = T::lit(0.25);
    let four = T::lit(4.0);
    if phase <= q {
        four * phase
    } else if phase <= T::lit(0.75) {
        four * (T::lit(0.5) - phase)
    } else {
        four * (phase - T::one())
    }
}

impl GaitConfig {
    /// Gait phase of a frame.
    pub fn phase_at(&self, frame: usize) -> f64 {
        (frame % self.cycle_frames) as f64 / self.cycle_frames as f64
    }

    /// Head angle (radians) of a frame: linear back-and-forth sweep inside
    /// interval `(frame / sweep) mod count`.
    pub fn head_angle_at(&self, frame: usize) -> f64 {
        if self.head_intervals_deg.is_empty() || self.head_sweep_frames == 0 {
            return 0.0;
        }
        let sweep = self.head_sweep_frames;
        let [lo, hi] = self.head_intervals_deg[(frame / sweep) % self.head_intervals_deg.len()];
        let tau = (frame % sweep) as f64 / sweep as f64;
        let tri = 1.0 - (2.0 * tau - 1.0).abs();
        (lo + (hi - lo) * tri).to_radians()
    }

    /// Pace offsets plus head rotation.
    ///
    /// Over each half cycle one diagonal paw pair regresses at `body_speed`
    /// mm/frame in the model frame (stationary on the ground while the body
    /// advances along +Y) and the other pair advances at `body_speed`
    /// (twice the body speed in the world). At phase 0 every offset is zero.
    pub fn deform<T: Real>(
        &self,
        model: &RigidMouseModel<T>,
        phase: T,
        body_speed: T,
        head_angle: T,
    ) -> DeformationState<T> {
        let mut offsets = vec![Vector3::zeros(); model.len()];
        let amplitude = body_speed * T::lit(self.cycle_frames as f64) * T::lit(0.25);
        let w = pace_wave(phase) * amplitude;
        if w != T::zero() {
            for &i in &LEADING_PAWS {
                offsets[i].y = w;
            }
            for &i in &TRAILING_PAWS {
                offsets[i].y = -w;
            }
        }
        if head_angle != T::zero() {
            let axis = Unit::new_normalize(Vector3::new(
                T::lit(self.head_axis[0]),
                T::lit(self.head_axis[1]),
                T::lit(self.head_axis[2]),
            ));
            let rot = Rotation3::from_axis_angle(&axis, head_angle);
            let pivot = model.ear_midpoint();
            for &i in &HEAD_PARTS {
                let x = model.parts[i].position;
                offsets[i] = rot * (x - pivot) + pivot - x;
            }
        }
        DeformationState {
            phase,
            head_angle,
            offsets,
        }
    }

    /// Deformation at an integer frame.
    pub fn deform_at_frame<T: Real>(
        &self,
        model: &RigidMouseModel<T>,
        frame: usize,
        body_speed: T,
    ) -> DeformationState<T> {
        self.deform(
            model,
            T::lit(self.phase_at(frame)),
            body_speed,
            T::lit(self.head_angle_at(frame)),
        )
    }

    /// Peak model-frame paw offset for a given body speed, mm.
    pub fn paw_amplitude(&self, body_speed: f64) -> f64 {
        body_speed * self.cycle_frames as f64 * 0.25
    }
}
