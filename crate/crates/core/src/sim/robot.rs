//! Declarative quadruped description and the two models built from it: the
//! simulated plant and the deformable tree the controller predicts with.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::deformable::{DeformableBody, SpatialInertia, SubBodyParams, SubBodyState};
use crate::error::{Error, Result};
use crate::spatial::{Transform3, Twist};
use crate::tree::{DeformableTree, JointModel, JointState, TreeLink};

use super::plant::{ContactParams, FootPoint, Plant, PlantLink, Spine};

pub const LEG_NAMES: [&str; 4] = ["FL", "FR", "RL", "RR"];
pub const JOINTS_PER_LEG: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpineMode {
    Rigid,
    Compliant,
}

impl SpineMode {
    pub fn name(self) -> &'static str {
        match self {
            SpineMode::Rigid => "rigid",
            SpineMode::Compliant => "compliant",
        }
    }
}

impl std::str::FromStr for SpineMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(SpineMode::Rigid),
            "compliant" => Ok(SpineMode::Compliant),
            other => Err(Error::Config { key: "spine".into(), message: format!("expected rigid or compliant, got {other:?}") }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkSpec {
    /// Mass of each of the two trunk segments.
    pub segment_mass: f64,
    pub segment_size: [f64; 3],
    /// Front-left hip in the front segment frame; the others are mirrored.
    pub hip_offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpineSpec {
    pub stiffness: f64,
    pub rest_length: f64,
    pub min_length: f64,
    pub max_length: f64,
    /// Viscous damping; omitted means 10% of critical for the two halves.
    #[serde(default)]
    pub damping: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegSpec {
    pub abad_mass: f64,
    pub thigh_mass: f64,
    pub shank_mass: f64,
    /// Lateral offset from the ab/ad axis to the hip pitch axis.
    pub abad_length: f64,
    pub thigh_length: f64,
    pub shank_length: f64,
    pub link_radius: f64,
    pub joint_damping: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub stiffness: f64,
    pub damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    pub friction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotDescription {
    pub name: String,
    pub gravity: f64,
    /// Nominal trunk height above flat ground while standing.
    pub stance_height: f64,
    pub trunk: TrunkSpec,
    pub spine: SpineSpec,
    pub leg: LegSpec,
    pub contact: ContactSpec,
}

/// Findings of [`RobotDescription::validate`] that do not prevent a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RobotReport {
    pub total_mass: f64,
    pub spine_damping: f64,
    /// Rest length lies outside the travel bounds: the spring never relaxes.
    pub always_tensioned: bool,
    pub standing_knee: f64,
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(key, format!("must be positive, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(config_err(key, format!("must be nonnegative, got {v}")))
    }
}

fn rod(mass: f64, length: f64, radius: f64) -> Result<SubBodyParams<f64>> {
    let axial = 0.5 * mass * radius * radius;
    let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    SubBodyParams::new(
        mass,
        Vector3::new(0.0, 0.0, -0.5 * length),
        Matrix3::from_diagonal(&Vector3::new(transverse, transverse, axial)),
    )
}

impl Default for RobotDescription {
    fn default() -> Self {
        Self {
            name: "desk-quad".into(),
            gravity: -9.81,
            stance_height: 0.25,
            trunk: TrunkSpec { segment_mass: 4.0, segment_size: [0.14, 0.18, 0.07], hip_offset: [0.06, 0.07, 0.0] },
            spine: SpineSpec { stiffness: 36.0, rest_length: 0.18, min_length: 0.15, max_length: 0.21, damping: None },
            leg: LegSpec {
                abad_mass: 0.3,
                thigh_mass: 0.15,
                shank_mass: 0.05,
                abad_length: 0.03,
                thigh_length: 0.15,
                shank_length: 0.15,
                link_radius: 0.015,
                joint_damping: 0.01,
            },
            contact: ContactSpec {
                stiffness: 30_000.0,
                damping: 200.0,
                tangential_stiffness: 20_000.0,
                tangential_damping: 150.0,
                friction: 0.8,
            },
        }
    }
}

impl RobotDescription {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let d: Self = crate::error::parse_toml(text, "robot")?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("robot", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<RobotReport> {
        if !(self.gravity < 0.0) {
            return Err(config_err("gravity", "must be negative (z up)"));
        }
        positive("stance_height", self.stance_height)?;
        positive("trunk.segment_mass", self.trunk.segment_mass)?;
        for (i, s) in self.trunk.segment_size.iter().enumerate() {
            positive(&format!("trunk.segment_size[{i}]"), *s)?;
        }
        positive("spine.stiffness", self.spine.stiffness)?;
        positive("spine.rest_length", self.spine.rest_length)?;
        positive("spine.min_length", self.spine.min_length)?;
        if !(self.spine.max_length > self.spine.min_length) {
            return Err(config_err("spine.max_length", "must exceed spine.min_length"));
        }
        if let Some(c) = self.spine.damping {
            nonnegative("spine.damping", c)?;
        }
        let l = &self.leg;
        for (k, v) in [
            ("leg.abad_mass", l.abad_mass),
            ("leg.thigh_mass", l.thigh_mass),
            ("leg.shank_mass", l.shank_mass),
            ("leg.thigh_length", l.thigh_length),
            ("leg.shank_length", l.shank_length),
            ("leg.link_radius", l.link_radius),
        ] {
            positive(k, v)?;
        }
        nonnegative("leg.abad_length", l.abad_length)?;
        nonnegative("leg.joint_damping", l.joint_damping)?;
        let c = &self.contact;
        positive("contact.stiffness", c.stiffness)?;
        nonnegative("contact.damping", c.damping)?;
        positive("contact.tangential_stiffness", c.tangential_stiffness)?;
        nonnegative("contact.tangential_damping", c.tangential_damping)?;
        positive("contact.friction", c.friction)?;
        let reach = l.thigh_length + l.shank_length;
        let drop = self.stance_height - self.trunk.hip_offset[2];
        if !(drop < reach * 0.99) || drop <= (l.thigh_length - l.shank_length).abs() {
            return Err(config_err("stance_height", format!("hip-to-foot drop {drop:.3} m is outside the leg's reach")));
        }
        Ok(RobotReport {
            total_mass: self.total_mass(),
            spine_damping: self.spine_damping(),
            always_tensioned: self.spine.rest_length < self.spine.min_length || self.spine.rest_length > self.spine.max_length,
            standing_knee: self.standing_joint_angles()[2],
        })
    }

    pub fn leg_mass(&self) -> f64 {
        self.leg.abad_mass + self.leg.thigh_mass + self.leg.shank_mass
    }

    pub fn total_mass(&self) -> f64 {
        2.0 * self.trunk.segment_mass + 4.0 * self.leg_mass()
    }

    /// Mass carried by each side of the spine, legs included.
    pub fn half_mass(&self) -> f64 {
        self.trunk.segment_mass + 2.0 * self.leg_mass()
    }

    pub fn spine_damping(&self) -> f64 {
        self.spine.damping.unwrap_or_else(|| {
            let reduced = 0.5 * self.half_mass();
            0.1 * 2.0 * (self.spine.stiffness * reduced).sqrt()
        })
    }

    /// Ab/ad, hip and knee angles that put each foot under its hip pitch axis.
    pub fn standing_joint_angles(&self) -> [f64; 3] {
        let (l1, l2) = (self.leg.thigh_length, self.leg.shank_length);
        let d = self.stance_height - self.trunk.hip_offset[2];
        let knee = -((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0).acos();
        let hip = -(l2 * knee.sin()).atan2(l1 + l2 * knee.cos());
        [0.0, hip, knee]
    }

    fn segment(&self) -> Result<SubBodyParams<f64>> {
        let s = self.trunk.segment_size;
        SubBodyParams::uniform_box(self.trunk.segment_mass, Vector3::zeros(), Vector3::new(s[0], s[1], s[2]))
    }

    /// Hip mount of leg `i` in its trunk segment frame.
    fn hip_mount(&self, leg: usize) -> Vector3<f64> {
        let h = self.trunk.hip_offset;
        let sx = if leg < 2 { 1.0 } else { -1.0 };
        let sy = if leg % 2 == 0 { 1.0 } else { -1.0 };
        Vector3::new(sx * h[0], sy * h[1], h[2])
    }

    fn side(leg: usize) -> f64 {
        if leg % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Leg bodies with their joints: ab/ad about x, hip and knee about y.
    fn leg_chain(&self, leg: usize) -> Result<Vec<(SubBodyParams<f64>, JointModel<f64>)>> {
        let l = &self.leg;
        let side = Self::side(leg);
        let abad = SubBodyParams::uniform_box(
            l.abad_mass,
            Vector3::new(0.0, side * 0.5 * l.abad_length, 0.0),
            Vector3::new(2.0 * l.link_radius, l.abad_length.max(l.link_radius), 2.0 * l.link_radius),
        )?;
        let thigh = rod(l.thigh_mass, l.thigh_length, l.link_radius)?;
        let shank = rod(l.shank_mass, l.shank_length, l.link_radius)?;
        Ok(vec![
            (abad, JointModel::revolute(Vector3::x(), Transform3::from_translation(self.hip_mount(leg)), Transform3::identity())),
            (
                thigh,
                JointModel::revolute(
                    Vector3::y(),
                    Transform3::from_translation(Vector3::new(0.0, side * l.abad_length, 0.0)),
                    Transform3::identity(),
                ),
            ),
            (
                shank,
                JointModel::revolute(
                    Vector3::y(),
                    Transform3::from_translation(Vector3::new(0.0, 0.0, -l.thigh_length)),
                    Transform3::identity(),
                ),
            ),
        ])
    }

    /// Merged trunk of the rigid variant, segments held at the rest length.
    fn rigid_trunk(&self) -> Result<SubBodyParams<f64>> {
        let front = SpatialInertia::from_mass_com(self.trunk.segment_mass, &Vector3::zeros(), &self.segment()?.rot_inertia);
        let rear = SpatialInertia::from_mass_com(
            self.trunk.segment_mass,
            &Vector3::new(-self.spine.rest_length, 0.0, 0.0),
            &self.segment()?.rot_inertia,
        );
        let merged = front + rear;
        SubBodyParams::new(merged.mass(), merged.com(), merged.rotational_about_com())
    }

    pub fn build_plant(&self, mode: SpineMode) -> Result<Plant> {
        self.validate()?;
        let mut links = Vec::new();
        let mut spine = None;
        let base;
        match mode {
            SpineMode::Rigid => {
                let t = self.rigid_trunk()?;
                base = SpatialInertia::from_mass_com(t.mass, &t.com, &t.rot_inertia);
            }
            SpineMode::Compliant => {
                let f = self.segment()?;
                base = SpatialInertia::from_mass_com(f.mass, &f.com, &f.rot_inertia);
                let r = self.segment()?;
                links.push(PlantLink {
                    name: "rear".into(),
                    parent: 0,
                    joint: JointModel::prismatic(-Vector3::x(), Transform3::identity(), Transform3::identity()),
                    inertia: SpatialInertia::from_mass_com(r.mass, &r.com, &r.rot_inertia),
                });
                spine = Some(Spine {
                    link: 0,
                    stiffness: self.spine.stiffness,
                    damping: self.spine_damping(),
                    rest_length: self.spine.rest_length,
                    min_length: self.spine.min_length,
                    max_length: self.spine.max_length,
                });
            }
        }
        let mut feet = Vec::new();
        let mut leg_links = Vec::new();
        for leg in 0..4 {
            let rear = leg >= 2;
            let mut parent = match (mode, rear) {
                (SpineMode::Compliant, true) => 1,
                _ => 0,
            };
            let mut first = Vec::new();
            for (j, (params, mut joint)) in self.leg_chain(leg)?.into_iter().enumerate() {
                if j == 0 && rear && mode == SpineMode::Rigid {
                    joint.parent_mount.translation.x -= self.spine.rest_length;
                }
                let index = links.len();
                first.push(index);
                links.push(PlantLink {
                    name: format!("{}_{}", LEG_NAMES[leg], ["abad", "thigh", "shank"][j]),
                    parent,
                    joint,
                    inertia: SpatialInertia::from_mass_com(params.mass, &params.com, &params.rot_inertia),
                });
                parent = index + 1;
            }
            feet.push(FootPoint { body: parent, offset: Vector3::new(0.0, 0.0, -self.leg.shank_length) });
            leg_links.push(first);
        }
        let c = &self.contact;
        Ok(Plant {
            base,
            links,
            feet,
            leg_links,
            spine,
            gravity: self.gravity,
            joint_damping: self.leg.joint_damping,
            contact: ContactParams {
                stiffness: c.stiffness,
                damping: c.damping,
                tangential_stiffness: c.tangential_stiffness,
                tangential_damping: c.tangential_damping,
                friction: c.friction,
            },
            ground: true,
        })
    }

    /// Deformable tree matching the plant's current configuration.
    ///
    /// `spine` is the spine length and rate; `None` builds the rigid trunk.
    /// `legs[i]` holds the three joint angles and rates of leg `i`.
    pub fn prediction_tree(
        &self,
        spine: Option<(f64, f64)>,
        legs: &[[(f64, f64); 3]; 4],
        root_twist: Twist<f64>,
    ) -> Result<DeformableTree<f64>> {
        let root = match spine {
            None => DeformableBody::rigid(self.rigid_trunk()?)?,
            Some((l, rate)) => DeformableBody::new(
                vec![self.segment()?, self.segment()?],
                vec![
                    SubBodyState::anchor(),
                    SubBodyState::new(
                        Transform3::from_translation(Vector3::new(-l, 0.0, 0.0)),
                        Twist::new(Vector3::zeros(), Vector3::new(-rate, 0.0, 0.0)),
                    ),
                ],
            )?,
        };
        let mut tree = DeformableTree::new(root, root_twist);
        for leg in 0..4 {
            let rear = leg >= 2;
            let mut parent = 0;
            let mut parent_sub_body = usize::from(rear && spine.is_some());
            for (j, (params, mut joint)) in self.leg_chain(leg)?.into_iter().enumerate() {
                if j == 0 && rear && spine.is_none() {
                    joint.parent_mount.translation.x -= self.spine.rest_length;
                }
                let (q, qd) = legs[leg][j];
                parent = tree.add_body(
                    DeformableBody::rigid(params)?,
                    TreeLink { parent, parent_sub_body, joint, state: JointState::single(q, qd) },
                )?;
                parent_sub_body = 0;
            }
        }
        Ok(tree)
    }
}
