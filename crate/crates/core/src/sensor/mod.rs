//! Cameras mounted on infrastructure or entities, producing aligned RGB,
//! semantic and depth frames from a ray-cast box world.

mod export;
mod render;

pub use export::{dpt_bytes, export_frame, frame_file_name, pgm_bytes, ppm_bytes, read_dpt};
pub use render::{
    brute_force_hits, build_primitives, render, render_hits, Hit, Primitive, PrimitiveShape,
    SceneView,
};

use serde::{Deserialize, Serialize};

use crate::entity::{EntityClass, EntityState};
use crate::geom::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Modality {
    Rgb,
    Semantic,
    Depth,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Semantic, Modality::Depth];

    pub fn file_stem(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Semantic => "semantic",
            Modality::Depth => "depth",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Modality::Rgb => "ppm",
            Modality::Semantic => "pgm",
            Modality::Depth => "dpt",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s.to_ascii_uppercase().as_str() {
            "RGB" => Some(Modality::Rgb),
            "SEMANTIC" => Some(Modality::Semantic),
            "DEPTH" => Some(Modality::Depth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mount {
    Fixed(Pose),
    Entity {
        entity: String,
        #[serde(default)]
        offset: Pose,
    },
}

fn default_far() -> f64 {
    500.0
}
fn default_near() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub id: String,
    pub mount: Mount,
    pub width: u32,
    pub height: u32,
    pub hfov: f64,
    /// Elevation of the optical axis in radians; negative looks down.
    #[serde(default)]
    pub pitch: f64,
    pub modalities: Vec<Modality>,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

pub const MAX_RESOLUTION: u32 = 4096;

impl CameraSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=MAX_RESOLUTION).contains(&self.width) || !(1..=MAX_RESOLUTION).contains(&self.height) {
            return Err(format!(
                "resolution {}x{} outside 1..={MAX_RESOLUTION}",
                self.width, self.height
            ));
        }
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI) {
            return Err(format!("hfov {} outside (0, pi)", self.hfov));
        }
        if !(self.near > 0.0) {
            return Err("near must be positive".into());
        }
        if !(self.far > self.near && self.far.is_finite()) {
            return Err("far must be finite and greater than near".into());
        }
        if self.modalities.is_empty() {
            return Err("modalities must be non-empty".into());
        }
        if !(self.pitch.abs() < std::f64::consts::FRAC_PI_2) {
            return Err("pitch must be inside (-pi/2, pi/2)".into());
        }
        Ok(())
    }

    pub fn focal_px(&self) -> f64 {
        (f64::from(self.width) / 2.0) / (self.hfov / 2.0).tan()
    }

    pub fn no_hit(&self) -> f32 {
        (self.far * 2.0) as f32
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SensorError {
    #[error("UnknownMountEntity: `{0}`")]
    UnknownMountEntity(String),
    #[error("UnknownCamera: `{0}`")]
    UnknownCamera(String),
    #[error("IoFailure: {0}")]
    Io(String),
}

/// Semantic class ids. Appended, never renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SemanticClass {
    Void = 0,
    Ground = 1,
    Road = 2,
    Marking = 3,
    Building = 4,
    Car = 5,
    Bus = 6,
    Truck = 7,
    Emergency = 8,
    Pedestrian = 9,
    Uav = 10,
    Uam = 11,
    Barrier = 12,
    Wreck = 13,
    FallenTree = 14,
}

impl SemanticClass {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn of_entity(class: EntityClass) -> SemanticClass {
        match class {
            EntityClass::Car => SemanticClass::Car,
            EntityClass::Bus => SemanticClass::Bus,
            EntityClass::Truck => SemanticClass::Truck,
            EntityClass::FireTruck | EntityClass::PoliceCar | EntityClass::Ambulance => {
                SemanticClass::Emergency
            }
            EntityClass::Pedestrian => SemanticClass::Pedestrian,
            EntityClass::Uav => SemanticClass::Uav,
            EntityClass::Uam => SemanticClass::Uam,
            EntityClass::Barrier => SemanticClass::Barrier,
            EntityClass::Wreck => SemanticClass::Wreck,
            EntityClass::FallenTree => SemanticClass::FallenTree,
        }
    }

    /// Display color, also the unlit base color in RGB renders.
    pub fn color(self) -> [u8; 3] {
        match self {
            SemanticClass::Void => [135, 170, 215],
            SemanticClass::Ground => [96, 118, 72],
            SemanticClass::Road => [72, 72, 78],
            SemanticClass::Marking => [236, 236, 228],
            SemanticClass::Building => [152, 140, 128],
            SemanticClass::Car => [32, 92, 200],
            SemanticClass::Bus => [230, 172, 32],
            SemanticClass::Truck => [140, 82, 42],
            SemanticClass::Emergency => [220, 32, 32],
            SemanticClass::Pedestrian => [240, 122, 180],
            SemanticClass::Uav => [40, 200, 200],
            SemanticClass::Uam => [122, 62, 200],
            SemanticClass::Barrier => [255, 140, 0],
            SemanticClass::Wreck => [82, 62, 62],
            SemanticClass::FallenTree => [62, 122, 42],
        }
    }
}

/// Orthonormal camera basis (forward, left, up) for a heading and pitch.
pub fn camera_basis(heading: f64, pitch: f64) -> (Vec3, Vec3, Vec3) {
    let (st, ct) = heading.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let f = [ct * cp, st * cp, sp];
    let l = [-st, ct, 0.0];
    let u = [-ct * sp, -st * sp, cp];
    (f, l, u)
}

/// World pose of a camera. Entity mounts compose the body pose with the offset.
pub fn resolve_camera_pose<'a>(
    spec: &CameraSpec,
    mut lookup: impl FnMut(&str) -> Option<&'a EntityState>,
) -> Result<Pose, SensorError> {
    match &spec.mount {
        Mount::Fixed(p) => Ok(*p),
        Mount::Entity { entity, offset } => lookup(entity)
            .map(|e| e.pose.compose(offset))
            .ok_or_else(|| SensorError::UnknownMountEntity(entity.clone())),
    }
}

/// Pinhole projection of a world point: pixel (u, v) and perpendicular depth.
pub fn project(
    pose: &Pose,
    pitch: f64,
    hfov: f64,
    width: u32,
    height: u32,
    near: f64,
    point: Vec3,
) -> Option<(u32, u32, f64)> {
    let (f, l, u) = camera_basis(pose.heading, pitch);
    let d = [point[0] - pose.x, point[1] - pose.y, point[2] - pose.z];
    let dot = |a: Vec3| a[0] * d[0] + a[1] * d[1] + a[2] * d[2];
    let (xc, yc, zc) = (dot(f), dot(l), dot(u));
    if xc <= near {
        return None;
    }
    let focal = (f64::from(width) / 2.0) / (hfov / 2.0).tan();
    let pu = (f64::from(width) / 2.0 + focal * (-yc / xc)).floor();
    let pv = (f64::from(height) / 2.0 - focal * (zc / xc)).floor();
    if pu < 0.0 || pv < 0.0 || pu >= f64::from(width) || pv >= f64::from(height) {
        return None;
    }
    Some((pu as u32, pv as u32, xc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub camera_id: String,
    pub tick: u64,
    pub camera_pose: Pose,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Vec<f32>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::{BBox, ControlMode};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cam(w: u32) -> CameraSpec {
        CameraSpec {
            id: "c".into(),
            mount: Mount::Fixed(Pose::default()),
            width: w,
            height: w,
            hfov: FRAC_PI_2,
            pitch: 0.0,
            modalities: vec![Modality::Depth],
            near: 0.1,
            far: 100.0,
        }
    }

    #[test]
    fn validation_bounds() {
        assert!(cam(64).validate().is_ok());
        assert!(cam(0).validate().is_err());
        assert!(cam(4097).validate().is_err());
        let mut c = cam(64);
        c.hfov = PI;
        assert!(c.validate().is_err());
        let mut c = cam(64);
        c.far = c.near;
        assert!(c.validate().is_err());
        let mut c = cam(64);
        c.modalities.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn projection_examples() {
        let p = Pose::default();
        assert_eq!(project(&p, 0.0, FRAC_PI_2, 64, 64, 0.1, [10.0, 0.0, 0.0]), Some((32, 32, 10.0)));
        assert_eq!(project(&p, 0.0, FRAC_PI_2, 64, 64, 0.1, [10.0, -10.0, 0.0]), None);
        let (u, v, d) = project(&p, 0.0, FRAC_PI_2, 64, 64, 0.1, [10.0, -2.0, 0.0]).unwrap();
        assert_eq!((u, v, d), (38, 32, 10.0));
        assert_eq!(project(&p, 0.0, FRAC_PI_2, 64, 64, 0.1, [-5.0, 0.0, 0.0]), None);
    }

    #[test]
    fn mount_resolution() {
        let body = EntityState {
            id: "car".into(),
            class: EntityClass::Car,
            pose: Pose::new(10.0, 0.0, 0.0, 0.0),
            speed: 0.0,
            velocity: [0.0; 3],
            bbox: BBox {
                length: 4.5,
                width: 1.8,
                height: 1.5,
            },
            control: ControlMode::Background,
            lane_ref: None,
            priority: false,
        };
        let mut spec = cam(8);
        spec.mount = Mount::Entity {
            entity: "car".into(),
            offset: Pose::new(2.0, 0.0, 1.5, 0.0),
        };
        let p = resolve_camera_pose(&spec, |id| (id == "car").then_some(&body)).unwrap();
        assert_eq!(p, Pose::new(12.0, 0.0, 1.5, 0.0));
        let mut turned = body.clone();
        turned.pose.heading = FRAC_PI_2;
        let p = resolve_camera_pose(&spec, |_| Some(&turned)).unwrap();
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
        assert_eq!(p.heading, FRAC_PI_2);
        assert_eq!(
            resolve_camera_pose(&spec, |_| None),
            Err(SensorError::UnknownMountEntity("car".into()))
        );
        let fixed = cam(8);
        assert_eq!(resolve_camera_pose(&fixed, |_| None).unwrap(), Pose::default());
    }

    #[test]
    fn basis_is_orthonormal() {
        for &(h, p) in &[(0.0, 0.0), (1.0, -0.5), (-2.5, 1.2)] {
            let (f, l, u) = camera_basis(h, p);
            let dot = |a: Vec3, b: Vec3| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            assert!((dot(f, f) - 1.0).abs() < 1e-12);
            assert!(dot(f, l).abs() < 1e-12 && dot(f, u).abs() < 1e-12 && dot(l, u).abs() < 1e-12);
            // right-handed: f x l = u
            let c = [f[1] * l[2] - f[2] * l[1], f[2] * l[0] - f[0] * l[2], f[0] * l[1] - f[1] * l[0]];
            assert!((c[0] - u[0]).abs() < 1e-12 && (c[2] - u[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn palette_ids_are_stable() {
        assert_eq!(SemanticClass::Void.id(), 0);
        assert_eq!(SemanticClass::Building.id(), 4);
        assert_eq!(SemanticClass::of_entity(EntityClass::Ambulance).id(), 8);
        assert_eq!(SemanticClass::FallenTree.id(), 14);
    }
}
