//! Entity classes and the per-entity state record shared by every subsystem.

use serde::{Deserialize, Serialize};

use crate::geom::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityClass {
    Car,
    Bus,
    Truck,
    FireTruck,
    PoliceCar,
    Ambulance,
    Pedestrian,
    Uav,
    Uam,
    Barrier,
    Wreck,
    FallenTree,
}

impl EntityClass {
    pub const ALL: [EntityClass; 12] = [
        EntityClass::Car,
        EntityClass::Bus,
        EntityClass::Truck,
        EntityClass::FireTruck,
        EntityClass::PoliceCar,
        EntityClass::Ambulance,
        EntityClass::Pedestrian,
        EntityClass::Uav,
        EntityClass::Uam,
        EntityClass::Barrier,
        EntityClass::Wreck,
        EntityClass::FallenTree,
    ];

    /// Lane-bound motorised classes.
    pub fn is_vehicle(self) -> bool {
        matches!(
            self,
            EntityClass::Car
                | EntityClass::Bus
                | EntityClass::Truck
                | EntityClass::FireTruck
                | EntityClass::PoliceCar
                | EntityClass::Ambulance
        )
    }

    pub fn is_emergency(self) -> bool {
        matches!(
            self,
            EntityClass::FireTruck | EntityClass::PoliceCar | EntityClass::Ambulance
        )
    }

    pub fn is_aircraft(self) -> bool {
        matches!(self, EntityClass::Uav | EntityClass::Uam)
    }

    pub fn is_obstacle(self) -> bool {
        matches!(
            self,
            EntityClass::Barrier | EntityClass::Wreck | EntityClass::FallenTree
        )
    }

    /// Default body dimensions (length, width, height) in meters.
    pub fn default_bbox(self) -> BBox {
        let (length, width, height) = match self {
            EntityClass::Car => (4.5, 1.8, 1.5),
            EntityClass::Bus => (12.0, 2.5, 3.2),
            EntityClass::Truck => (8.0, 2.5, 3.5),
            EntityClass::FireTruck => (9.0, 2.5, 3.3),
            EntityClass::PoliceCar => (4.8, 1.9, 1.5),
            EntityClass::Ambulance => (6.0, 2.2, 2.6),
            EntityClass::Pedestrian => (0.5, 0.5, 1.75),
            EntityClass::Uav => (0.6, 0.6, 0.3),
            EntityClass::Uam => (6.0, 6.0, 2.0),
            EntityClass::Barrier => (1.0, 3.0, 1.0),
            EntityClass::Wreck => (4.5, 1.8, 1.5),
            EntityClass::FallenTree => (8.0, 0.6, 0.8),
        };
        BBox {
            length,
            width,
            height,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityClass::Car => "CAR",
            EntityClass::Bus => "BUS",
            EntityClass::Truck => "TRUCK",
            EntityClass::FireTruck => "FIRE_TRUCK",
            EntityClass::PoliceCar => "POLICE_CAR",
            EntityClass::Ambulance => "AMBULANCE",
            EntityClass::Pedestrian => "PEDESTRIAN",
            EntityClass::Uav => "UAV",
            EntityClass::Uam => "UAM",
            EntityClass::Barrier => "BARRIER",
            EntityClass::Wreck => "WRECK",
            EntityClass::FallenTree => "FALLEN_TREE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Controllable,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRef {
    pub lane: String,
    pub s: f64,
}

/// Externally visible state of one entity. This is what observations and
/// trace records carry; behaviour bookkeeping lives beside it in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub id: String,
    pub class: EntityClass,
    pub pose: Pose,
    /// Signed speed along heading for ground entities, 3-D norm for aircraft.
    pub speed: f64,
    pub velocity: Vec3,
    pub bbox: BBox,
    pub control: ControlMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lane_ref: Option<LaneRef>,
    pub priority: bool,
}
