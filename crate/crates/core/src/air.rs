//! Kinematic point-mass aircraft: velocity-command flight, waypoint following
//! and pairwise separation checks.

use serde::{Deserialize, Serialize};

use crate::entity::EntityClass;
use crate::geom::{dist2, norm3, normalize_angle, scale3, sub3, Pose, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirState {
    pub pose: Pose,
    pub velocity: Vec3,
    pub v_max: f64,
    pub a_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub kind: EntityClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirCommand {
    pub target_velocity: Vec3,
}

impl AirCommand {
    pub const HOVER: AirCommand = AirCommand {
        target_velocity: [0.0, 0.0, 0.0],
    };

    pub fn is_finite(&self) -> bool {
        self.target_velocity.iter().all(|c| c.is_finite())
    }
}

/// Per-kind defaults: (v_max, a_max, z_min, z_max).
pub fn kind_defaults(kind: EntityClass) -> (f64, f64, f64, f64) {
    match kind {
        EntityClass::Uam => (40.0, 3.0, 150.0, 300.0),
        _ => (15.0, 4.0, 30.0, 120.0),
    }
}

/// Headings below this horizontal speed are held.
const HEADING_MIN_SPEED: f64 = 0.1;

/// Advance one step: clip the command to `v_max`, slew velocity by at most
/// `a_max * dt`, then integrate position with the new velocity.
pub fn air_step(state: &AirState, cmd: &AirCommand, dt: f64) -> AirState {
    let mut desired = cmd.target_velocity;
    let n = norm3(desired);
    if n > state.v_max {
        desired = scale3(desired, state.v_max / n);
    }
    let mut dv = sub3(desired, state.velocity);
    let dv_norm = norm3(dv);
    let dv_cap = state.a_max * dt;
    if dv_norm > dv_cap {
        dv = scale3(dv, dv_cap / dv_norm);
    }
    let v = [
        state.velocity[0] + dv[0],
        state.velocity[1] + dv[1],
        state.velocity[2] + dv[2],
    ];
    let horizontal = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let heading = if horizontal > HEADING_MIN_SPEED {
        normalize_angle(v[1].atan2(v[0]))
    } else {
        state.pose.heading
    };
    let mut next = state.clone();
    next.velocity = v;
    next.pose = Pose {
        x: state.pose.x + v[0] * dt,
        y: state.pose.y + v[1] * dt,
        z: (state.pose.z + v[2] * dt).clamp(0.0, state.z_max),
        heading,
    };
    next
}

/// Steer toward the current waypoint. Returns the command and the updated
/// waypoint index; past the last waypoint the command is hover.
pub fn waypoint_controller(
    state: &AirState,
    waypoints: &[Vec3],
    index: usize,
    arrive_radius: f64,
    dt_nominal: f64,
) -> (AirCommand, usize) {
    let pos = state.pose.position();
    let mut index = index;
    while index < waypoints.len() && norm3(sub3(waypoints[index], pos)) <= arrive_radius {
        index += 1;
    }
    if index >= waypoints.len() {
        return (AirCommand::HOVER, index);
    }
    let d = sub3(waypoints[index], pos);
    let dist = norm3(d);
    let speed = state.v_max.min(dist / dt_nominal);
    (
        AirCommand {
            target_velocity: scale3(d, speed / dist),
        },
        index,
    )
}

/// All pairs closer than `h_min` horizontally and `v_min` vertically, as
/// (smaller id, larger id), sorted.
pub fn separation_violations(
    aircraft: &[(&str, Vec3)],
    h_min: f64,
    v_min: f64,
) -> Vec<(String, String)> {
    // sweep along x; only pairs within h_min in x can violate
    let mut order: Vec<usize> = (0..aircraft.len()).collect();
    order.sort_by(|&a, &b| aircraft[a].1[0].total_cmp(&aircraft[b].1[0]));
    let mut out = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        let (ida, pa) = aircraft[a];
        for &b in &order[i + 1..] {
            let (idb, pb) = aircraft[b];
            if pb[0] - pa[0] >= h_min {
                break;
            }
            if dist2([pa[0], pa[1]], [pb[0], pb[1]]) < h_min && (pa[2] - pb[2]).abs() < v_min {
                let (x, y) = if ida <= idb { (ida, idb) } else { (idb, ida) };
                out.push((x.to_string(), y.to_string()));
            }
        }
    }
    out.sort();
    out
}
