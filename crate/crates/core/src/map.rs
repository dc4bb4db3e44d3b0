//! Static world geometry: lanes, intersections, signal plans and buildings,
//! loaded from a JSON map document and validated once.
//!
//! Lanes are polylines parameterised by arc length. Positive lateral offsets
//! are to the left of the direction of travel. A vertex belongs to the segment
//! that starts at it.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::entity::EntityClass;
use crate::geom::{normalize_angle, project_on_segment, Pose};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MapError {
    #[error("cannot read map file: {0}")]
    Io(String),
    #[error("malformed map file: {0}")]
    MalformedFile(String),
    #[error("dangling reference in {context}: unknown {kind} `{id}`")]
    DanglingReference {
        context: String,
        kind: &'static str,
        id: String,
    },
    #[error("invalid geometry for `{id}`: {reason}")]
    InvalidGeometry { id: String, reason: String },
    #[error(
        "signal plan `{intersection}` phase {phase} contains conflicting movements {a} and {b}"
    )]
    ConflictViolation {
        intersection: String,
        phase: usize,
        a: usize,
        b: usize,
    },
    #[error("{0} out of range")]
    OutOfRange(String),
    #[error("network has no lanes")]
    EmptyNetwork,
}

// ---- on-disk schema -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    #[serde(default)]
    pub lanes: Vec<LaneDef>,
    #[serde(default)]
    pub intersections: Vec<IntersectionDef>,
    #[serde(default)]
    pub signal_plans: Vec<SignalPlanDef>,
    #[serde(default)]
    pub buildings: Vec<BuildingDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneDef {
    pub id: String,
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
    pub speed_limit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_classes: Option<Vec<EntityClass>>,
    #[serde(default)]
    pub successors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionDef {
    pub id: String,
    #[serde(default)]
    pub incoming: Vec<String>,
    #[serde(default)]
    pub outgoing: Vec<String>,
    pub movements: Vec<(String, String)>,
    /// Unordered conflicting movement index pairs.
    #[serde(default)]
    pub conflicts: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalPlanDef {
    pub intersection: String,
    pub phases: Vec<PhaseDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDef {
    pub movements: Vec<usize>,
    pub duration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingDef {
    pub id: String,
    pub center: [f64; 2],
    pub length: f64,
    pub width: f64,
    #[serde(default)]
    pub rotation: f64,
    pub height: f64,
}

// ---- validated network ----------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub centerline: Vec<[f64; 2]>,
    pub width: f64,
    pub speed_limit: f64,
    pub allowed_classes: BTreeSet<EntityClass>,
    pub successors: Vec<String>,
    pub left: Option<String>,
    pub right: Option<String>,
    cum: Vec<f64>,
    headings: Vec<f64>,
}

impl Lane {
    pub fn new(def: &LaneDef) -> Result<Lane, MapError> {
        let geom_err = |reason: String| MapError::InvalidGeometry {
            id: def.id.clone(),
            reason,
        };
        if def.centerline.len() < 2 {
            return Err(geom_err("centerline needs at least two points".into()));
        }
        if !(def.width > 0.0) {
            return Err(geom_err(format!("nonpositive width {}", def.width)));
        }
        if !(def.speed_limit > 0.0) {
            return Err(geom_err(format!(
                "nonpositive speed limit {}",
                def.speed_limit
            )));
        }
        let mut cum = vec![0.0];
        let mut headings = Vec::with_capacity(def.centerline.len() - 1);
        for (i, w) in def.centerline.windows(2).enumerate() {
            if !(w[0][0].is_finite() && w[0][1].is_finite() && w[1][0].is_finite() && w[1][1].is_finite()) {
                return Err(geom_err(format!("non-finite point near vertex {i}")));
            }
            let dx = w[1][0] - w[0][0];
            let dy = w[1][1] - w[0][1];
            let len = (dx * dx + dy * dy).sqrt();
            if len <= 0.0 {
                return Err(geom_err(format!("zero-length segment {i}")));
            }
            cum.push(cum[i] + len);
            headings.push(normalize_angle(dy.atan2(dx)));
        }
        let allowed_classes = match &def.allowed_classes {
            Some(c) => c.iter().copied().collect(),
            None => EntityClass::ALL
                .iter()
                .copied()
                .filter(|c| c.is_vehicle())
                .collect(),
        };
        Ok(Lane {
            id: def.id.clone(),
            centerline: def.centerline.clone(),
            width: def.width,
            speed_limit: def.speed_limit,
            allowed_classes,
            successors: def.successors.clone(),
            left: def.left.clone(),
            right: def.right.clone(),
            cum,
            headings,
        })
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().expect("lane has segments")
    }

    fn segment_at(&self, s: f64) -> usize {
        let n = self.headings.len();
        // partition_point gives the first cum > s; the containing segment is one before
        let i = self.cum.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(n - 1)
    }

    /// Position and heading at arc length `s` (clamped to the lane) with a
    /// lateral offset.
    pub fn pose_at(&self, s: f64, lateral: f64) -> Pose {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let a = self.centerline[i];
        let b = self.centerline[i + 1];
        let seg = self.cum[i + 1] - self.cum[i];
        let t = (s - self.cum[i]) / seg;
        let dx = (b[0] - a[0]) / seg;
        let dy = (b[1] - a[1]) / seg;
        Pose {
            x: a[0] + t * (b[0] - a[0]) - lateral * dy,
            y: a[1] + t * (b[1] - a[1]) + lateral * dx,
            z: 0.0,
            heading: self.headings[i],
        }
    }

    /// Closest point on the centerline: (s, distance). Earliest segment wins ties.
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for (i, w) in self.centerline.windows(2).enumerate() {
            let (t, d) = project_on_segment(p, w[0], w[1]);
            if d < best.1 {
                best = (self.cum[i] + t * (self.cum[i + 1] - self.cum[i]), d);
            }
        }
        best
    }

    pub fn end_point(&self) -> [f64; 2] {
        *self.centerline.last().expect("lane has points")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub incoming: Vec<String>,
    pub outgoing: Vec<String>,
    pub movements: Vec<(String, String)>,
    conflict: Vec<Vec<bool>>,
    pub center: [f64; 2],
}

impl Intersection {
    pub fn conflicts(&self, a: usize, b: usize) -> bool {
        self.conflict[a][b]
    }

    pub fn movement_index(&self, from: &str, to: &str) -> Option<usize> {
        self.movements
            .iter()
            .position(|(f, t)| f == from && t == to)
    }

    /// Indices of all conflicting pairs inside `set`, exhaustive.
    pub fn conflicting_pairs(&self, set: &[usize]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, &a) in set.iter().enumerate() {
            for &b in &set[i + 1..] {
                if self.conflict[a][b] {
                    out.push((a.min(b), a.max(b)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub movements: Vec<usize>,
    pub duration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub intersection_id: String,
    pub phases: Vec<Phase>,
}

impl SignalPlan {
    pub fn cycle(&self) -> u64 {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Building {
    pub id: String,
    pub center: [f64; 2],
    pub length: f64,
    pub width: f64,
    pub rotation: f64,
    pub height: f64,
}

/// Immutable after load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadNetwork {
    pub lanes: BTreeMap<String, Lane>,
    pub intersections: BTreeMap<String, Intersection>,
    pub signal_plans: Vec<SignalPlan>,
    pub buildings: Vec<Building>,
    /// incoming lane id → intersection id
    approach_of: BTreeMap<String, String>,
    /// movement target lane id → (intersection id, movement index)
    inside_of: BTreeMap<String, (String, usize)>,
    source: MapFile,
}

pub fn load_network(path: &Path) -> Result<RoadNetwork, MapError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MapError::Io(format!("{}: {e}", path.display())))?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<RoadNetwork, MapError> {
    let file: MapFile =
        serde_json::from_str(text).map_err(|e| MapError::MalformedFile(e.to_string()))?;
    RoadNetwork::from_map_file(file)
}

impl RoadNetwork {
    pub fn from_map_file(file: MapFile) -> Result<RoadNetwork, MapError> {
        let mut lanes = BTreeMap::new();
        for def in &file.lanes {
            let lane = Lane::new(def)?;
            if lanes.insert(def.id.clone(), lane).is_some() {
                return Err(MapError::MalformedFile(format!(
                    "duplicate lane id `{}`",
                    def.id
                )));
            }
        }
        let dangling = |context: String, kind: &'static str, id: &str| MapError::DanglingReference {
            context,
            kind,
            id: id.to_string(),
        };
        for lane in lanes.values() {
            for s in &lane.successors {
                if !lanes.contains_key(s) {
                    return Err(dangling(format!("lane `{}` successors", lane.id), "lane", s));
                }
            }
            for adj in lane.left.iter().chain(lane.right.iter()) {
                if !lanes.contains_key(adj) {
                    return Err(dangling(format!("lane `{}` adjacency", lane.id), "lane", adj));
                }
            }
        }

        let mut intersections = BTreeMap::new();
        let mut approach_of = BTreeMap::new();
        let mut inside_of = BTreeMap::new();
        for def in &file.intersections {
            let ctx = format!("intersection `{}`", def.id);
            for l in def.incoming.iter().chain(def.outgoing.iter()) {
                if !lanes.contains_key(l) {
                    return Err(dangling(ctx.clone(), "lane", l));
                }
            }
            for (from, to) in &def.movements {
                for l in [from, to] {
                    if !lanes.contains_key(l) {
                        return Err(dangling(format!("{ctx} movements"), "lane", l));
                    }
                }
            }
            let n = def.movements.len();
            let mut conflict = vec![vec![false; n]; n];
            for &(a, b) in &def.conflicts {
                if a >= n || b >= n {
                    return Err(dangling(
                        format!("{ctx} conflicts"),
                        "movement index",
                        &a.max(b).to_string(),
                    ));
                }
                if a == b {
                    return Err(MapError::MalformedFile(format!(
                        "{ctx}: movement {a} declared in conflict with itself"
                    )));
                }
                conflict[a][b] = true;
                conflict[b][a] = true;
            }
            let mut center = [0.0, 0.0];
            let mut k = 0.0;
            let from_lanes: BTreeSet<&String> = def
                .incoming
                .iter()
                .chain(def.movements.iter().map(|(f, _)| f))
                .collect();
            for l in &from_lanes {
                let p = lanes[l.as_str()].end_point();
                center[0] += p[0];
                center[1] += p[1];
                k += 1.0;
            }
            if k > 0.0 {
                center = [center[0] / k, center[1] / k];
            }
            for l in from_lanes {
                approach_of.insert(l.clone(), def.id.clone());
            }
            for (i, (_, to)) in def.movements.iter().enumerate() {
                inside_of.entry(to.clone()).or_insert((def.id.clone(), i));
            }
            let inter = Intersection {
                id: def.id.clone(),
                incoming: def.incoming.clone(),
                outgoing: def.outgoing.clone(),
                movements: def.movements.clone(),
                conflict,
                center,
            };
            if intersections.insert(def.id.clone(), inter).is_some() {
                return Err(MapError::MalformedFile(format!(
                    "duplicate intersection id `{}`",
                    def.id
                )));
            }
        }

        let mut signal_plans = Vec::new();
        let mut planned = BTreeSet::new();
        for def in &file.signal_plans {
            let inter = intersections
                .get(&def.intersection)
                .ok_or_else(|| dangling("signal_plans".into(), "intersection", &def.intersection))?;
            if !planned.insert(def.intersection.clone()) {
                return Err(MapError::MalformedFile(format!(
                    "more than one signal plan for `{}`",
                    def.intersection
                )));
            }
            if def.phases.is_empty() {
                return Err(MapError::MalformedFile(format!(
                    "signal plan `{}` has no phases",
                    def.intersection
                )));
            }
            for (pi, phase) in def.phases.iter().enumerate() {
                if phase.duration == 0 {
                    return Err(MapError::MalformedFile(format!(
                        "signal plan `{}` phase {pi} has zero duration",
                        def.intersection
                    )));
                }
                for &m in &phase.movements {
                    if m >= inter.movements.len() {
                        return Err(dangling(
                            format!("signal plan `{}` phase {pi}", def.intersection),
                            "movement index",
                            &m.to_string(),
                        ));
                    }
                }
                if let Some(&(a, b)) = inter.conflicting_pairs(&phase.movements).first() {
                    return Err(MapError::ConflictViolation {
                        intersection: def.intersection.clone(),
                        phase: pi,
                        a,
                        b,
                    });
                }
            }
            signal_plans.push(SignalPlan {
                intersection_id: def.intersection.clone(),
                phases: def
                    .phases
                    .iter()
                    .map(|p| Phase {
                        movements: p.movements.clone(),
                        duration: p.duration,
                    })
                    .collect(),
            });
        }

        let mut buildings = Vec::new();
        for def in &file.buildings {
            if !(def.height > 0.0) || !(def.length > 0.0) || !(def.width > 0.0) {
                return Err(MapError::InvalidGeometry {
                    id: def.id.clone(),
                    reason: "building footprint and height must be positive".into(),
                });
            }
            buildings.push(Building {
                id: def.id.clone(),
                center: def.center,
                length: def.length,
                width: def.width,
                rotation: def.rotation,
                height: def.height,
            });
        }

        Ok(RoadNetwork {
            lanes,
            intersections,
            signal_plans,
            buildings,
            approach_of,
            inside_of,
            source: file,
        })
    }

    /// The document this network was built from.
    pub fn map_file(&self) -> &MapFile {
        &self.source
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty() && self.buildings.is_empty()
    }

    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.get(id)
    }

    pub fn plan_for(&self, intersection: &str) -> Option<&SignalPlan> {
        self.signal_plans
            .iter()
            .find(|p| p.intersection_id == intersection)
    }

    /// Intersection a lane feeds into, if any.
    pub fn approach_of(&self, lane: &str) -> Option<&Intersection> {
        self.approach_of
            .get(lane)
            .and_then(|id| self.intersections.get(id))
    }

    /// Intersection and movement whose target is this lane.
    pub fn inside_of(&self, lane: &str) -> Option<(&Intersection, usize)> {
        self.inside_of
            .get(lane)
            .and_then(|(id, m)| self.intersections.get(id).map(|i| (i, *m)))
    }

    /// `b` directly follows `a` in the successor graph.
    pub fn connected(&self, a: &str, b: &str) -> bool {
        self.lanes
            .get(a)
            .is_some_and(|l| l.successors.iter().any(|s| s == b))
    }

    /// `b` is the left or right neighbour of `a`.
    pub fn adjacent(&self, a: &str, b: &str) -> bool {
        self.lanes.get(a).is_some_and(|l| {
            l.left.as_deref() == Some(b) || l.right.as_deref() == Some(b)
        })
    }

    /// Every conflicting pair inside every phase of every plan.
    pub fn conflict_violations(&self) -> Vec<(String, usize, usize, usize)> {
        let mut out = Vec::new();
        for plan in &self.signal_plans {
            let inter = &self.intersections[&plan.intersection_id];
            for (pi, phase) in plan.phases.iter().enumerate() {
                for (a, b) in inter.conflicting_pairs(&phase.movements) {
                    out.push((plan.intersection_id.clone(), pi, a, b));
                }
            }
        }
        out
    }
}

/// World pose at arc length `s` and lateral offset on a lane, with bounds checks.
pub fn lane_to_world(lane: &Lane, s: f64, lateral: f64) -> Result<Pose, MapError> {
    if !(0.0..=lane.length()).contains(&s) {
        return Err(MapError::OutOfRange(format!(
            "s={s} on lane `{}` of length {}",
            lane.id,
            lane.length()
        )));
    }
    if !(lateral.abs() <= lane.width / 2.0) {
        return Err(MapError::OutOfRange(format!(
            "lateral={lateral} on lane `{}` of width {}",
            lane.id, lane.width
        )));
    }
    Ok(lane.pose_at(s, lateral))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearestLane {
    pub lane: String,
    pub s: f64,
    pub distance: f64,
}

/// Lane with the smallest perpendicular distance to `point`; ties go to the
/// lexicographically smallest id.
pub fn nearest_lane(network: &RoadNetwork, point: [f64; 2]) -> Result<NearestLane, MapError> {
    let mut best: Option<NearestLane> = None;
    for (id, lane) in &network.lanes {
        let (s, distance) = lane.project(point);
        if best.as_ref().map_or(true, |b| distance < b.distance) {
            best = Some(NearestLane {
                lane: id.clone(),
                s,
                distance,
            });
        }
    }
    best.ok_or(MapError::EmptyNetwork)
}
