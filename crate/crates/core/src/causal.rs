//! Config-declared scene edits (weather, closures, accidents, fallen trees,
//! emergency dispatch), their activation inside the tick loop, and
//! single-factor counterfactual pairing.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use crate::config::{check_route, Report, ScenarioConfig};
use crate::entity::{BBox, EntityClass};
use crate::geom::{normalize_angle, Pose};
use crate::ground::serving_phase;
use crate::map::RoadNetwork;
use crate::sim::{Blockage, Entity, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    #[default]
    Clear,
    Cloudy,
    Rain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TimeOfDay {
    #[default]
    Day,
    Dusk,
    Night,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WeatherState {
    pub condition: Condition,
    pub time_of_day: TimeOfDay,
    #[serde(default)]
    pub rain_intensity: f64,
}

impl WeatherState {
    pub fn rain(intensity: f64, time_of_day: TimeOfDay) -> Self {
        WeatherState {
            condition: Condition::Rain,
            time_of_day,
            rain_intensity: intensity,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.rain_intensity) {
            return Err(format!(
                "rain_intensity must be in [0,1], got {}",
                self.rain_intensity
            ));
        }
        let raining = self.condition == Condition::Rain;
        if raining != (self.rain_intensity > 0.0) {
            return Err("rain_intensity must be positive exactly when condition is RAIN".into());
        }
        Ok(())
    }

    /// Short label used in observations, e.g. `RAIN/DUSK`.
    pub fn tag(&self) -> String {
        let c = match self.condition {
            Condition::Clear => "CLEAR",
            Condition::Cloudy => "CLOUDY",
            Condition::Rain => "RAIN",
        };
        let t = match self.time_of_day {
            TimeOfDay::Day => "DAY",
            TimeOfDay::Dusk => "DUSK",
            TimeOfDay::Night => "NIGHT",
        };
        format!("{c}/{t}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    WeatherChange(WeatherState),
    RoadClosure {
        lane: String,
        s_start: f64,
        s_end: f64,
    },
    Accident {
        lane: String,
        s: f64,
        wrecks: u32,
    },
    FallenTree {
        position: [f64; 2],
        length: f64,
        lanes: Vec<String>,
    },
    EmergencyDispatch {
        class: EntityClass,
        route: Vec<String>,
        #[serde(default = "yes")]
        priority: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub id: String,
    pub start_tick: u64,
    /// Active on `[start_tick, start_tick + duration)`; absent means permanent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl EventSpec {
    pub fn end_tick(&self) -> Option<u64> {
        self.duration.map(|d| self.start_tick + d)
    }
}

/// Spacing between consecutive wrecks of one accident.
pub const WRECK_SPACING: f64 = 6.0;
/// One barrier per this many meters of closed interval.
pub const BARRIER_SPACING: f64 = 10.0;
const TREE_HALF_BLOCK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid event `{id}`: {reason}")]
pub struct InvalidEvent {
    pub id: String,
    pub reason: String,
}

pub fn validate_events(config: &ScenarioConfig, network: &RoadNetwork) -> Report {
    let mut report = Report::default();
    let mut seen = BTreeMap::new();
    for (i, ev) in config.events.iter().enumerate() {
        let path = format!("events[{i}]");
        if seen.insert(ev.id.as_str(), i).is_some() {
            report.error(format!("{path}.id"), format!("duplicate event id `{}`", ev.id));
        }
        if ev.duration == Some(0) {
            report.error(format!("{path}.duration"), "duration must be positive");
        }
        let pp = format!("{path}.params");
        let lane_len = |report: &mut Report, field: &str, lane: &str| -> Option<f64> {
            match network.lane(lane) {
                Some(l) => Some(l.length()),
                None => {
                    report.error(format!("{pp}.{field}"), format!("event `{}`: unknown lane `{lane}`", ev.id));
                    None
                }
            }
        };
        match &ev.kind {
            EventKind::WeatherChange(w) => {
                if let Err(e) = w.validate() {
                    report.error(pp.clone(), format!("event `{}`: {e}", ev.id));
                }
            }
            EventKind::RoadClosure {
                lane,
                s_start,
                s_end,
            } => {
                if let Some(len) = lane_len(&mut report, "lane", lane) {
                    if !(0.0 <= *s_start && s_start < s_end && *s_end <= len) {
                        report.error(
                            pp.clone(),
                            format!(
                                "event `{}`: interval [{s_start}, {s_end}] not inside lane of length {len}",
                                ev.id
                            ),
                        );
                    }
                }
            }
            EventKind::Accident { lane, s, wrecks } => {
                if *wrecks == 0 {
                    report.error(format!("{pp}.wrecks"), format!("event `{}`: needs at least one wreck", ev.id));
                }
                if let Some(len) = lane_len(&mut report, "lane", lane) {
                    let last = s + WRECK_SPACING * f64::from(wrecks.saturating_sub(1));
                    if !(*s >= 0.0 && last <= len) {
                        report.error(
                            format!("{pp}.s"),
                            format!("event `{}`: wrecks span [{s}, {last}] outside lane of length {len}", ev.id),
                        );
                    }
                }
            }
            EventKind::FallenTree {
                position,
                length,
                lanes,
            } => {
                if !(*length > 0.0) {
                    report.error(format!("{pp}.length"), format!("event `{}`: length must be positive", ev.id));
                }
                if lanes.is_empty() {
                    report.error(format!("{pp}.lanes"), format!("event `{}`: no blocked lanes", ev.id));
                }
                for (k, l) in lanes.iter().enumerate() {
                    match network.lane(l) {
                        None => report.error(
                            format!("{pp}.lanes[{k}]"),
                            format!("event `{}`: unknown lane `{l}`", ev.id),
                        ),
                        Some(lane) => {
                            let (_, d) = lane.project(*position);
                            if d > length / 2.0 + lane.width {
                                report.warning(
                                    format!("{pp}.lanes[{k}]"),
                                    format!("event `{}`: tree is {d:.1} m from lane `{l}`", ev.id),
                                );
                            }
                        }
                    }
                }
            }
            EventKind::EmergencyDispatch {
                class,
                route,
                priority,
            } => {
                if !class.is_emergency() {
                    report.error(
                        format!("{pp}.class"),
                        format!("event `{}`: {} is not an emergency vehicle", ev.id, class.name()),
                    );
                }
                if !priority {
                    report.error(format!("{pp}.priority"), format!("event `{}`: dispatch requires priority", ev.id));
                }
                let before = report.error_count();
                check_route(&mut report, &format!("{pp}.route"), route, *class, network);
                if report.error_count() == before {
                    for (k, w) in route.windows(2).enumerate() {
                        let Some(inter) = network.approach_of(&w[0]) else {
                            continue;
                        };
                        let (Some(plan), Some(m)) =
                            (network.plan_for(&inter.id), inter.movement_index(&w[0], &w[1]))
                        else {
                            continue;
                        };
                        if serving_phase(plan, m).is_none() {
                            report.error(
                                format!("{pp}.route[{}]", k + 1),
                                format!(
                                    "event `{}`: NoServingPhase: no phase of `{}` serves movement {m}",
                                    ev.id, inter.id
                                ),
                            );
                        }
                    }
                }
            }
        }
    }
    // overlapping closures on the same lane
    let closures: Vec<(usize, &EventSpec, &String, f64, f64)> = config
        .events
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match &e.kind {
            EventKind::RoadClosure {
                lane,
                s_start,
                s_end,
            } => Some((i, e, lane, *s_start, *s_end)),
            _ => None,
        })
        .collect();
    for (a, &(i, ea, la, a0, a1)) in closures.iter().enumerate() {
        for &(_, eb, lb, b0, b1) in &closures[a + 1..] {
            let time_overlap = ea.start_tick < eb.end_tick().unwrap_or(u64::MAX)
                && eb.start_tick < ea.end_tick().unwrap_or(u64::MAX);
            if la == lb && a0 < b1 && b0 < a1 && time_overlap {
                report.warning(
                    format!("events[{i}]"),
                    format!("closures `{}` and `{}` overlap on lane `{la}`", ea.id, eb.id),
                );
            }
        }
    }
    report
}

fn obstacle(id: String, class: EntityClass, pose: Pose, bbox: BBox, event: &str) -> Entity {
    Entity::obstacle(id, class, pose, bbox, event)
}

/// Activate `ev` in `world`. A no-op when the event is already active.
pub fn apply_event(
    world: &mut WorldState,
    network: &RoadNetwork,
    ev: &EventSpec,
) -> Result<(), InvalidEvent> {
    if world.active_events.contains(&ev.id) {
        return Ok(());
    }
    let invalid = |reason: String| InvalidEvent {
        id: ev.id.clone(),
        reason,
    };
    let lane_of = |id: &str| {
        network
            .lane(id)
            .ok_or_else(|| invalid(format!("unknown lane `{id}`")))
    };
    let mut spawned = Vec::new();
    match &ev.kind {
        EventKind::WeatherChange(w) => {
            world.weather_stack.push((ev.id.clone(), *w));
            world.weather = *w;
        }
        EventKind::RoadClosure {
            lane,
            s_start,
            s_end,
        } => {
            let l = lane_of(lane)?;
            if !(0.0 <= *s_start && s_start < s_end && *s_end <= l.length()) {
                return Err(invalid("closure interval outside lane".into()));
            }
            let span = s_end - s_start;
            let n = ((span / BARRIER_SPACING) - 1e-9).ceil().max(1.0) as usize;
            let chunk = span / n as f64;
            for k in 0..n {
                let s = s_start + (k as f64 + 0.5) * chunk;
                spawned.push(obstacle(
                    format!("{}/barrier{k}", ev.id),
                    EntityClass::Barrier,
                    l.pose_at(s, 0.0),
                    BBox {
                        length: chunk,
                        width: l.width,
                        height: 1.0,
                    },
                    &ev.id,
                ));
            }
            world.blockages.push(Blockage {
                event: ev.id.clone(),
                lane: lane.clone(),
                s_start: *s_start,
                s_end: *s_end,
                closure: true,
            });
        }
        EventKind::Accident { lane, s, wrecks } => {
            let l = lane_of(lane)?;
            if *wrecks == 0 {
                return Err(invalid("accident without wrecks".into()));
            }
            let bbox = EntityClass::Wreck.default_bbox();
            for k in 0..*wrecks {
                let sk = s + WRECK_SPACING * f64::from(k);
                if sk > l.length() {
                    return Err(invalid("wreck beyond lane end".into()));
                }
                spawned.push(obstacle(
                    format!("{}/wreck{k}", ev.id),
                    EntityClass::Wreck,
                    l.pose_at(sk, 0.0),
                    bbox,
                    &ev.id,
                ));
            }
            let last = s + WRECK_SPACING * f64::from(wrecks - 1);
            world.blockages.push(Blockage {
                event: ev.id.clone(),
                lane: lane.clone(),
                s_start: (s - bbox.length / 2.0).max(0.0),
                s_end: (last + bbox.length / 2.0).min(l.length()),
                closure: false,
            });
        }
        EventKind::FallenTree {
            position,
            length,
            lanes,
        } => {
            let mut heading = 0.0;
            for (k, lane) in lanes.iter().enumerate() {
                let l = lane_of(lane)?;
                let (s, _) = l.project(*position);
                if k == 0 {
                    heading = normalize_angle(l.pose_at(s, 0.0).heading + FRAC_PI_2);
                }
                world.blockages.push(Blockage {
                    event: ev.id.clone(),
                    lane: lane.clone(),
                    s_start: (s - TREE_HALF_BLOCK).max(0.0),
                    s_end: (s + TREE_HALF_BLOCK).min(l.length()),
                    closure: false,
                });
            }
            let mut bbox = EntityClass::FallenTree.default_bbox();
            bbox.length = *length;
            spawned.push(obstacle(
                format!("{}/tree", ev.id),
                EntityClass::FallenTree,
                Pose {
                    x: position[0],
                    y: position[1],
                    z: 0.0,
                    heading,
                },
                bbox,
                &ev.id,
            ));
        }
        EventKind::EmergencyDispatch { .. } => {
            world.pending_dispatch.insert(ev.id.clone());
        }
    }
    let ids: Vec<String> = spawned.iter().map(|e| e.state.id.clone()).collect();
    for e in spawned {
        world.insert_entity(e);
    }
    world.event_entities.insert(ev.id.clone(), ids);
    world.active_events.insert(ev.id.clone());
    Ok(())
}

/// Deactivate `ev`: remove what it spawned and restore flags. Dispatched
/// vehicles already on the road keep driving.
pub fn expire_event(world: &mut WorldState, ev: &EventSpec) {
    if !world.active_events.remove(&ev.id) {
        return;
    }
    if let Some(ids) = world.event_entities.remove(&ev.id) {
        for id in ids {
            world.remove_entity(&id);
        }
    }
    world.blockages.retain(|b| b.event != ev.id);
    if let Some(pos) = world.weather_stack.iter().position(|(id, _)| *id == ev.id) {
        world.weather_stack.remove(pos);
        world.weather = world
            .weather_stack
            .last()
            .map(|(_, w)| *w)
            .unwrap_or(world.base_weather);
    }
    world.pending_dispatch.remove(&ev.id);
}

/// Expire events ending at `tick`, then activate events starting at `tick`.
/// Applying the same tick twice leaves the world unchanged.
pub fn process_events(
    world: &mut WorldState,
    network: &RoadNetwork,
    events: &[EventSpec],
    tick: u64,
) -> Result<(), InvalidEvent> {
    for ev in events {
        if ev.end_tick() == Some(tick) {
            expire_event(world, ev);
        }
    }
    for ev in events {
        if ev.start_tick == tick && ev.end_tick().map_or(true, |end| end > tick) {
            apply_event(world, network, ev)?;
        }
    }
    Ok(())
}

// ---- counterfactuals ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CounterfactualEdit {
    AddEvent { event: EventSpec },
    RemoveEvent { id: String },
    ReplaceParams { id: String, with: EventKind },
    ReplaceWeather { weather: WeatherState },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EditError {
    #[error("edit target `{0}` not found")]
    EditTargetMissing(String),
    #[error("event `{0}` already exists")]
    DuplicateEvent(String),
}

/// Return `(base, edited)` where `edited` differs from `base` by exactly the edit.
pub fn counterfactual_pair(
    base: &ScenarioConfig,
    edit: &CounterfactualEdit,
) -> Result<(ScenarioConfig, ScenarioConfig), EditError> {
    let mut edited = base.clone();
    match edit {
        CounterfactualEdit::AddEvent { event } => {
            if base.events.iter().any(|e| e.id == event.id) {
                return Err(EditError::DuplicateEvent(event.id.clone()));
            }
            edited.events.push(event.clone());
        }
        CounterfactualEdit::RemoveEvent { id } => {
            let pos = base
                .events
                .iter()
                .position(|e| e.id == *id)
                .ok_or_else(|| EditError::EditTargetMissing(id.clone()))?;
            edited.events.remove(pos);
        }
        CounterfactualEdit::ReplaceParams { id, with } => {
            let ev = edited
                .events
                .iter_mut()
                .find(|e| e.id == *id)
                .ok_or_else(|| EditError::EditTargetMissing(id.clone()))?;
            ev.kind = with.clone();
        }
        CounterfactualEdit::ReplaceWeather { weather } => edited.weather = *weather,
    }
    Ok((base.clone(), edited))
}

/// Paths at which two JSON documents differ. Arrays whose elements are all
/// objects carrying a string `id` are matched by id (`events[id=rain]`),
/// other arrays by index.
pub fn structural_diff(a: &Value, b: &Value) -> Vec<String> {
    let mut out = Vec::new();
    diff_into(a, b, String::new(), &mut out);
    out
}

fn keyed(items: &[Value]) -> Option<BTreeMap<&str, &Value>> {
    let mut m = BTreeMap::new();
    for v in items {
        let id = v.get("id")?.as_str()?;
        if m.insert(id, v).is_some() {
            return None;
        }
    }
    Some(m)
}

fn diff_into(a: &Value, b: &Value, path: String, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let p = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match (x.get(k), y.get(k)) {
                    (Some(va), Some(vb)) => diff_into(va, vb, p, out),
                    _ => out.push(p),
                }
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if let (Some(kx), Some(ky)) = (keyed(x), keyed(y)) {
                let ids: std::collections::BTreeSet<&&str> = kx.keys().chain(ky.keys()).collect();
                for id in ids {
                    let p = format!("{path}[id={id}]");
                    match (kx.get(*id), ky.get(*id)) {
                        (Some(va), Some(vb)) => diff_into(va, vb, p, out),
                        _ => out.push(p),
                    }
                }
            } else {
                for i in 0..x.len().max(y.len()) {
                    let p = format!("{path}[{i}]");
                    match (x.get(i), y.get(i)) {
                        (Some(va), Some(vb)) => diff_into(va, vb, p, out),
                        _ => out.push(p),
                    }
                }
            }
        }
        _ => {
            if a != b {
                out.push(path);
            }
        }
    }
}
