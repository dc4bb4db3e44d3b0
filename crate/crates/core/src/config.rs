//! Scenario configuration: the single JSON document that fully determines a
//! run (map, seed, demand, cameras, events, comms, reward).

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::air::kind_defaults;
use crate::causal::{validate_events, EventSpec, WeatherState};
use crate::comms::ChannelParams;
use crate::entity::EntityClass;
use crate::geom::Vec3;
use crate::ground::{IdmParams, DEFAULT_PEDESTRIAN_SPEED};
use crate::map::{load_network, MapFile, RoadNetwork};
use crate::sensor::CameraSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    Path(String),
    Inline(MapFile),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Subsystems {
    pub air: bool,
    pub comms: bool,
    pub sensors: bool,
}

impl Default for Subsystems {
    fn default() -> Self {
        Subsystems {
            air: true,
            comms: true,
            sensors: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationParams {
    pub horizontal: f64,
    pub vertical: f64,
}

impl Default for SeparationParams {
    fn default() -> Self {
        SeparationParams {
            horizontal: 5.0,
            vertical: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flow {
    pub id: String,
    pub route: Vec<String>,
    /// Tried in order when a lane of `route` is closed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<Vec<String>>,
    /// Vehicles per second.
    pub rate: f64,
    #[serde(default = "default_vehicle_class")]
    pub class: EntityClass,
    #[serde(default)]
    pub begin: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<u64>,
}

fn default_vehicle_class() -> EntityClass {
    EntityClass::Car
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trip {
    pub id: String,
    #[serde(default = "default_vehicle_class")]
    pub class: EntityClass,
    pub route: Vec<String>,
    #[serde(default)]
    pub depart: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub id: String,
    /// The first waypoint is the spawn point.
    pub waypoints: Vec<Vec3>,
    #[serde(default)]
    pub depart: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftSpec {
    pub id: String,
    #[serde(default = "default_air_kind")]
    pub kind: EntityClass,
    pub position: Vec3,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub waypoints: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(default = "default_arrive_radius")]
    pub arrive_radius: f64,
    #[serde(default)]
    pub depart: u64,
}

fn default_air_kind() -> EntityClass {
    EntityClass::Uav
}

fn default_arrive_radius() -> f64 {
    2.0
}

impl AircraftSpec {
    /// (v_max, a_max, z_min, z_max) with kind defaults filled in.
    pub fn limits(&self) -> (f64, f64, f64, f64) {
        let (v, a, lo, hi) = kind_defaults(self.kind);
        (
            self.v_max.unwrap_or(v),
            self.a_max.unwrap_or(a),
            self.z_min.unwrap_or(lo),
            self.z_max.unwrap_or(hi),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Demand {
    pub flows: Vec<Flow>,
    pub trips: Vec<Trip>,
    pub pedestrians: Vec<PedestrianSpec>,
    pub aircraft: Vec<AircraftSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllableSpec {
    /// Entity id pattern; `*` matches any run of characters.
    pub pattern: String,
    /// Perception range in meters.
    #[serde(default = "default_range")]
    pub range: f64,
}

fn default_range() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            name: "zero".into(),
            params: BTreeMap::new(),
        }
    }
}

pub const REWARD_HOOKS: [&str; 3] = ["zero", "negative_mean_delay", "throughput"];

fn default_step_length() -> f64 {
    0.1
}
fn default_ped_speed() -> f64 {
    DEFAULT_PEDESTRIAN_SPEED
}
fn default_preemption() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub map: MapSource,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step_length")]
    pub step_length: f64,
    pub horizon: u64,
    #[serde(default)]
    pub subsystems: Subsystems,
    #[serde(default)]
    pub weather: WeatherState,
    #[serde(default)]
    pub vehicle_params: BTreeMap<EntityClass, IdmParams>,
    #[serde(default = "default_ped_speed")]
    pub pedestrian_speed: f64,
    #[serde(default = "default_preemption")]
    pub preemption_distance: f64,
    #[serde(default)]
    pub separation: SeparationParams,
    #[serde(default)]
    pub demand: Demand,
    #[serde(default)]
    pub controllables: Vec<ControllableSpec>,
    #[serde(default)]
    pub controllable_signals: Vec<String>,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub comms: ChannelParams,
    #[serde(default)]
    pub reward: RewardSpec,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config invalid:\n{0}")]
    Invalid(Report),
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    /// Read a config file; relative map paths resolve against its directory.
    pub fn load(path: &Path) -> Result<(ScenarioConfig, PathBuf), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((Self::from_json(&text)?, base))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn idm_for(&self, class: EntityClass) -> IdmParams {
        self.vehicle_params.get(&class).copied().unwrap_or_default()
    }

    /// Perception range if `id` is controllable.
    pub fn controllable_range(&self, id: &str) -> Option<f64> {
        self.controllables
            .iter()
            .find(|c| glob_match(&c.pattern, id))
            .map(|c| c.range)
    }
}

/// `*` matches any (possibly empty) run of characters; everything else is literal.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let mut rest = text;
    let first = parts[0];
    if !rest.starts_with(first) {
        return false;
    }
    rest = &rest[first.len()..];
    let last = parts[parts.len() - 1];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    rest.len() >= last.len() && rest.ends_with(last)
}

// ---- validation report ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    /// Location inside the config, e.g. `events[2].params.lane`.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub issues: Vec<Issue>,
}

impl Report {
    pub fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn warning(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn is_ok(&self) -> bool {
        self.error_count() == 0
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.issues {
            let tag = match i.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "{tag}: {}: {}", i.path, i.message)?;
        }
        Ok(())
    }
}

/// A validated scenario with its road network loaded and the map inlined, so
/// the config alone reproduces the run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub network: Arc<RoadNetwork>,
}

impl Scenario {
    pub fn compile(config: ScenarioConfig, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let (report, network) = validate_config(&config, base_dir);
        match network {
            Some(network) if report.is_ok() => {
                let mut config = config;
                config.map = MapSource::Inline(network.map_file().clone());
                Ok(Scenario {
                    config,
                    network: Arc::new(network),
                })
            }
            _ => Err(ConfigError::Invalid(report)),
        }
    }

    pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
        let (config, base) = ScenarioConfig::load(path)?;
        Scenario::compile(config, &base)
    }

    pub fn dt(&self) -> f64 {
        self.config.step_length
    }
}

fn resolve_map(source: &MapSource, base_dir: &Path) -> Result<RoadNetwork, String> {
    match source {
        MapSource::Path(p) => {
            let path = base_dir.join(p);
            load_network(&path).map_err(|e| e.to_string())
        }
        MapSource::Inline(file) => {
            RoadNetwork::from_map_file(file.clone()).map_err(|e| e.to_string())
        }
    }
}

/// Check a route: non-empty, lanes exist, consecutive lanes are successors or
/// lateral neighbours, class allowed everywhere.
pub fn check_route(
    report: &mut Report,
    path: &str,
    route: &[String],
    class: EntityClass,
    network: &RoadNetwork,
) {
    if route.is_empty() {
        report.error(path, "route is empty");
        return;
    }
    for (i, lane) in route.iter().enumerate() {
        match network.lane(lane) {
            None => {
                report.error(format!("{path}[{i}]"), format!("unknown lane `{lane}`"));
                return;
            }
            Some(l) if !l.allowed_classes.contains(&class) => {
                report.error(
                    format!("{path}[{i}]"),
                    format!("class {} not allowed on lane `{lane}`", class.name()),
                );
                return;
            }
            _ => {}
        }
    }
    for (i, w) in route.windows(2).enumerate() {
        if !network.connected(&w[0], &w[1]) && !network.adjacent(&w[0], &w[1]) {
            report.error(
                format!("{path}[{}]", i + 1),
                format!("lane `{}` does not follow `{}`", w[1], w[0]),
            );
            return;
        }
    }
}

/// Full validation. Returns the report and, when the map loaded, the network.
pub fn validate_config(config: &ScenarioConfig, base_dir: &Path) -> (Report, Option<RoadNetwork>) {
    let mut report = Report::default();
    if !(config.step_length > 0.0 && config.step_length.is_finite()) {
        report.error("step_length", "must be positive");
    }
    if let Err(e) = config.weather.validate() {
        report.error("weather", e);
    }
    for (class, p) in &config.vehicle_params {
        if !class.is_vehicle() {
            report.error(
                format!("vehicle_params.{}", class.name()),
                "not a vehicle class",
            );
        }
        if let Err(e) = p.validate() {
            report.error(format!("vehicle_params.{}", class.name()), e);
        }
    }
    if !(config.pedestrian_speed > 0.0 && config.pedestrian_speed <= 2.0) {
        report.error("pedestrian_speed", "must be in (0, 2] m/s");
    }
    if !(config.preemption_distance >= 0.0) {
        report.error("preemption_distance", "must be non-negative");
    }
    if !(config.separation.horizontal > 0.0 && config.separation.vertical > 0.0) {
        report.error("separation", "thresholds must be positive");
    }
    if let Err(e) = config.comms.validate() {
        report.error("comms", e);
    }
    if !REWARD_HOOKS.contains(&config.reward.name.as_str()) {
        report.error(
            "reward.name",
            format!(
                "unknown reward hook `{}` (expected one of {})",
                config.reward.name,
                REWARD_HOOKS.join(", ")
            ),
        );
    }
    for (i, c) in config.controllables.iter().enumerate() {
        if c.pattern.is_empty() {
            report.error(format!("controllables[{i}].pattern"), "empty pattern");
        }
        if !(c.range >= 0.0) {
            report.error(format!("controllables[{i}].range"), "must be non-negative");
        }
    }
    let mut camera_ids = BTreeSet::new();
    for (i, cam) in config.cameras.iter().enumerate() {
        if !camera_ids.insert(cam.id.as_str()) {
            report.error(format!("cameras[{i}].id"), format!("duplicate camera `{}`", cam.id));
        }
        if let Err(e) = cam.validate() {
            report.error(format!("cameras[{i}]"), e);
        }
    }

    let network = match resolve_map(&config.map, base_dir) {
        Ok(n) => n,
        Err(e) => {
            report.error("map", e);
            return (report, None);
        }
    };

    let mut ids = BTreeSet::new();
    let mut claim = |report: &mut Report, path: String, id: &str| {
        if !ids.insert(id.to_string()) {
            report.error(path, format!("duplicate id `{id}`"));
        }
    };
    for (i, f) in config.demand.flows.iter().enumerate() {
        let p = format!("demand.flows[{i}]");
        claim(&mut report, format!("{p}.id"), &f.id);
        if !f.class.is_vehicle() {
            report.error(format!("{p}.class"), "flows spawn vehicles only");
        }
        if !(f.rate >= 0.0 && f.rate.is_finite()) {
            report.error(format!("{p}.rate"), "must be a non-negative rate");
        }
        check_route(&mut report, &format!("{p}.route"), &f.route, f.class, &network);
        for (k, alt) in f.alternatives.iter().enumerate() {
            check_route(
                &mut report,
                &format!("{p}.alternatives[{k}]"),
                alt,
                f.class,
                &network,
            );
        }
    }
    for (i, t) in config.demand.trips.iter().enumerate() {
        let p = format!("demand.trips[{i}]");
        claim(&mut report, format!("{p}.id"), &t.id);
        if !t.class.is_vehicle() {
            report.error(format!("{p}.class"), "trips spawn vehicles only");
        }
        if t.speed.is_some_and(|v| !(v >= 0.0)) {
            report.error(format!("{p}.speed"), "must be non-negative");
        }
        check_route(&mut report, &format!("{p}.route"), &t.route, t.class, &network);
    }
    for (i, ped) in config.demand.pedestrians.iter().enumerate() {
        let p = format!("demand.pedestrians[{i}]");
        claim(&mut report, format!("{p}.id"), &ped.id);
        if ped.waypoints.is_empty() {
            report.error(format!("{p}.waypoints"), "needs at least a spawn point");
        }
        if ped.speed.is_some_and(|v| !(v > 0.0 && v <= 2.0)) {
            report.error(format!("{p}.speed"), "must be in (0, 2] m/s");
        }
    }
    for (i, a) in config.demand.aircraft.iter().enumerate() {
        let p = format!("demand.aircraft[{i}]");
        claim(&mut report, format!("{p}.id"), &a.id);
        if !a.kind.is_aircraft() {
            report.error(format!("{p}.kind"), "must be UAV or UAM");
        }
        let (v, acc, lo, hi) = a.limits();
        if !(v > 0.0 && acc > 0.0) {
            report.error(p.clone(), "v_max and a_max must be positive");
        }
        if !(lo < hi) {
            report.error(p.clone(), "z_min must be below z_max");
        }
        if !(a.position[2] >= 0.0 && a.position[2] <= hi) {
            report.error(format!("{p}.position"), "altitude outside [0, z_max]");
        }
        if !(a.arrive_radius > 0.0) {
            report.error(format!("{p}.arrive_radius"), "must be positive");
        }
    }
    for (i, sig) in config.controllable_signals.iter().enumerate() {
        if network.plan_for(sig).is_none() {
            report.error(
                format!("controllable_signals[{i}]"),
                format!("no signal plan for intersection `{sig}`"),
            );
        }
    }
    let events_report = validate_events(config, &network);
    report.issues.extend(events_report.issues);
    (report, Some(network))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glob() {
        assert!(glob_match("ego", "ego"));
        assert!(!glob_match("ego", "ego1"));
        assert!(glob_match("ego*", "ego1"));
        assert!(glob_match("*#3", "flow#3"));
        assert!(glob_match("a*b*c", "a_x_b_y_c"));
        assert!(!glob_match("a*b*c", "a_x_c"));
        assert!(glob_match("*", ""));
    }

    #[test]
    fn minimal_config_defaults() {
        let c = ScenarioConfig::from_json(r#"{"map":{"lanes":[]},"horizon":10}"#).unwrap();
        assert_eq!(c.step_length, 0.1);
        assert_eq!(c.seed, 0);
        assert!(c.subsystems.air);
        let (r, n) = validate_config(&c, Path::new("."));
        assert!(r.is_empty(), "{r}");
        assert!(n.unwrap().is_empty());
    }

    #[test]
    fn unknown_field_is_syntax_error() {
        assert!(matches!(
            ScenarioConfig::from_json(r#"{"map":{},"horizon":1,"bogus":2}"#),
            Err(ConfigError::Syntax(_))
        ));
    }
}
