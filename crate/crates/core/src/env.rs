//! Episodic reset/step contract over the controllable entities.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::config::{ConfigError, Report, Scenario, ScenarioConfig};
use crate::sensor::{render, Frame, Modality, SceneView, SensorError};
use crate::sim::{Action, Behavior, Observation, SignalStatus, SimError, Simulation, Snapshot};

/// Range used when an id is controllable through a signal rather than a pattern.
pub const DEFAULT_RANGE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Info {
    pub spawned: u64,
    pub despawned: u64,
    pub blocked_spawns: u64,
    pub completed_routes: u64,
    pub overlaps: u64,
    pub separation_violations: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// 16 hex digits.
    pub trace_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub tick: u64,
    pub observations: BTreeMap<String, Observation>,
    pub rewards: BTreeMap<String, f64>,
    /// State of signals under external control.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub signals: BTreeMap<String, SignalStatus>,
    pub done: bool,
    pub info: Info,
}

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("ConfigInvalid:\n{0}")]
    ConfigInvalid(Report),
    #[error("{0}")]
    Config(ConfigError),
    #[error("NotReset: call reset first")]
    NotReset,
    #[error("EpisodeDone: horizon reached, call reset")]
    EpisodeDone,
    #[error("SensorsDisabled: the sensors subsystem is off in this scenario")]
    SensorsDisabled,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

impl From<ConfigError> for EnvError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(r) => EnvError::ConfigInvalid(r),
            other => EnvError::Config(other),
        }
    }
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::ConfigInvalid(_) | EnvError::Config(_) => "ConfigInvalid",
            EnvError::NotReset => "NotReset",
            EnvError::EpisodeDone => "EpisodeDone",
            EnvError::SensorsDisabled => "SensorsDisabled",
            EnvError::Sim(e) => e.code(),
            EnvError::Sensor(SensorError::UnknownCamera(_)) => "UnknownCamera",
            EnvError::Sensor(SensorError::UnknownMountEntity(_)) => "UnknownMountEntity",
            EnvError::Sensor(SensorError::Io(_)) => "IoFailure",
        }
    }
}

/// Parse a wire action map. Anything that does not fit an action schema is
/// reported as InvalidAction for its key.
pub fn parse_actions(value: &serde_json::Value) -> Result<BTreeMap<String, Action>, SimError> {
    let obj = match value {
        serde_json::Value::Null => return Ok(BTreeMap::new()),
        serde_json::Value::Object(o) => o,
        _ => {
            return Err(SimError::InvalidAction {
                id: String::new(),
                reason: "actions must be an object keyed by entity id".into(),
            })
        }
    };
    let mut out = BTreeMap::new();
    for (id, v) in obj {
        let a: Action = serde_json::from_value(v.clone()).map_err(|_| SimError::InvalidAction {
            id: id.clone(),
            reason: format!("no action schema matches {v}"),
        })?;
        out.insert(id.clone(), a);
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Env {
    sim: Option<Simulation>,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    pub fn sim(&self) -> Option<&Simulation> {
        self.sim.as_ref()
    }

    fn live(&self) -> Result<&Simulation, EnvError> {
        self.sim.as_ref().ok_or(EnvError::NotReset)
    }

    pub fn reset(&mut self, config: ScenarioConfig, base_dir: &Path) -> Result<Transition, EnvError> {
        let scenario = Scenario::compile(config, base_dir)?;
        self.reset_scenario(scenario)
    }

    pub fn reset_path(&mut self, path: &Path) -> Result<Transition, EnvError> {
        let scenario = Scenario::load(path)?;
        self.reset_scenario(scenario)
    }

    pub fn reset_scenario(&mut self, scenario: Scenario) -> Result<Transition, EnvError> {
        self.sim = None;
        let sim = Simulation::new(scenario)?;
        self.sim = Some(sim);
        self.transition()
    }

    pub fn step(&mut self, actions: &BTreeMap<String, Action>) -> Result<Transition, EnvError> {
        let sim = self.sim.as_mut().ok_or(EnvError::NotReset)?;
        if sim.tick() >= sim.config().horizon {
            return Err(EnvError::EpisodeDone);
        }
        sim.step(actions)?;
        self.transition()
    }

    pub fn step_json(&mut self, actions: &serde_json::Value) -> Result<Transition, EnvError> {
        self.live()?;
        let actions = parse_actions(actions)?;
        self.step(&actions)
    }

    pub fn snapshot(&self) -> Result<Snapshot, EnvError> {
        Ok(self.live()?.snapshot())
    }

    /// Render one camera at the current tick. Does not touch the world.
    pub fn render(&self, camera: &str, modalities: Option<&[Modality]>) -> Result<Frame, EnvError> {
        let sim = self.live()?;
        if !sim.config().subsystems.sensors {
            return Err(EnvError::SensorsDisabled);
        }
        let spec = sim
            .config()
            .cameras
            .iter()
            .find(|c| c.id == camera)
            .ok_or_else(|| SensorError::UnknownCamera(camera.to_string()))?;
        let scene = SceneView::from_world(sim.world(), sim.network());
        Ok(render(spec, &scene, modalities)?)
    }

    fn transition(&self) -> Result<Transition, EnvError> {
        let sim = self.live()?;
        let cfg = sim.config();
        let world = sim.world();
        let mut observations = BTreeMap::new();
        for id in sim.controllable_ids() {
            let range = cfg.controllable_range(&id).unwrap_or(DEFAULT_RANGE);
            observations.insert(id.clone(), sim.observe(&id, range)?);
        }
        let rewards = self.rewards(sim, &observations);
        let signals = world
            .signals
            .iter()
            .filter(|(k, _)| cfg.controllable_signals.contains(k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let c = world.counters;
        let all_gone = c.controllables_spawned > 0 && observations.is_empty();
        Ok(Transition {
            tick: world.tick,
            observations,
            rewards,
            signals,
            done: world.tick >= cfg.horizon || all_gone,
            info: Info {
                spawned: c.spawned,
                despawned: c.despawned,
                blocked_spawns: c.blocked_spawns,
                completed_routes: c.completed_routes,
                overlaps: c.overlaps,
                separation_violations: c.separation_violations,
                delivered: c.delivered,
                dropped: c.dropped,
                trace_hash: format!("{:016x}", sim.trace_hash()),
            },
        })
    }

    fn rewards(&self, sim: &Simulation, obs: &BTreeMap<String, Observation>) -> BTreeMap<String, f64> {
        let cfg = sim.config();
        let scale = cfg.reward.params.get("scale").copied().unwrap_or(1.0);
        let world = sim.world();
        let value = match cfg.reward.name.as_str() {
            "negative_mean_delay" => {
                let mut total = 0.0;
                let mut n = 0u32;
                for e in world.entities.values() {
                    if let (Behavior::Vehicle { idm, .. }, Some(r)) = (&e.behavior, &e.state.lane_ref) {
                        let limit = sim.network().lane(&r.lane).map_or(idm.v0, |l| l.speed_limit);
                        let free = idm.v0.min(limit);
                        if free > 0.0 {
                            total += (1.0 - e.state.speed / free).max(0.0);
                            n += 1;
                        }
                    }
                }
                if n == 0 {
                    0.0
                } else {
                    -scale * world.step_length * total / f64::from(n)
                }
            }
            "throughput" => scale * world.completed_last as f64,
            _ => 0.0,
        };
        obs.keys().map(|k| (k.clone(), value)).collect()
    }
}
