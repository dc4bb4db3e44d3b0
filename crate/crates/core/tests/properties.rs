//! Property checks against brute-force references and whole-run invariants.

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::json;

use tsh_core::air::separation_violations;
use tsh_core::causal::{counterfactual_pair, CounterfactualEdit, EventKind, EventSpec, WeatherState, TimeOfDay};
use tsh_core::config::{Scenario, ScenarioConfig};
use tsh_core::entity::{BBox, EntityClass};
use tsh_core::geom::Pose;
use tsh_core::ground::{lane_change_decide, target_gaps, IdmParams, LaneBody, LaneChange};
use tsh_core::map::{nearest_lane, parse_network};
use tsh_core::sensor::{render, SceneView};
use tsh_core::sim::{observe, Entity, Simulation, WorldState};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Four approach flows on the crossroads map.
fn flow_config(seed: u64, horizon: u64) -> ScenarioConfig {
    let flows: Vec<_> = [("n_in", "c_ns", "s_out"), ("s_in", "c_sn", "n_out"), ("e_in", "c_ew", "w_out"), ("w_in", "c_we", "e_out")]
        .iter()
        .map(|(a, b, c)| json!({"id": a, "route": [a, b, c], "rate": 0.3}))
        .collect();
    serde_json::from_value(json!({
        "map": "maps/crossroads.json",
        "seed": seed,
        "horizon": horizon,
        "subsystems": {"air": false, "comms": true, "sensors": false},
        "demand": {"flows": flows}
    }))
    .unwrap()
}

fn trace(cfg: ScenarioConfig) -> (Vec<String>, u64) {
    let mut sim = Simulation::new(Scenario::compile(cfg, &scenarios()).unwrap()).unwrap();
    let mut lines = vec![sim.last_record().to_string()];
    while sim.tick() < sim.config().horizon {
        sim.step(&BTreeMap::new()).unwrap();
        lines.push(sim.last_record().to_string());
    }
    (lines, sim.trace_hash())
}

// ---- map -------------------------------------------------------------------

const TEN_LANES: &str = r#"{"lanes": [
  {"id": "l0", "centerline": [[0, 0], [100, 0]], "width": 3.5, "speed_limit": 10},
  {"id": "l1", "centerline": [[0, 10], [40, 30], [80, 10]], "width": 3.5, "speed_limit": 10},
  {"id": "l2", "centerline": [[-50, -50], [-50, 50]], "width": 3.5, "speed_limit": 10},
  {"id": "l3", "centerline": [[10, -40], [60, -20], [70, -60], [120, -60]], "width": 3.5, "speed_limit": 10},
  {"id": "l4", "centerline": [[-30, 60], [30, 90]], "width": 3.5, "speed_limit": 10},
  {"id": "l5", "centerline": [[100, 100], [50, 60], [0, 100]], "width": 3.5, "speed_limit": 10},
  {"id": "l6", "centerline": [[-80, 0], [-60, -10], [-40, 0], [-20, -10]], "width": 3.5, "speed_limit": 10},
  {"id": "l7", "centerline": [[150, 0], [150, 80]], "width": 3.5, "speed_limit": 10},
  {"id": "l8", "centerline": [[0, -100], [-70, -90]], "width": 3.5, "speed_limit": 10},
  {"id": "l9", "centerline": [[90, 40], [130, 45]], "width": 3.5, "speed_limit": 10}
]}"#;

/// Exhaustive per-segment projection: (lane, s, distance).
fn project_brute(lanes: &serde_json::Value, p: [f64; 2]) -> (String, f64, f64) {
    let mut best = (String::new(), 0.0, f64::INFINITY);
    for lane in lanes.as_array().unwrap() {
        let pts: Vec<[f64; 2]> = lane["centerline"]
            .as_array()
            .unwrap()
            .iter()
            .map(|q| [q[0].as_f64().unwrap(), q[1].as_f64().unwrap()])
            .collect();
        let mut acc = 0.0;
        for w in pts.windows(2) {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let len = (dx * dx + dy * dy).sqrt();
            let t = (((p[0] - w[0][0]) * dx + (p[1] - w[0][1]) * dy) / (len * len)).clamp(0.0, 1.0);
            let d = ((w[0][0] + t * dx - p[0]).powi(2) + (w[0][1] + t * dy - p[1]).powi(2)).sqrt();
            let id = lane["id"].as_str().unwrap();
            if d < best.2 || (d == best.2 && id < best.0.as_str()) {
                best = (id.to_string(), acc + t * len, d);
            }
            acc += len;
        }
    }
    best
}

proptest! {
    #[test]
    fn nearest_lane_matches_exhaustive_projection(x in -120.0..200.0f64, y in -120.0..150.0f64) {
        let net = parse_network(TEN_LANES).unwrap();
        let lanes: serde_json::Value = serde_json::from_str(TEN_LANES).unwrap();
        let got = nearest_lane(&net, [x, y]).unwrap();
        let (id, s, d) = project_brute(&lanes["lanes"], [x, y]);
        prop_assert!((got.distance - d).abs() < 1e-9);
        if (got.distance - d).abs() < 1e-12 && got.lane == id {
            prop_assert!((got.s - s).abs() < 1e-9, "s {} vs {}", got.s, s);
        }
    }
}

// ---- ground ----------------------------------------------------------------

/// Finds leader and follower by looking at every neighbour, then applies the
/// gap predicates.
fn decide_brute(v: f64, ego: (f64, f64), others: &[(f64, f64, f64)], p: &IdmParams) -> bool {
    let mut lead: Option<f64> = None;
    let mut follow: Option<(f64, f64)> = None;
    for &(s, len, speed) in others {
        let half = (ego.1 + len) / 2.0;
        if s >= ego.0 {
            let g = s - ego.0 - half;
            if lead.map_or(true, |l| g < l) {
                lead = Some(g);
            }
        } else {
            let g = ego.0 - s - half;
            if follow.map_or(true, |(f, _)| g < f) {
                follow = Some((g, speed));
            }
        }
    }
    lead.map_or(true, |g| g >= p.s0 + v * p.t_headway) && follow.map_or(true, |(g, u)| g >= p.s0 + u * p.t_headway)
}

proptest! {
    #[test]
    fn lane_change_matches_gap_enumeration(
        v in 0.0..20.0f64,
        ego_s in 0.0..200.0f64,
        others in prop::collection::vec((0.0..200.0f64, 4.0..12.0f64, 0.0..20.0f64), 4),
        left in any::<bool>(),
    ) {
        let p = IdmParams::default();
        let ego = LaneBody { s: ego_s, length: 4.5, speed: v };
        let bodies: Vec<LaneBody> = others.iter().map(|&(s, length, speed)| LaneBody { s, length, speed }).collect();
        let gaps = target_gaps(ego, &bodies);
        let desire = if left { LaneChange::Left } else { LaneChange::Right };
        let got = if left {
            lane_change_decide(v, &p, desire, Some(&gaps), None)
        } else {
            lane_change_decide(v, &p, desire, None, Some(&gaps))
        };
        let want = if decide_brute(v, (ego_s, 4.5), &others, &p) { desire } else { LaneChange::Keep };
        prop_assert_eq!(got, want);
    }
}

// ---- air -------------------------------------------------------------------

proptest! {
    #[test]
    fn separation_matches_pair_scan(pts in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64, 30.0..120.0f64), 20)) {
        let ids: Vec<String> = (0..pts.len()).map(|i| format!("a{i:02}")).collect();
        let craft: Vec<(&str, [f64; 3])> = ids.iter().zip(&pts).map(|(id, &(x, y, z))| (id.as_str(), [x, y, z])).collect();
        let (h, vmin) = (30.0, 10.0);
        let mut want = Vec::new();
        for i in 0..craft.len() {
            for j in i + 1..craft.len() {
                let (a, b) = (craft[i].1, craft[j].1);
                if ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() < h && (a[2] - b[2]).abs() < vmin {
                    want.push((craft[i].0.to_string(), craft[j].0.to_string()));
                }
            }
        }
        want.sort();
        prop_assert_eq!(separation_violations(&craft, h, vmin), want);
    }
}

// ---- observation -----------------------------------------------------------

proptest! {
    #[test]
    fn observe_matches_distance_filter(pts in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64, 0.0..60.0f64), 50)) {
        let cfg = flow_config(1, 1);
        let net = tsh_core::map::RoadNetwork::default();
        let mut world = WorldState::empty(&cfg);
        for (i, &(x, y, z)) in pts.iter().enumerate() {
            let bbox = BBox { length: 1.0, width: 1.0, height: 1.0 };
            world.insert_entity(Entity::obstacle(format!("e{i:02}"), EntityClass::Barrier, Pose::new(x, y, z, 0.0), bbox, "ev"));
        }
        let obs = observe(&world, &net, "e00", 50.0).unwrap();
        let got: Vec<String> = obs.neighbors.iter().map(|n| n.id.clone()).collect();
        let o = pts[0];
        let mut want: Vec<(f64, String)> = pts.iter().enumerate().skip(1)
            .map(|(i, p)| (((p.0 - o.0).powi(2) + (p.1 - o.1).powi(2) + (p.2 - o.2).powi(2)).sqrt(), format!("e{i:02}")))
            .filter(|(d, _)| *d <= 50.0)
            .collect();
        want.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        prop_assert_eq!(got, want.into_iter().map(|w| w.1).collect::<Vec<_>>());
    }
}

// ---- whole runs ------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn same_seed_same_trace(seed in any::<u64>()) {
        let (a, ha) = trace(flow_config(seed, 150));
        let (b, hb) = trace(flow_config(seed, 150));
        prop_assert_eq!(ha, hb);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn edits_leave_the_prefix_alone(seed in 0u64..1000, t in 1u64..120, kind in 0usize..3) {
        let base = flow_config(seed, 150);
        let event = match kind {
            0 => EventKind::WeatherChange(WeatherState::rain(0.7, TimeOfDay::Night)),
            1 => EventKind::RoadClosure { lane: "n_in".into(), s_start: 100.0, s_end: 140.0 },
            _ => EventKind::Accident { lane: "e_in".into(), s: 120.0, wrecks: 2 },
        };
        let edit = CounterfactualEdit::AddEvent {
            event: EventSpec { id: "x".into(), start_tick: t, duration: Some(20), kind: event },
        };
        let (a_cfg, b_cfg) = counterfactual_pair(&base, &edit).unwrap();
        let (a, _) = trace(a_cfg);
        let (b, _) = trace(b_cfg);
        let t = t as usize;
        prop_assert_eq!(&a[..t], &b[..t]);
        prop_assert_ne!(&a[t], &b[t]);
    }

    #[test]
    fn trip_order_does_not_matter(seed in any::<u64>(), rot in 1usize..12) {
        let (mut cfg, base) = ScenarioConfig::load(&scenarios().join("intersection_views.json")).unwrap();
        cfg.seed = seed;
        cfg.horizon = 80;
        let mut shuffled = cfg.clone();
        shuffled.demand.trips.rotate_left(rot % cfg.demand.trips.len());
        shuffled.demand.trips.reverse();
        let run = |c: ScenarioConfig| {
            let mut sim = Simulation::new(Scenario::compile(c, &base).unwrap()).unwrap();
            for _ in 0..80 {
                sim.step(&BTreeMap::new()).unwrap();
            }
            sim.trace_hash()
        };
        prop_assert_eq!(run(cfg), run(shuffled));
    }

    #[test]
    fn render_leaves_world_untouched(ticks in 0u64..60) {
        let mut sim = Simulation::new(Scenario::load(&scenarios().join("intersection_views.json")).unwrap()).unwrap();
        for _ in 0..ticks {
            sim.step(&BTreeMap::new()).unwrap();
        }
        let before = sim.world_hash();
        for cam in &sim.config().cameras {
            let _ = render(cam, &SceneView::from_world(sim.world(), sim.network()), None);
        }
        prop_assert_eq!(sim.world_hash(), before);
    }

    #[test]
    fn snapshot_midway_continues_identically(k in 1u64..100) {
        let cfg = flow_config(9, 120);
        let mut a = Simulation::new(Scenario::compile(cfg.clone(), &scenarios()).unwrap()).unwrap();
        let mut b = Simulation::new(Scenario::compile(cfg, &scenarios()).unwrap()).unwrap();
        for _ in 0..k {
            a.step(&BTreeMap::new()).unwrap();
            b.step(&BTreeMap::new()).unwrap();
        }
        let mut b = Simulation::restore_json(&b.snapshot_json()).unwrap();
        prop_assert_eq!(a.world_hash(), b.world_hash());
        for _ in k..120 {
            a.step(&BTreeMap::new()).unwrap();
            b.step(&BTreeMap::new()).unwrap();
            prop_assert_eq!(a.last_record(), b.last_record());
        }
        prop_assert_eq!(a.world_hash(), b.world_hash());
    }
}

#[test]
fn conservation_over_a_busy_run() {
    let mut sim = Simulation::new(Scenario::compile(flow_config(3, 400), &scenarios()).unwrap()).unwrap();
    for _ in 0..400 {
        sim.step(&BTreeMap::new()).unwrap();
        let c = sim.world().counters;
        assert_eq!(c.spawned - c.despawned, sim.world().entities.len() as u64);
    }
}

#[test]
fn weather_change_keeps_base_weather_config() {
    let base = flow_config(5, 10);
    let edit = CounterfactualEdit::ReplaceWeather {
        weather: WeatherState::rain(0.3, TimeOfDay::Dusk),
    };
    let (a, b) = counterfactual_pair(&base, &edit).unwrap();
    let diff = tsh_core::causal::structural_diff(&serde_json::to_value(&a).unwrap(), &serde_json::to_value(&b).unwrap());
    assert!(!diff.is_empty());
    assert!(diff.iter().all(|p| p.starts_with("weather")), "{diff:?}");
}
