//! Shipped scenarios and hand-built fixtures run end to end.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use tsh_core::causal::{counterfactual_pair, process_events, structural_diff, CounterfactualEdit, EventKind, EventSpec};
use tsh_core::config::{validate_config, Scenario, ScenarioConfig};
use tsh_core::ground::{phase_index_at, preempt};
use tsh_core::map::load_network;
use tsh_core::sim::Simulation;

fn tests_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests")
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn golden_hash(name: &str) -> String {
    std::fs::read_to_string(tests_dir().join("golden").join(name)).unwrap().trim().to_string()
}

fn run(path: &Path) -> Simulation {
    let mut sim = Simulation::new(Scenario::load(path).unwrap()).unwrap();
    while sim.tick() < sim.config().horizon {
        sim.step(&BTreeMap::new()).unwrap();
    }
    sim
}

fn report(name: &str) -> tsh_core::config::Report {
    let (cfg, base) = ScenarioConfig::load(&tests_dir().join("fixtures").join(name)).unwrap();
    validate_config(&cfg, &base).0
}

#[test]
fn crossroads_map_has_no_conflicting_phase() {
    let net = load_network(&scenarios().join("maps/crossroads.json")).unwrap();
    let j = &net.intersections["J"];
    assert_eq!(j.movements.len(), 8);
    assert_eq!(net.plan_for("J").unwrap().phases.len(), 2);
    assert!(net.conflict_violations().is_empty());
    // every pair inside a phase, checked by hand against the matrix
    for phase in &net.plan_for("J").unwrap().phases {
        for &a in &phase.movements {
            for &b in &phase.movements {
                assert!(!j.conflicts(a, b), "{a} and {b} share a phase");
            }
        }
    }
}

#[test]
fn example_scenario_matches_golden_hash() {
    let sim = run(&scenarios().join("crossroads.json"));
    assert_eq!(format!("{:016x}", sim.trace_hash()), golden_hash("crossroads.hash"));
    assert_eq!(sim.world().counters.overlaps, 0);
}

#[test]
fn three_cars_one_uav_matches_golden_hash() {
    let sim = run(&tests_dir().join("fixtures/three_cars_uav.json"));
    assert_eq!(sim.tick(), 100);
    assert_eq!(format!("{:016x}", sim.trace_hash()), golden_hash("three_cars_uav.hash"));
}

#[test]
fn five_valid_one_invalid_event() {
    let r = report("events_one_invalid.json");
    assert_eq!(r.error_count(), 1, "{r}");
    assert!(r.errors().next().unwrap().path.starts_with("events[5]"));
}

#[test]
fn three_defects_three_errors() {
    let r = report("three_defects.json");
    assert_eq!(r.error_count(), 3, "{r}");
}

#[test]
fn accident_queue_has_positive_gaps() {
    let mut sim = Simulation::new(Scenario::load(&tests_dir().join("fixtures/accident_platoon.json")).unwrap()).unwrap();
    let mut min_gap = f64::INFINITY;
    while sim.tick() < 300 {
        sim.step(&BTreeMap::new()).unwrap();
        let mut bodies: Vec<(f64, f64)> = sim
            .world()
            .entities
            .values()
            .map(|e| match &e.state.lane_ref {
                Some(r) => (r.s, e.state.bbox.length),
                None => (e.state.pose.x, e.state.bbox.length),
            })
            .collect();
        bodies.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in bodies.windows(2) {
            min_gap = min_gap.min(w[1].0 - w[0].0 - (w[0].1 + w[1].1) / 2.0);
        }
    }
    assert!(min_gap > 0.0, "min gap {min_gap}");
    let movers: Vec<f64> = sim
        .world()
        .entities
        .values()
        .filter(|e| e.state.lane_ref.is_some())
        .map(|e| e.state.speed)
        .collect();
    assert_eq!(movers.len(), 5);
    assert!(movers.iter().all(|v| *v < 1.0), "{movers:?}");
    assert_eq!(sim.world().counters.overlaps, 0);
}

#[test]
fn signals_resume_the_fixed_plan_after_preemption() {
    let (mut cfg, base) = ScenarioConfig::load(&scenarios().join("crossroads.json")).unwrap();
    cfg.horizon = 700;
    let sc = Scenario::compile(cfg, &base).unwrap();
    let net = sc.network.clone();
    let plan = net.plan_for("J").unwrap().clone();
    let mut sim = Simulation::new(sc).unwrap();
    let mut preempted = Vec::new();
    loop {
        let st = &sim.world().signals["J"];
        // the plan clock keeps running underneath a preemption
        assert_eq!(st.phase, phase_index_at(&plan, sim.tick()), "tick {}", sim.tick());
        match &st.preempted_by {
            None => assert_eq!(st.active, plan.phases[st.phase].movements),
            Some(id) => {
                preempted.push(sim.tick());
                let e = &sim.world().entities[id];
                assert!(e.state.priority);
                let lane = &e.state.lane_ref.as_ref().unwrap().lane;
                let j = &net.intersections["J"];
                let served: Vec<&[usize]> = j
                    .movements
                    .iter()
                    .enumerate()
                    .filter(|(_, (f, t))| f == lane || t == lane)
                    .map(|(m, _)| preempt(&plan, m).unwrap())
                    .collect();
                assert!(served.contains(&st.active.as_slice()), "tick {}: {:?}", sim.tick(), st.active);
            }
        }
        if sim.tick() >= 700 {
            break;
        }
        sim.step(&BTreeMap::new()).unwrap();
    }
    assert!(!preempted.is_empty(), "the ambulance never preempted");
    let last = *preempted.last().unwrap();
    assert!(last < 700);
}

#[test]
fn counterfactual_configs_differ_only_in_the_edit() {
    let (base, _) = ScenarioConfig::load(&scenarios().join("crossroads.json")).unwrap();
    for name in ["rain", "closure", "accident", "fallen_tree", "dispatch"] {
        let text = std::fs::read_to_string(scenarios().join("edits").join(format!("{name}.json"))).unwrap();
        let edit: CounterfactualEdit = serde_json::from_str(&text).unwrap();
        let (a, b) = counterfactual_pair(&base, &edit).unwrap();
        assert_eq!(a, base);
        let paths = structural_diff(&serde_json::to_value(&a).unwrap(), &serde_json::to_value(&b).unwrap());
        assert_eq!(paths.len(), 1, "{name}: {paths:?}");
        assert!(paths[0].starts_with("events"), "{name}: {paths:?}");
    }
    let missing = CounterfactualEdit::RemoveEvent { id: "nope".into() };
    assert!(counterfactual_pair(&base, &missing).is_err());
}

#[test]
fn event_obstacles_removed_exactly_at_expiry() {
    let (mut cfg, base) = ScenarioConfig::load(&scenarios().join("crossroads.json")).unwrap();
    cfg.horizon = 80;
    cfg.events = vec![
        EventSpec {
            id: "works".into(),
            start_tick: 10,
            duration: Some(50),
            kind: EventKind::RoadClosure {
                lane: "n_in".into(),
                s_start: 20.0,
                s_end: 30.0,
            },
        },
        EventSpec {
            id: "crash".into(),
            start_tick: 15,
            duration: Some(30),
            kind: EventKind::Accident {
                lane: "e_in".into(),
                s: 150.0,
                wrecks: 3,
            },
        },
    ];
    let mut sim = Simulation::new(Scenario::compile(cfg, &base).unwrap()).unwrap();
    let ids = |sim: &Simulation| -> BTreeSet<String> { sim.world().entities.keys().cloned().collect() };
    let mut spawned: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
    let mut removed: BTreeMap<u64, BTreeSet<String>> = BTreeMap::new();
    let mut prev = ids(&sim);
    while sim.tick() < 80 {
        sim.step(&BTreeMap::new()).unwrap();
        let now = ids(&sim);
        let t = sim.tick();
        spawned.insert(t, now.difference(&prev).filter(|i| i.contains('/')).cloned().collect());
        removed.insert(t, prev.difference(&now).filter(|i| i.contains('/')).cloned().collect());
        let closed = sim.world().blockages.iter().any(|b| b.event == "works");
        assert_eq!(closed, (10..60).contains(&t), "tick {t}");
        prev = now;
    }
    let barrier: BTreeSet<String> = ["works/barrier0".to_string()].into();
    assert_eq!(spawned[&10], barrier);
    assert_eq!(removed[&60], barrier);
    let wrecks: BTreeSet<String> = (0..3).map(|k| format!("crash/wreck{k}")).collect();
    assert_eq!(spawned[&15], wrecks);
    assert_eq!(removed[&45], wrecks);
}

#[test]
fn processing_a_tick_twice_is_a_no_op() {
    let (mut cfg, base) = ScenarioConfig::load(&scenarios().join("crossroads.json")).unwrap();
    cfg.horizon = 30;
    let events = vec![EventSpec {
        id: "tree".into(),
        start_tick: 20,
        duration: Some(5),
        kind: EventKind::FallenTree {
            position: [-120.0, -1.75],
            length: 8.0,
            lanes: vec!["w_in".into()],
        },
    }];
    cfg.events = events.clone();
    let mut sim = Simulation::new(Scenario::compile(cfg, &base).unwrap()).unwrap();
    while sim.tick() < 20 {
        sim.step(&BTreeMap::new()).unwrap();
    }
    let mut w = sim.world().clone();
    let once = w.hash();
    process_events(&mut w, sim.network(), &events, 20).unwrap();
    assert_eq!(w.hash(), once);
    for _ in 0..5 {
        sim.step(&BTreeMap::new()).unwrap();
    }
    let mut w = sim.world().clone();
    let once = w.hash();
    process_events(&mut w, sim.network(), &events, 25).unwrap();
    assert_eq!(w.hash(), once);
}
