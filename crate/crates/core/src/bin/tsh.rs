use clap::{Parser, Subcommand};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use tsh_core::causal::{counterfactual_pair, structural_diff, CounterfactualEdit};
use tsh_core::config::{validate_config, ConfigError, Scenario, ScenarioConfig};
use tsh_core::diff::diff_traces;
use tsh_core::protocol::{serve_stdio, serve_tcp};
use tsh_core::sensor::{export_frame, render, Modality, Mount, SceneView};
use tsh_core::sim::{Simulation, TraceRecord};

const EXIT_INTERNAL: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGENT: u8 = 3;

#[derive(Parser)]
#[command(name = "tsh", version, about = "Deterministic air-ground co-simulation runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a scenario config and list every error and warning.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario to its horizon and write the trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Trace output (JSON Lines).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate to a tick and export camera frames.
    Render {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        tick: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Camera ids; all cameras when omitted.
        #[arg(long)]
        camera: Vec<String>,
        /// rgb, semantic or depth; the camera's own list when omitted.
        #[arg(long)]
        modality: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit statistics, and frames when --out is given, from a trace.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        tick: Option<u64>,
        #[arg(long)]
        camera: Vec<String>,
        #[arg(long)]
        modality: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the line protocol over TCP (--port) or stdio.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Compare two traces (or two configs) and report the first divergence.
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// Comma separated keys removed before comparing.
        #[arg(long, value_delimiter = ',')]
        ignore_fields: Vec<String>,
    },
    /// Build a counterfactual pair from an edit file and run both sides.
    Pair {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        edit: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for base.jsonl and edited.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ignore_fields: Vec<String>,
    },
    /// Simulate to a tick and write the world snapshot.
    Snapshot {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        tick: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore a snapshot and keep stepping.
    Resume {
        #[arg(long)]
        snapshot: PathBuf,
        /// Ticks to advance; up to the horizon when omitted.
        #[arg(long)]
        ticks: Option<u64>,
    },
}

struct Fail(u8, String);

impl From<ConfigError> for Fail {
    fn from(e: ConfigError) -> Self {
        Fail(EXIT_INVALID, e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> Fail {
    Fail(EXIT_INTERNAL, e.to_string())
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, Fail> {
    let (mut cfg, base) = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(Scenario::compile(cfg, &base)?)
}

fn modalities(names: &[String]) -> Result<Option<Vec<Modality>>, Fail> {
    if names.is_empty() {
        return Ok(None);
    }
    names
        .iter()
        .map(|n| Modality::parse(n).ok_or_else(|| Fail(EXIT_INVALID, format!("unknown modality `{n}`"))))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn run_to_end(scenario: Scenario, out: Option<&Path>) -> Result<Simulation, Fail> {
    let writer: Option<Box<dyn std::io::Write + Send>> = match out {
        Some(p) => Some(Box::new(BufWriter::new(File::create(p).map_err(internal)?))),
        None => None,
    };
    let horizon = scenario.config.horizon;
    let mut sim = Simulation::with_trace(scenario, writer).map_err(internal)?;
    let none = BTreeMap::new();
    while sim.tick() < horizon {
        sim.step(&none).map_err(internal)?;
    }
    sim.flush_trace().map_err(internal)?;
    Ok(sim)
}

fn cmd_validate(scenario: &Path) -> Result<(), Fail> {
    let (cfg, base) = ScenarioConfig::load(scenario)?;
    let (report, _) = validate_config(&cfg, &base);
    print!("{report}");
    println!(
        "{} error(s), {} warning(s)",
        report.error_count(),
        report.warnings().count()
    );
    if report.is_ok() {
        Ok(())
    } else {
        Err(Fail(EXIT_INVALID, String::new()))
    }
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<(), Fail> {
    let sc = load(scenario, seed)?;
    let started = Instant::now();
    let sim = run_to_end(sc, out)?;
    let c = sim.world().counters;
    println!("trace_hash {:016x}", sim.trace_hash());
    println!("ticks {}", sim.tick() + 1);
    println!(
        "entities {} spawned {} despawned {} completed {} blocked {}",
        sim.world().entities.len(),
        c.spawned,
        c.despawned,
        c.completed_routes,
        c.blocked_spawns
    );
    println!("wall_time {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn cmd_render(
    scenario: &Path,
    tick: u64,
    seed: Option<u64>,
    cameras: &[String],
    mods: &[String],
    out: &Path,
) -> Result<(), Fail> {
    let sc = load(scenario, seed)?;
    if tick > sc.config.horizon {
        return Err(Fail(EXIT_INVALID, format!("tick {tick} beyond horizon {}", sc.config.horizon)));
    }
    if !sc.config.subsystems.sensors {
        return Err(Fail(EXIT_INVALID, "sensors subsystem is disabled".into()));
    }
    let mods = modalities(mods)?;
    let specs: Vec<_> = if cameras.is_empty() {
        sc.config.cameras.clone()
    } else {
        cameras
            .iter()
            .map(|id| {
                sc.config
                    .cameras
                    .iter()
                    .find(|c| c.id == *id)
                    .cloned()
                    .ok_or_else(|| Fail(EXIT_INVALID, format!("UnknownCamera: `{id}`")))
            })
            .collect::<Result<_, _>>()?
    };
    let mut sim = Simulation::new(sc).map_err(internal)?;
    let none = BTreeMap::new();
    while sim.tick() < tick {
        sim.step(&none).map_err(internal)?;
    }
    let scene = SceneView::from_world(sim.world(), sim.network());
    for spec in &specs {
        let frame = render(spec, &scene, mods.as_deref()).map_err(|e| Fail(EXIT_INVALID, e.to_string()))?;
        for p in export_frame(&frame, out).map_err(internal)? {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn cmd_replay(
    scenario: &Path,
    trace: &Path,
    tick: Option<u64>,
    cameras: &[String],
    mods: &[String],
    out: Option<&Path>,
) -> Result<(), Fail> {
    let sc = load(scenario, None)?;
    let text = std::fs::read_to_string(trace).map_err(|e| Fail(EXIT_INVALID, e.to_string()))?;
    let mods = modalities(mods)?;
    for (i, line) in text.lines().enumerate() {
        let rec: TraceRecord =
            serde_json::from_str(line).map_err(|e| Fail(EXIT_INVALID, format!("trace line {}: {e}", i + 1)))?;
        if tick.is_some_and(|t| t != rec.tick) {
            continue;
        }
        let mut by_class: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &rec.entities {
            *by_class.entry(e.class.name()).or_default() += 1;
        }
        let counts: Vec<String> = by_class.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!(
            "tick {} entities {} [{}] events {} delivered {}",
            rec.tick,
            rec.entities.len(),
            counts.join(" "),
            rec.events.len(),
            rec.delivered
        );
        let Some(dir) = out else { continue };
        let scene = SceneView {
            network: &sc.network,
            entities: rec.entities.iter().collect(),
            weather: rec.weather,
            seed: sc.config.seed,
            tick: rec.tick,
        };
        for spec in &sc.config.cameras {
            if !cameras.is_empty() && !cameras.contains(&spec.id) {
                continue;
            }
            if let Mount::Entity { entity, .. } = &spec.mount {
                if !rec.entities.iter().any(|e| e.id == *entity) {
                    continue;
                }
            }
            let frame = render(spec, &scene, mods.as_deref()).map_err(internal)?;
            export_frame(&frame, dir).map_err(internal)?;
        }
    }
    Ok(())
}

fn read_text(p: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(p).map_err(|e| Fail(EXIT_INVALID, format!("{}: {e}", p.display())))
}

/// A single JSON object with a `map` key is a config, anything else a trace.
fn as_config(text: &str) -> Option<serde_json::Value> {
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("map").is_some().then_some(v)
}

fn report_trace_diff(a: &str, b: &str, ignore: &[String]) -> Result<(), Fail> {
    let d = diff_traces(a, b, ignore).map_err(|e| Fail(EXIT_INVALID, e))?;
    match d.first_divergence {
        None => {
            println!("identical ({} records)", d.records_a);
            Ok(())
        }
        Some(t) => {
            println!("first_divergence {t}");
            println!("divergent_records {}", d.divergent_records);
            for f in &d.fields {
                println!("  {f}");
            }
            Err(Fail(EXIT_DIVERGENT, String::new()))
        }
    }
}

fn cmd_diff(a: &Path, b: &Path, ignore: &[String]) -> Result<(), Fail> {
    let (ta, tb) = (read_text(a)?, read_text(b)?);
    if let (Some(ca), Some(cb)) = (as_config(&ta), as_config(&tb)) {
        let paths = structural_diff(&ca, &cb);
        if paths.is_empty() {
            println!("identical configs");
            return Ok(());
        }
        for p in &paths {
            println!("{p}");
        }
        return Err(Fail(EXIT_DIVERGENT, String::new()));
    }
    report_trace_diff(&ta, &tb, ignore)
}

fn cmd_pair(scenario: &Path, edit: &Path, seed: Option<u64>, out: &Path, ignore: &[String]) -> Result<(), Fail> {
    let (mut cfg, base) = ScenarioConfig::load(scenario)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let edit: CounterfactualEdit =
        serde_json::from_str(&read_text(edit)?).map_err(|e| Fail(EXIT_INVALID, format!("edit: {e}")))?;
    let (a, b) = counterfactual_pair(&cfg, &edit).map_err(|e| Fail(EXIT_INVALID, e.to_string()))?;
    let changed = structural_diff(
        &serde_json::to_value(&a).map_err(internal)?,
        &serde_json::to_value(&b).map_err(internal)?,
    );
    println!("edited: {}", changed.join(", "));
    std::fs::create_dir_all(out).map_err(internal)?;
    let (pa, pb) = (out.join("base.jsonl"), out.join("edited.jsonl"));
    let sa = run_to_end(Scenario::compile(a, &base)?, Some(&pa))?;
    let sb = run_to_end(Scenario::compile(b, &base)?, Some(&pb))?;
    println!("base   {:016x}", sa.trace_hash());
    println!("edited {:016x}", sb.trace_hash());
    report_trace_diff(&read_text(&pa)?, &read_text(&pb)?, ignore)
}

fn cmd_snapshot(scenario: &Path, tick: u64, seed: Option<u64>, out: &Path) -> Result<(), Fail> {
    let sc = load(scenario, seed)?;
    let mut sim = Simulation::new(sc).map_err(internal)?;
    let none = BTreeMap::new();
    while sim.tick() < tick {
        sim.step(&none).map_err(internal)?;
    }
    std::fs::write(out, sim.snapshot_json()).map_err(internal)?;
    println!("tick {}", sim.tick());
    println!("world_hash {:016x}", sim.world_hash());
    Ok(())
}

fn cmd_resume(snapshot: &Path, ticks: Option<u64>) -> Result<(), Fail> {
    let mut sim = Simulation::restore_json(&read_text(snapshot)?).map_err(|e| Fail(EXIT_INVALID, e.to_string()))?;
    println!("restored {:016x}", sim.world_hash());
    let end = ticks.map_or(sim.config().horizon, |n| sim.tick() + n);
    let none = BTreeMap::new();
    while sim.tick() < end {
        sim.step(&none).map_err(internal)?;
    }
    println!("tick {}", sim.tick());
    println!("world_hash {:016x}", sim.world_hash());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TSH_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Validate { scenario } => cmd_validate(scenario),
        Cmd::Run { scenario, seed, out } => cmd_run(scenario, *seed, out.as_deref()),
        Cmd::Render {
            scenario,
            tick,
            seed,
            camera,
            modality,
            out,
        } => cmd_render(scenario, *tick, *seed, camera, modality, out),
        Cmd::Replay {
            scenario,
            trace,
            tick,
            camera,
            modality,
            out,
        } => cmd_replay(scenario, trace, *tick, camera, modality, out.as_deref()),
        Cmd::Serve { port, host } => {
            let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
            match port {
                Some(p) => serve_tcp((host.as_str(), *p), cwd),
                None => serve_stdio(cwd),
            }
            .map_err(internal)
        }
        Cmd::Diff { a, b, ignore_fields } => cmd_diff(a, b, ignore_fields),
        Cmd::Pair {
            scenario,
            edit,
            seed,
            out,
            ignore_fields,
        } => cmd_pair(scenario, edit, *seed, out, ignore_fields),
        Cmd::Snapshot {
            scenario,
            tick,
            seed,
            out,
        } => cmd_snapshot(scenario, *tick, *seed, out),
        Cmd::Resume { snapshot, ticks } => cmd_resume(snapshot, *ticks),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(code)
        }
    }
}
