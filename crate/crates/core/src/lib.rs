//! Deterministic air-ground co-simulation: lane-based traffic, kinematic
//! aircraft, ray-cast multi-modal cameras, timed scene edits, a lossy
//! message channel and an episodic control interface.

pub mod air;
pub mod causal;
pub mod comms;
pub mod config;
pub mod entity;
pub mod geom;
pub mod ground;
pub mod map;
pub mod rng;
pub mod sensor;
pub mod sim;
pub mod diff;
pub mod env;
pub mod protocol;
