//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use sodsim::geometry::Vec3;
use sodsim::radio::{NetParams, RadioNode, RadioWorld};
use sodsim::scenario::{parse_scenario, ScenarioSpec};

/// A scenario from the repository's `scenarios/` directory.
pub fn shipped_scenario(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// `n` drones on a jittered grid, 100 m apart, with 150 m radios.
pub fn grid_world(n: u32) -> RadioWorld {
    let mut w = RadioWorld::new(NetParams { p_loss: 0.0, hop_latency: 1 });
    let side = (n as f64).sqrt().ceil() as u32;
    for i in 0..n {
        let jitter = (i * 37 % 11) as f64;
        let p = Vec3::new((i % side) as f64 * 100.0 + jitter, (i / side) as f64 * 100.0, 50.0);
        w.insert(RadioNode::drone(i, p, 150.0));
    }
    w
}
