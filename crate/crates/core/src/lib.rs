//! Deterministic discrete-event simulator for swarms of drones.

pub mod drone;
pub mod fleet;
pub mod geometry;
pub mod gfms;
pub mod ids;
pub mod kernel;
pub mod membership;
pub mod policy;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod swarm;
