//! Deterministic discrete-event simulator and benchmark harness for mobile
//! ad-hoc network routing: DSDV, AODV, DSR and ZRP over a random waypoint
//! scenario, a unit-disk CSMA medium, and CBR traffic.

pub mod config;
pub mod engine;
pub mod harness;
pub mod medium;
pub mod metrics;
pub mod mobility;
pub mod node;
pub mod protocols;
pub mod routing;
pub mod sim;
pub mod text;
pub mod traffic;

pub use engine::SimTime;
pub use node::NodeId;
