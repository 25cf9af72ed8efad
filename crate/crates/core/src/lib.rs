//! Simulator of an M1-style cache hierarchy with a shared, CPU-exclusive
//! system-level cache, and a laboratory of occupancy side-channel attacks
//! and countermeasures built on it.

pub mod attacks;
pub mod cache;
pub mod experiment;
pub mod hierarchy;
pub mod latency;
pub mod mem;
pub mod mitigation;
pub mod probe;
pub mod revlab;
pub mod victims;
pub mod sched;
pub mod stats;

pub use cache::Agent;
pub use hierarchy::{Hierarchy, HierarchyConfig};
pub use latency::Level;
