//! Desk-scale cloth manipulation: a mass-spring pick-and-place simulator,
//! a templated instruction language over cloth parts, decomposition of long
//! demonstrations into single-step skills, a language-conditioned pixel
//! affordance model trained from scratch, and a planner/executor pair that
//! composes skills into multi-step folding episodes with a benchmark harness.

pub mod camera;
pub mod cli;
pub mod eval;
pub mod executor;
pub mod grammar;
pub mod llm;
pub mod model;
pub mod planner;
pub mod sim;
pub mod skill;

pub use camera::CameraModel;
pub use grammar::{ActionKind, BasicInstruction, ClothType};
pub use sim::{ClothState, ClothTemplate, SimConfig};

// Public signatures use glam vectors; re-export the crate so dependents
// stay version-aligned.
pub use glam;

/// FNV-1a 64-bit hash. Used wherever the crate needs a small stable
/// fingerprint (vocabulary versions, mock-transport keys, trial seeds).
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
