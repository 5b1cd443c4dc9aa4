//! Soft actor-critic with twin critics, target networks, automatic
//! temperature and prioritized replay.

mod agent;
mod replay;
mod verify;

pub use agent::{polyak_update, Batch, LossReport, SacAgent, SacConfig, SacGrads, UpdateNoise};
pub use replay::{ReplayBuffer, ReplayParts, SampledBatch, SumTree, Transition, TransitionShape};
pub use verify::{verify_gradients, GradientReport};

#[cfg(test)]
mod tests;
