//! Skillforge: a desk-scale pipeline for building, retrieving, and adapting
//! insertion skills in a procedural 2D assembly environment.
//!
//! The crate covers the full loop: train specialist policies with PPO,
//! store them in a persistent skill library together with task geometry and
//! disassembly trajectories, learn task features and a transfer-success
//! predictor, retrieve the most promising skill for a new task, and
//! fine-tune it with PPO plus prioritized self-imitation. A continual
//! driver grows the library batch by batch.

pub mod continual;
pub mod disassembly;
pub mod env;
pub mod error;
pub mod features;
pub mod geom;
pub mod library;
pub mod mdp;
pub mod nn;
pub mod parallel;
pub mod predictor;
pub mod retrieval;
pub mod rl;
pub mod rng;
pub mod signature;
pub mod tabular;
pub mod task;
pub mod vae;

pub use error::{Error, Result};
