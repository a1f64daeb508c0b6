//! GTSP solving toolkit: seeded instance families, classical reference
//! solvers, an MTZ integer-programming emitter, and a multimodal
//! (graph + image) constructive policy trained with REINFORCE.

pub mod baselines;
pub mod image;
pub mod instance;
pub mod nn;
pub mod policy;
pub mod training;
