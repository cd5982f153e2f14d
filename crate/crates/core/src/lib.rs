//! Adversarial mixture density network policies for longitudinal vehicle
//! following.
//!
//! The crate bundles everything needed to run the experiment end to end on a
//! desktop: a point-mass two-vehicle simulator, a scripted demonstrator, a
//! reinforcement-learning lead-vehicle adversary, dataset generation and I/O,
//! a small hand-differentiated MLP with Adam, training loops for the FFN / MDN
//! / AMDN policy variants, and naturalistic plus adversarial evaluation.

pub mod adversary;
pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod drivers;
pub mod eval;
pub mod fmt;
pub mod heads;
pub mod nnet;
pub mod pipeline;
pub mod sim;
pub mod trainer;
