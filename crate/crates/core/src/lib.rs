//! Optimal on-line selection of an alternating subsequence from uniform
//! observations: value and threshold functions by backward recursion,
//! simulation of the finite-horizon and limiting policies, and estimators
//! for the limiting variance constant of the selection count.

pub mod bellman;
pub mod cache;
pub mod chain;
pub mod config;
pub mod estimators;
pub mod numerics;
pub mod policies;
pub mod report;
pub mod rng;
pub mod stats;
pub mod verify;
