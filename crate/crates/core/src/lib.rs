//! Round-based simulator for affinity-weighted personalized federated
//! learning in churning client populations.
//!
//! Each client owns a model split into a feature extractor and a classifier.
//! Extractors are refined by borrowing from the clients that helped most in
//! the past (tracked in an affinity matrix), while a shared classifier is
//! trained on the server from per-class mean representations that blend the
//! current and previous round. A FedAvg baseline, a Bernoulli churn model,
//! non-IID data partitioning and an experiment harness round it out.

pub mod affinity;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod protocol;
pub mod representation;
pub mod seed;

pub use error::{Error, Result};
