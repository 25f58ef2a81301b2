//! Static and runtime detection of network misconfigurations in Kubernetes
//! application manifests.
//!
//! The pipeline: [`ingest`] parses rendered manifests into an
//! [`model::ApplicationBundle`], [`snapshot`] loads runtime port observations,
//! [`rules`] produces findings, [`netpol`] evaluates network policies and
//! [`report`] aggregates and renders the result.

pub mod ingest;
pub mod model;
pub mod netpol;
pub mod report;
pub mod rules;
pub mod selectors;
pub mod snapshot;
