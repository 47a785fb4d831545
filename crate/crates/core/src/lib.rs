//! Congestion-aware service composition over a simulated fat-tree network.
//!
//! The crate models the four composition procedures (find, invoke, return
//! and manage) together with the pieces they act on:
//!
//! - [`registry`]: the nginx-style service catalog and its preference order.
//! - [`topology`]: the fat tree, hop distances, proximity ranking, and the
//!   controller's per-service flow tables with blacklisting.
//! - [`engine`]: simulated service engines with a linear congestion penalty.
//! - [`composition`]: tuple-syntax requests, their dependency DAG and memo.
//! - [`firm`]: the controller, the deployment selection policies, the
//!   promoter, and the event-driven executor.
//! - [`sim`]: scenarios, workloads, metrics and mode comparison.
//!
//! Deployment selection is pluggable: every policy implements
//! [`firm::DeploymentPolicy`] and is looked up by name in a
//! [`firm::PolicyRegistry`]. The built-in `base`, `affinity` and `firm`
//! policies cover round-robin, sticky, and congestion-aware selection.

pub mod composition;
pub mod engine;
mod error;
pub mod firm;
pub mod registry;
pub mod sim;
pub mod time;
pub mod topology;

pub use error::{Error, Result};
pub use time::SimTime;
