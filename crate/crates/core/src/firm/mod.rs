//! The control loop: endpoint resolution, engine report handling,
//! blacklisting triggers, the promoter, and the request executor.

mod affinity;
mod controller;
mod log;
mod policy;
mod promoter;
mod runtime;

pub use affinity::{AffinityTable, ClientId};
pub use controller::{Controller, ManageConfig, ServiceProperties, TriggerOutcome, UpdateTrigger};
pub use log::{EventKind, EventLog, LogRecord};
pub use policy::{
    AffinityPolicy, DeploymentPolicy, FirmPolicy, PolicyFactory, PolicyRegistry, ReportAction,
    RoundRobinPolicy, SelectionContext, SelectionRequest,
};
pub use promoter::PromoterState;
pub use runtime::{execute, find, Arrival, EndpointBinding, ExecuteOutput, ExecuteSummary, RuntimeOptions, Workload};
