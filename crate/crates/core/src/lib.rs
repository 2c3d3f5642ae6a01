//! Code review mining: collection plans, forge adapters, a resumable
//! collector with a raw archive, CSV datasets and declarative analyses.

pub mod adapters;
pub mod analysis;
pub mod archive;
pub mod catalog;
pub mod collector;
pub mod dataset;
pub mod http;
pub mod orchestrator;
pub mod par;
pub mod plan;
pub mod platform_access;
pub mod time;

pub use catalog::{catalog, MetricCatalog};
pub use par::Execution;
pub use plan::CollectionPlan;
pub use platform_access::{PlatformConfig, PlatformKind};
