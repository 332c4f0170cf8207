//! Deterministic simulation of staleness-aware asynchronous federated learning.
//!
//! The crate covers the whole stack: small differentiable models ([`model`]),
//! seeded non-IID data ([`data`]), server/device weighting rules
//! ([`aggregation`]), request-slot policies ([`policy`]), the discrete-event
//! simulator ([`sim`]) and experiment orchestration ([`harness`]).
//!
//! ```
//! use fedasmu_core::sim::{run_fedasmu, SimSettings};
//!
//! let settings = SimSettings { rounds: 20, ..SimSettings::default() };
//! let log = run_fedasmu(&settings, 7).unwrap();
//! assert!(log.final_accuracy().unwrap() > 0.2);
//! ```

pub mod aggregation;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod params;
pub mod policy;
pub mod sim;

pub use aggregation::{DeviceControls, ServerControls, SigmaMode};
pub use data::{Dataset, DatasetSpec, Partition};
pub use error::{Error, Result};
pub use model::{Batch, ModelKind, ModelSpec};
pub use params::ParamVector;
pub use policy::{MetaPolicy, QTable, SlotStrategy};
pub use sim::{Protocol, RunLog, SimConfig, SimSettings};
