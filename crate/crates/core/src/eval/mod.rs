//! Evaluation protocol: range mapping, scale alignment, log-space CRF
//! correction and PU21-encoded metrics, plus JSON/CSV reporting.

pub mod protocol;
pub mod pu21;
pub mod report;

pub use protocol::{evaluate, Metrics};
pub use report::{EvalReport, ReportSet};
