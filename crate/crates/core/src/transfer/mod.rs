//! Ulam discretisation of the transfer operator and its punctured variant.

mod partition;
mod probe;
mod scan;
mod spectral;
mod ulam;

pub use partition::{Grading, Partition};
pub use probe::{ly_probe, LyProbe};
pub use scan::{escape_derivative_scan, hole_measure, EscapeRow, EscapeScan, PartitionRule, Refinement};
pub use spectral::{power_leading, survival_log_series, survival_log_series_capped, SpectralData};
pub use ulam::{build_ulam, operator_l1_distance, puncture, BuildMethod, PuncturedOperator, UlamOperator};
