//! Disentanglement and adaptation metrics.

mod mig;
mod probe;
mod report;
mod traverse;

pub use mig::{discrete_entropy, discrete_mutual_info, equal_width_codes, factor_codes, mig, MigConfig};
pub use probe::{probe_accuracy, proxy_discrepancy, proxy_from_error, ProbeConfig};
pub use report::{active_units, evaluate, EvalConfig, MetricsReport};
pub use traverse::{grid, traverse, TraversalSet};
