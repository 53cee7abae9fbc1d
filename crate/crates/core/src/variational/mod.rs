//! A constructive Borwein-Preiss variational principle on finite metric
//! spaces and the doubling-of-variables harness behind the comparison
//! principle.

mod borwein_preiss;
mod doubling;
mod metric;

pub use borwein_preiss::{borwein_preiss, certify, BPCertificate, BPResult};
pub use doubling::{
    build_phi, comparison_gap, dictionary_distances, doubling_experiment, doubling_from_tables,
    DoublingParams, DoublingReport, DoublingRow, DoublingTables,
};
pub use metric::{FiniteMetricSpace, MetricSpace, ProductSpace, METRIC_TOLERANCE};
