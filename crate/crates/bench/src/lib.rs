//! Per-step timing harness for the Ybus and element-wise methods, with an
//! untimed cross-method equivalence check and CSV or markdown reports.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{Assembly, BenchConfig, Derivatives, Method, OutputFormat, Reduction, Storage};
pub use error::{BenchError, Result};
pub use report::{
    emit_ratio_report, emit_report, report_notes, time_cost_ratio, ElementwiseTimings, RatioRow,
    StepTimings, Verification, YbusTimings, CSV_HEADER,
};
pub use run::{prepare_case, run_bench, verify_case, PreparedCase, VERIFY_TOL};
