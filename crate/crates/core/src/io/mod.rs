//! Data files, configuration and the fit / simulate / diagnose workflows.

mod data;
mod kv;
mod workflow;

pub use data::{export_dataset, load_dataset, load_from_str, ColumnSchema, LoadedData};
pub use kv::KeyValues;
pub use workflow::{
    diagnose, fit, fit_loaded, fmt_num, read_trace, simulate, write_fit, write_simulation, write_trace, EstimateRow,
    FitReport, ModelFile, RunOptions, SimulationConfig, TraceDiagnostic, REPORT_DIGITS,
};
