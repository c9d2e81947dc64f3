//! Sweep configuration, dataset files, grid execution, reporting and the verification suites.

mod cell;
mod config;
mod io;
mod report;
mod sweep;
mod verify;

pub use cell::{generate_cell, CellData};
pub use config::{default_gap_grid, load_config, DgpKind, ExtractorMode, SweepConfig};
pub use io::{
    fmt_f64, load_latents_csv, read_eval_csv, read_numeric_csv, read_observational_csv, read_simulator_csv,
    write_eval_csv, write_json, write_latents_csv, write_observational_csv, write_simulator_csv,
};
pub use report::{format_report_table, generate_report, write_report_csv, ReportRow, REPORT_COLUMNS};
pub use sweep::{read_results_csv, run_cell, run_sweep, write_results_csv, SweepResultRow, RESULT_COLUMNS};
pub use verify::{
    random_gaps, random_linear_instance, run_verification, verify_analytic, verify_decomposition, verify_descent,
    verify_generalization, CheckOutcome, LinearInstance, VerifyConfig, ANALYTIC_REL_TOL, DECOMPOSITION_ABS_TOL,
    GENERALIZATION_REL_TOL,
};
