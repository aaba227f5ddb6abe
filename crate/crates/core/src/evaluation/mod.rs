//! Metrics on prediction sets, the normalized set-size integral, the
//! repeated-split coverage study and run reports.

mod coverage;
mod ik;
mod metrics;
mod report;

pub use coverage::{
    beta_coverage_check, beta_moments, beta_parameters, coverage_study, BetaCheck, ClassCoverage,
    CoverageStudy,
};
pub use ik::{accuracy_view, alpha_grid, compute_i_k, sets_from_matrix, IkCurve, ALPHA_FLOOR};
pub use metrics::{
    coverage, mean_set_size, median, minority_prevalence, top_k_accuracy, trapezoid, Prevalence,
};
pub use report::{
    evaluate, evaluate_with, median_report, sweep, write_curve_csv, EvalReport, ReportMetadata,
    SweepReport,
};
