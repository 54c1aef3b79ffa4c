//! Benchmark harness: runs scenario suites through the pipeline, each against
//! its own mock world, and scores them with Success%, Accuracy%, Path% and
//! Correctness%, plus the cumulative curves over the scenario order.

pub mod metrics;
pub mod report;
pub mod suite;

pub use metrics::{accuracy, correctness, cumulative_series, path_rate, CumulativePoint, GroundTruthCall, MetricError};
pub use report::{aggregate, cumulative_csv, render_table, MetricsReport, ScenarioSummary, SUCCESS_DEFINITION};
pub use suite::{run_scenario, run_scenarios, Scenario, ScenarioOutcome, Suite, SuiteError, SuiteOptions};

use toolcoder_core::Toolbox;

/// Runs a suite and aggregates it. Per-scenario failures are recorded in the
/// outcomes and never abort the run.
pub fn run_suite(suite: &Suite, toolbox: &Toolbox, opts: &SuiteOptions) -> (MetricsReport, Vec<ScenarioOutcome>) {
    let outcomes = run_scenarios(suite, toolbox, opts);
    (aggregate(&outcomes, &opts.config), outcomes)
}
