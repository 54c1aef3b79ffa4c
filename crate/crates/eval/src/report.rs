//! Aggregation of scenario outcomes into a metrics report, plus its text and
//! CSV renderings.

use serde::{Deserialize, Serialize};
use toolcoder_core::{PipelineConfig, FORMAT_VERSION};

use crate::metrics::{cumulative_series, CumulativePoint};
use crate::suite::ScenarioOutcome;

/// How Success is decided offline; recorded in every report.
pub const SUCCESS_DEFINITION: &str =
    "success = last execution ok AND final answer matches the ground-truth answer (when one is given); no human evaluation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub format_version: u32,
    pub success_definition: String,
    /// Ablations switched on for this run, e.g. `no-reflection`.
    pub ablations: Vec<String>,
    pub config: PipelineConfig,
    pub scenarios: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub header: ReportHeader,
    pub success_rate: f64,
    /// Averages over the scenarios that carry the relevant ground truth;
    /// absent when none do.
    pub accuracy: Option<f64>,
    pub path_rate: Option<f64>,
    pub correctness: Option<f64>,
    pub avg_llm_calls: f64,
    pub cumulative: Vec<CumulativePoint>,
    pub scenarios: Vec<ScenarioSummary>,
}

/// Per-scenario line of the report (the full trace is kept out of it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub task_id: String,
    pub success: bool,
    pub accuracy: Option<bool>,
    pub path_rate: Option<f64>,
    pub correctness: Option<f64>,
    pub llm_calls: u64,
    pub reflection_rounds: u32,
    pub final_answer: Option<String>,
    pub error: Option<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Deterministic fold over outcomes in scenario order.
pub fn aggregate(outcomes: &[ScenarioOutcome], config: &PipelineConfig) -> MetricsReport {
    let n = outcomes.len();
    let success: Vec<bool> = outcomes.iter().map(|o| o.success).collect();
    let accuracy: Vec<Option<bool>> = outcomes.iter().map(|o| o.accuracy).collect();
    MetricsReport {
        header: ReportHeader {
            format_version: FORMAT_VERSION,
            success_definition: SUCCESS_DEFINITION.to_string(),
            ablations: config.ablations().into_iter().map(String::from).collect(),
            config: config.clone(),
            scenarios: n,
        },
        success_rate: mean(success.iter().map(|&s| f64::from(u8::from(s)))).unwrap_or(0.0),
        accuracy: mean(accuracy.iter().flatten().map(|&a| f64::from(u8::from(a)))),
        path_rate: mean(outcomes.iter().filter_map(|o| o.path_rate)),
        correctness: mean(outcomes.iter().filter_map(|o| o.correctness)),
        avg_llm_calls: mean(outcomes.iter().map(|o| o.llm_calls as f64)).unwrap_or(0.0),
        cumulative: cumulative_series(&success, &accuracy),
        scenarios: outcomes
            .iter()
            .map(|o| ScenarioSummary {
                task_id: o.task_id.clone(),
                success: o.success,
                accuracy: o.accuracy,
                path_rate: o.path_rate,
                correctness: o.correctness,
                llm_calls: o.llm_calls,
                reflection_rounds: o.reflection_rounds,
                final_answer: o.final_answer.clone(),
                error: o.error.clone(),
            })
            .collect(),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", v * 100.0))
}

/// Plain-text summary table.
pub fn render_table(report: &MetricsReport) -> String {
    let ablations = if report.header.ablations.is_empty() {
        "none".to_string()
    } else {
        report.header.ablations.join(", ")
    };
    let mut out = String::new();
    out.push_str(&format!("# {}\n", report.header.success_definition));
    out.push_str(&format!("# ablations: {ablations}\n"));
    out.push_str(&format!("# scenarios: {}\n", report.header.scenarios));
    out.push_str(&format!(
        "{:<12}{:>10}{:>10}{:>10}{:>14}{:>12}\n",
        "", "Success%", "Accuracy%", "Path%", "Correctness%", "LLM calls"
    ));
    out.push_str(&format!(
        "{:<12}{:>10}{:>10}{:>10}{:>14}{:>12.2}\n",
        "overall",
        pct(Some(report.success_rate)),
        pct(report.accuracy),
        pct(report.path_rate),
        pct(report.correctness),
        report.avg_llm_calls
    ));
    out
}

/// The cumulative curve as CSV.
pub fn cumulative_csv(report: &MetricsReport) -> String {
    let mut out = String::from("proportion,cum_success,cum_accuracy\n");
    for p in &report.cumulative {
        let acc = p.cum_accuracy.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", p.proportion, p.cum_success, acc));
    }
    out
}
