use std::path::PathBuf;
use std::sync::Arc;

use toolcoder_core::{load_toolbox, FunctionRepository, PipelineConfig, RunnerConfig, Toolbox};
use toolcoder_eval::{aggregate, cumulative_csv, render_table, run_suite, Suite, SuiteError, SuiteOptions, SUCCESS_DEFINITION};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn toolbox() -> Toolbox {
    load_toolbox(fixtures().join("tmdb_toolbox.json")).unwrap()
}

/// The shipped suite without worlds: called paths then come from the
/// programs' placeholders and no request log exists.
fn offline_suite() -> Suite {
    let mut suite = Suite::load(fixtures().join("suite/suite.json")).unwrap();
    for s in &mut suite.scenarios {
        s.fixture_path = None;
    }
    suite
}

const OK_DOC: &str = r#"{"status":"ok","stdout":"Number of movies directed by Sofia Coppola: 8\n"}"#;
const KEY_ERROR_DOC: &str = r#"{"status":"exception","stdout":"","exception":{"type":"KeyError","message":"'directing_credits'","frames":[{"file":"program.py","line":80,"func":"<module>","code":"main()"}]}}"#;

/// A shell runner that fails programs still reading `directing_credits`.
fn shell_runner() -> RunnerConfig {
    let script = r#"if grep -q directing_credits "$1"; then printf '%s' "$KEY_ERROR_DOC"; else printf '%s' "$OK_DOC"; fi"#;
    RunnerConfig::new(vec!["sh".into(), "-c".into(), script.into(), "sh".into(), "{program}".into()], 10_000)
        .unwrap()
        .with_env("OK_DOC", OK_DOC)
        .with_env("KEY_ERROR_DOC", KEY_ERROR_DOC)
}

fn options(config: PipelineConfig, workers: usize) -> SuiteOptions {
    let mut opts = SuiteOptions::new(config, shell_runner());
    opts.workers = workers;
    opts
}

#[test]
fn manifest_paths_resolve_next_to_the_manifest() {
    let suite = Suite::load(fixtures().join("suite/suite.json")).unwrap();
    assert_eq!(suite.scenarios.len(), 10);
    suite.validate(true).unwrap();
    assert!(suite.scenarios[0].transcript_path.as_ref().unwrap().is_file());
}

#[test]
fn missing_files_are_reported() {
    let mut suite = offline_suite();
    suite.scenarios[3].transcript_path = Some(fixtures().join("nope.json"));
    assert!(matches!(suite.validate(true), Err(SuiteError::MissingFile { index: 3, .. })));
    assert!(matches!(Suite::new(vec![]).validate(true), Err(SuiteError::Empty)));
}

#[test]
fn suite_run_with_review() {
    let (report, outcomes) = run_suite(&offline_suite(), &toolbox(), &options(PipelineConfig::default(), 3));
    assert_eq!(report.success_rate, 1.0);
    assert_eq!(report.accuracy, Some(1.0));
    assert_eq!(report.path_rate, Some(1.0));
    assert_eq!(report.correctness, None);
    assert_eq!(report.avg_llm_calls, 4.3);
    let ids: Vec<_> = outcomes.iter().map(|o| o.task_id.as_str()).collect();
    assert_eq!(ids, (0..10).map(|i| format!("sofia-0{i}")).collect::<Vec<_>>());
    for o in &outcomes {
        let expected = if [2, 5, 8].contains(&o.index) { 1 } else { 0 };
        assert_eq!(o.reflection_rounds, expected, "{}", o.task_id);
    }
    assert_eq!(report.header.success_definition, SUCCESS_DEFINITION);
    assert!(report.header.ablations.is_empty());
}

#[test]
fn disabling_reflection_lowers_success() {
    let config = PipelineConfig { use_reflection: false, ..PipelineConfig::default() };
    let (report, outcomes) = run_suite(&offline_suite(), &toolbox(), &options(config, 2));
    assert_eq!(report.success_rate, 0.7);
    assert!(outcomes.iter().all(|o| o.reflection_rounds == 0));
    assert_eq!(report.header.ablations, vec!["no-reflection"]);
    assert!(render_table(&report).contains("# ablations: no-reflection"));
}

#[test]
fn worker_count_does_not_change_the_report() {
    let serial = run_suite(&offline_suite(), &toolbox(), &options(PipelineConfig::default(), 1)).0;
    let parallel = run_suite(&offline_suite(), &toolbox(), &options(PipelineConfig::default(), 4)).0;
    assert_eq!(serial, parallel);
    assert_eq!(cumulative_csv(&serial), cumulative_csv(&parallel));
}

#[test]
fn shared_repository_collects_harvests() {
    let mut opts = options(PipelineConfig::default(), 2);
    let repo = Arc::new(FunctionRepository::in_memory());
    opts.repo = Some(repo.clone());
    let (report, outcomes) = run_suite(&offline_suite(), &toolbox(), &opts);
    assert_eq!(report.success_rate, 1.0);
    assert_eq!(repo.len(), 2);
    assert!(outcomes.iter().any(|o| !o.trace.harvested.is_empty()));
}

#[test]
fn broken_runner_fails_scenarios_without_aborting() {
    let mut opts = options(PipelineConfig::default(), 2);
    opts.runner = RunnerConfig::new(vec!["/nonexistent/runner".into()], 1_000).unwrap();
    let (report, outcomes) = run_suite(&offline_suite(), &toolbox(), &opts);
    assert_eq!(outcomes.len(), 10);
    assert_eq!(report.success_rate, 0.0);
    assert_eq!(report.accuracy, Some(0.0));
    assert_eq!(aggregate(&outcomes, &opts.config), report);
}
