use semitrace::config::RunConfig;
use semitrace::model::TestFunction;
use semitrace::verify::{run_report, Stage};
use semitrace::Error;

#[test]
fn free_problem_passes_every_verify_row() {
    let report = run_report(&RunConfig::free(), Stage::Verify).unwrap();
    for row in &report.criteria {
        assert!(row.passed, "{}", row.line());
    }
    assert_eq!(report.criteria.len(), Stage::Verify.criteria().len());
    assert!(report.fit.is_some() && report.kernel.is_some());
}

fn small_trace_config() -> RunConfig {
    let mut cfg = RunConfig::generic();
    cfg.problem.phi = TestFunction::bump_on(-2.0, 1.0).unwrap();
    cfg.ladder.ps = vec![2.0, 3.0, 4.0];
    cfg.kernel.max_p = 3.0;
    cfg
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small_trace_config();
    let a = run_report(&cfg, Stage::Trace).unwrap();
    let b = run_report(&cfg, Stage::Trace).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.passed());
}

#[test]
fn config_round_trips_through_json() {
    for cfg in [RunConfig::free(), RunConfig::generic()] {
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
    }
}

#[test]
fn flux_carrying_field_is_rejected() {
    let text = RunConfig::generic().to_json().replace(r#""constant": 0.0,"#, r#""constant": 0.25,"#);
    assert_ne!(text, RunConfig::generic().to_json());
    let err = RunConfig::from_json(&text).unwrap_err();
    assert!(err.to_string().contains("flux"), "{err}");
}

#[test]
fn unknown_fields_are_reported_with_their_path() {
    let text = RunConfig::free().to_json().replacen("\"seed\"", "\"sede\"", 1);
    match RunConfig::from_json(&text) {
        Err(e @ (Error::Json(_) | Error::Config { .. })) => assert!(e.to_string().contains("sede"), "{e}"),
        other => panic!("expected a schema error, got {other:?}"),
    }
}
