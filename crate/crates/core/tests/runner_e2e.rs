mod common;

use std::fs;

use recaudit::runner::{
    cmd_analyze, cmd_mitigate, cmd_probe, cmd_report, Analysis, ExperimentConfig, Pipeline, RunnerError,
};
use tempfile::TempDir;

use common::{fiction_bias, full_pipeline, pipeline};

#[test]
fn default_matrix_has_600_records_and_reruns_for_free() {
    let tmp = TempDir::new().unwrap();
    let p = pipeline(tmp.path(), "");
    let first = p.run().unwrap();
    assert_eq!(first.planned, 600);
    assert_eq!(first.completed, 600);
    assert_eq!(first.failed, 0);
    assert_eq!(first.backend_calls, 600);
    let records = fs::read(p.config.records_path()).unwrap();
    assert_eq!(records.iter().filter(|&&b| b == b'\n').count(), 600);

    let again = pipeline(tmp.path(), "");
    let second = again.run().unwrap();
    assert_eq!(second.skipped, 600);
    assert_eq!(second.completed, 0);
    assert_eq!(second.backend_calls, 0);
    assert_eq!(fs::read(again.config.records_path()).unwrap(), records);
}

#[test]
fn strict_replay_with_a_missing_key_fails_only_that_record() {
    let tmp = TempDir::new().unwrap();
    let rec = tmp.path().join("rec");
    fs::create_dir(&rec).unwrap();
    let recorded = pipeline(&rec, "[personas]\nfilter = \"occupation=chef\"\n");
    assert_eq!(recorded.run().unwrap().completed, 50);

    let responses = fs::read_to_string(recorded.config.responses_path()).unwrap();
    let kept: Vec<&str> = responses.lines().skip(1).collect();
    assert_eq!(kept.len(), 49);
    let play = tmp.path().join("play");
    fs::create_dir(&play).unwrap();
    fs::write(play.join("responses.jsonl"), kept.join("\n") + "\n").unwrap();
    let replayed = pipeline(
        &play,
        r#"
[personas]
filter = "occupation=chef"
[provider]
kind = "replay"
replay_path = "responses.jsonl"
catalog_labels = true
"#,
    );
    let summary = replayed.run().unwrap();
    assert_eq!(
        (summary.completed, summary.failed, summary.backend_calls),
        (49, 1, 0)
    );
    assert!(summary.check(0.05).is_ok());
    assert!(summary.check(0.0).is_err());
}

#[test]
fn single_group_analysis_is_a_zero_matrix() {
    let tmp = TempDir::new().unwrap();
    let p = pipeline(tmp.path(), "[personas]\nfilter = \"occupation=athlete\"\n");
    p.run().unwrap();
    let one: Analysis = toml::from_str(
        r#"
id = "all"
domain = "movies"
groups = [{ label = "athletes", selector = "occupation=athlete" }]
"#,
    )
    .unwrap();
    let result = cmd_analyze(&p, &[one]).unwrap();
    assert_eq!(result[0].kld, vec![vec![0.0]]);
    assert!(result[0].fractions.is_empty());
    let kld = fs::read_to_string(tmp.path().join("out/analysis/all.kld.csv")).unwrap();
    assert_eq!(kld, "kl(row||col) eps=0.000000001,athletes\nathletes,0.000000\n");
}

#[test]
fn bad_selectors_and_empty_groups_are_errors() {
    let err = ExperimentConfig::parse("[personas]\nfilter = \"planet=mars\"\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);

    let tmp = TempDir::new().unwrap();
    let p = pipeline(tmp.path(), "[personas]\nfilter = \"occupation=athlete\"\n");
    p.run().unwrap();
    let empty: Analysis = toml::from_str(
        r#"
id = "x"
domain = "movies"
groups = [{ label = "a", selector = "occupation=athlete" }, { label = "b", selector = "occupation=pilot" }]
"#,
    )
    .unwrap();
    match cmd_analyze(&p, &[empty]) {
        Err(RunnerError::EmptyGroup { label, selector, .. }) => {
            assert_eq!(label, "b");
            assert_eq!(selector, "occupation=pilot");
        }
        other => panic!("expected an empty-group error, got {other:?}"),
    }
}

#[test]
fn empty_run_reports_no_records() {
    let tmp = TempDir::new().unwrap();
    let p = pipeline(
        tmp.path(),
        r#"
[personas]
filter = "occupation=pilot"
[[analyses]]
id = "g"
domain = "movies"
groups = [{ label = "f", selector = "gender=female" }]
"#,
    );
    let summary = p.run().unwrap();
    assert_eq!(summary.planned, 0);
    assert!(summary.check(0.05).is_ok());
    let report = cmd_report(&p).unwrap();
    assert!(report.contains("no records"));
    assert!(report.contains(&format!("run id (config digest): {}", p.run_id)));
    assert!(report.contains("template version"));
}

#[test]
fn strong_fiction_bias_is_detected() {
    let tmp = TempDir::new().unwrap();
    let p = pipeline(tmp.path(), &fiction_bias(0.9, 0.1, 4, 5));
    p.run().unwrap();
    let rows = cmd_probe(&p, None).unwrap();
    let e = &rows[0].run.evaluation;
    assert!(e.accuracy >= 0.9, "acc {}", e.accuracy);
    assert!(e.scores.spd >= 0.7, "spd {}", e.scores.spd);
    let csv = fs::read_to_string(tmp.path().join("out/probe.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("fiction,books,"));
}

#[test]
fn unknown_question_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let p = pipeline(tmp.path(), &fiction_bias(0.9, 0.1, 1, 0));
    assert!(matches!(cmd_probe(&p, Some("nope")), Err(RunnerError::Config(_))));
}

#[test]
fn detectability_grows_with_bias() {
    let ratios = [0.5, 0.6, 0.7, 0.8, 0.9];
    let seeds = 10;
    let mut mean_acc = Vec::new();
    for r in ratios {
        let mut total = 0.0;
        for seed in 0..seeds {
            let tmp = TempDir::new().unwrap();
            let p = pipeline(tmp.path(), &fiction_bias(r, 1.0 - r, 2, seed));
            p.run().unwrap();
            total += cmd_probe(&p, None).unwrap()[0].run.evaluation.accuracy;
        }
        mean_acc.push(total / seeds as f64);
    }
    for w in mean_acc.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "{mean_acc:?}");
    }
    assert!(mean_acc[0] < 0.65 && mean_acc[4] > 0.95, "{mean_acc:?}");
}

#[test]
fn identical_profiles_give_small_divergence() {
    let tmp = TempDir::new().unwrap();
    let p = pipeline(
        tmp.path(),
        r#"
repetitions = 2
[personas]
filter = "occupation=writer"
[[analyses]]
id = "gender"
domain = "movies"
groups = [{ label = "female", selector = "gender=female" }, { label = "male", selector = "gender=male" }]
"#,
    );
    p.run().unwrap();
    let result = &cmd_analyze(&p, &[]).unwrap()[0];
    assert!(result.groups.iter().all(|g| g.distribution.total >= 1000));
    assert!(
        result.kld[0][1] <= 0.05 && result.kld[1][0] <= 0.05,
        "{:?}",
        result.kld
    );
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let mut toml = fiction_bias(0.7, 0.3, 2, 11);
    toml = toml.replacen("[personas]", "prompt_kinds = [\"clg\", \"cbg\"]\n[personas]", 1);
    toml.push_str(
        r#"
[synthetic]
mitigation_shrink = 0.5
[[mitigation_cases]]
id = "gender-mitigation"
domain = "books"
kind = "clg"
groups = [{ label = "female", selector = "gender=female" }, { label = "male", selector = "gender=male" }]
"#,
    );
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ta = full_pipeline(a.path(), &toml);
    let tb = full_pipeline(b.path(), &toml);
    assert!(ta.len() >= 8, "{:?}", ta.keys());
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(bytes == &tb[path], "{} differs", path.display());
    }
}

#[test]
fn recorded_fixture_reproduces_four_reduced_cases() {
    let src = common::fixture("mitigation");
    let tmp = TempDir::new().unwrap();
    for name in ["config.toml", "responses.jsonl"] {
        fs::copy(src.join(name), tmp.path().join(name)).unwrap();
    }
    let cfg = ExperimentConfig::load(tmp.path().join("config.toml")).unwrap();
    let p = Pipeline::new(cfg).unwrap();
    let (summary, reports) = cmd_mitigate(&p).unwrap();
    assert_eq!(summary.failed, 0);
    assert_eq!(summary.backend_calls, 0);
    assert_eq!(reports.len(), 4);
    for r in &reports {
        assert!(r.kld_after < r.kld_before, "{r:?}");
    }
}
