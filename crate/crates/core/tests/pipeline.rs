use std::fs;
use std::path::Path;

use webmine::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage, StageStatus};
use webmine::synth::{write_fixture, FixtureOptions};
use webmine::Error;
use webmine::llm::{MockMatch, MockRule};

fn fixture(dir: &Path) -> PipelineConfig {
    let f = write_fixture(dir, FixtureOptions::default()).unwrap();
    PipelineConfig::load(&f.config, &[]).unwrap()
}

fn run(config: &PipelineConfig, opts: RunOptions, until: Option<Stage>) -> webmine::Result<()> {
    let mut p = Pipeline::open(config.clone(), opts)?;
    p.run_all(until, |s| eprintln!("{}", serde_json::to_string(s).unwrap()))?;
    Ok(())
}

fn outputs(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v = Vec::new();
    for s in Stage::ALL {
        let dir = out.join(s.name());
        let mut names: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            v.push((p.strip_prefix(out).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    v
}

#[test]
fn fixture_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    run(&config, RunOptions::default(), None).unwrap();
    let out = &config.paths.output_dir;
    let sft = fs::read_to_string(out.join("assemble/sft.jsonl")).unwrap();
    assert!(sft.lines().count() > 100, "{}", sft.lines().count());

    // second run is a no-op
    let before = outputs(out);
    run(&config, RunOptions::default(), None).unwrap();
    assert_eq!(before, outputs(out));
}

/// Runs to completion in legs of `k` units, reopening the pipeline each time.
fn run_in_legs(config: &PipelineConfig, k: usize) -> usize {
    let mut legs = 0;
    loop {
        legs += 1;
        let opts = RunOptions { fresh: false, max_units: Some(k) };
        let mut p = Pipeline::open(config.clone(), opts).unwrap();
        match p.run_all(None, |_| {}) {
            Ok(_) => return legs,
            Err(Error::Interrupted { .. }) => continue,
            Err(e) => panic!("leg {legs}: {e}"),
        }
    }
}

#[test]
fn interrupted_runs_reproduce_the_uninterrupted_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    run(&config, RunOptions::default(), None).unwrap();
    let golden = outputs(&config.paths.output_dir);

    for k in [1, 2, 5, 7, 13] {
        let mut c = config.clone();
        c.paths.output_dir = dir.path().join(format!("out-{k}"));
        let legs = run_in_legs(&c, k);
        assert!(legs > 1);
        assert_eq!(outputs(&c.paths.output_dir), golden, "interrupting every {k} units changed the outputs");
    }
}

#[test]
fn interruption_leaves_a_running_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let err = run(&config, RunOptions { fresh: false, max_units: Some(3) }, None).unwrap_err();
    assert!(matches!(err, Error::Interrupted { ref stage, completed: 2 } if stage == "recall1"), "{err}");
    let p = Pipeline::open(config.clone(), RunOptions::default()).unwrap();
    let m = p.manifest(Stage::Recall1).unwrap().unwrap();
    assert_eq!(m.status, StageStatus::Running);
    assert_eq!(m.completed_units, ["s00000", "s00001"]);
    assert_eq!(m.units_total, 4);
}

#[test]
fn modified_shard_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    run(&config, RunOptions::default(), Some(Stage::Recall1)).unwrap();
    let shard = dir.path().join("corpus/shard-00.jsonl");
    let mut text = fs::read_to_string(&shard).unwrap();
    text.push_str("{\"url\": \"https://new.example.org/x\", \"html\": \"<p>late page</p>\"}\n");
    fs::write(&shard, text).unwrap();
    let err = run(&config, RunOptions::default(), Some(Stage::Recall1)).unwrap_err();
    match err {
        Error::StaleCheckpoint { stage, detail } => {
            assert_eq!(stage, "recall1");
            assert!(detail.contains("shard-00.jsonl"), "{detail}");
        }
        e => panic!("expected a stale checkpoint, got {e}"),
    }
    // an explicit fresh start accepts the new input
    run(&config, RunOptions { fresh: true, max_units: None }, Some(Stage::Recall1)).unwrap();
}

#[test]
fn missing_upstream_stage_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let mut p = Pipeline::open(config, RunOptions::default()).unwrap();
    let err = p.run_stage(Stage::Extract).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
    assert!(err.to_string().contains("triage2"), "{err}");
}

#[test]
fn second_process_is_locked_out() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let _held = Pipeline::open(config.clone(), RunOptions::default()).unwrap();
    assert!(Pipeline::open(config, RunOptions::default()).is_err());
}

#[test]
fn endpoint_failure_leaves_a_failed_resumable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = fixture(dir.path());
    // permanent failure for any page with a riddle on it
    let mut rules = vec![MockRule::new(MockMatch::Substring("Riddle".into()), "")];
    rules[0].fail_times = u32::MAX;
    rules[0].fail_status = 400;
    rules.extend(webmine::synth::extractor_rules());
    let script = dir.path().join("mocks/extractor_broken.jsonl");
    let text: String = rules.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    fs::write(&script, text).unwrap();
    config.extract.endpoint.as_mut().unwrap().mock_script = Some(script);

    let err = run(&config, RunOptions::default(), None).unwrap_err();
    assert!(matches!(err, Error::Llm(_)), "{err}");
    let p = Pipeline::open(config.clone(), RunOptions::default()).unwrap();
    let m = p.manifest(Stage::Extract).unwrap().unwrap();
    assert_eq!(m.status, StageStatus::Failed);
    assert!(m.error.as_deref().unwrap().starts_with("unit u"), "{:?}", m.error);
    assert!(m.completed_units.len() < m.units_total);
    assert!(p.manifest(Stage::Triage2).unwrap().unwrap().is_complete(p.out_dir()));
}

#[test]
fn two_round_recall_reports_both_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let mut p = Pipeline::open(config, RunOptions::default()).unwrap();
    let outcome = webmine::pipeline::run_two_round_recall(&mut p).unwrap();
    let [r1, r2] = &outcome.rounds;
    assert_eq!((r1.round, r2.round), (1, 2));
    assert!(r1.domains_kept <= r1.domains_total && r2.domains_kept <= r2.domains_total);
    let pool = fs::read_to_string(&outcome.pool).unwrap();
    assert!(pool.lines().count() > 0);
    assert!(p.manifest(Stage::Extract).unwrap().is_none());
}
