//! End-to-end checks across modules, through the public API only.

use arena_core::agent::{replay_transcript, run_episode, EpisodeConfig, RandomPolicy, ScriptedPolicy, Transcript};
use arena_core::corpus::{build_corpus, load_golden};
use arena_core::envsim::{apply_config, digest, parse_snapshot, reset, snapshot};
use arena_core::evaluate::{EvaluatorRegistry, GetterRegistry};
use arena_core::taskspec::{parse_task, validate, StepRegistry};

#[test]
fn exported_tasks_reparse_validate_and_solve() {
    let c = build_corpus();
    let ctx = c.eval_context();
    let dir = tempfile::tempdir().unwrap();
    c.export(dir.path()).unwrap();
    assert_eq!(load_golden(dir.path()).unwrap(), c.golden);

    for t in &c.suite.tasks {
        let text = std::fs::read_to_string(dir.path().join(format!("{}.json", t.id))).unwrap();
        let parsed = parse_task(&text).unwrap();
        assert_eq!(&parsed, t);
        let report = validate(&parsed, &StepRegistry::standard(), &EvaluatorRegistry, &GetterRegistry);
        assert!(report.findings.is_empty(), "{}: {:?}", t.id, report.findings);

        let mut p = ScriptedPolicy::new(c.oracle_script(&t.id).unwrap());
        let r = run_episode(&c.world, &parsed, &mut p, &EpisodeConfig::default(), &ctx).unwrap();
        assert_eq!(r.reward.value, 1.0, "{}", t.id);
    }
}

#[test]
fn snapshots_survive_every_task_setup() {
    let c = build_corpus();
    for t in &c.suite.tasks {
        let s = apply_config(&c.world, &reset(&c.world.catalog, 3), &t.config).unwrap();
        let bytes = snapshot(&s);
        let back = parse_snapshot(&bytes).unwrap();
        assert_eq!(back, s, "{}", t.id);
        assert_eq!(digest(&back), digest(&s));
        assert_eq!(snapshot(&back), bytes);
    }
}

#[test]
fn random_transcripts_replay_through_jsonl() {
    let c = build_corpus();
    let ctx = c.eval_context();
    for (i, t) in c.suite.tasks.iter().enumerate() {
        let cfg = EpisodeConfig { seed: i as u64, ..EpisodeConfig::default() };
        let r = run_episode(&c.world, t, &mut RandomPolicy::new(i as u64), &cfg, &ctx).unwrap();
        let text = r.transcript.to_jsonl();
        let back = Transcript::from_jsonl(&text).unwrap();
        assert_eq!(back.to_jsonl(), text);
        let v = replay_transcript(&c.world, &back).unwrap();
        assert!(v.matches, "{}", t.id);
        assert_eq!(v.final_digest, r.final_digest);
    }
}
