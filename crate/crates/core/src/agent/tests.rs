use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;

use proptest::prelude::*;

use super::*;
use crate::corpus::build_corpus;

fn corpus_session(id: &str, config: EpisodeConfig) -> (crate::corpus::Corpus, EpisodeSession) {
    let c = build_corpus();
    let task = c.task(id).unwrap().clone();
    let s = EpisodeSession::start(&c.world, &task, config).unwrap();
    (c, s)
}

const VLC_ID: &str = "8ba5ae7a-5ae5-4eab-9fcc-5dd4fe3abf89-W0S";

// ---------------------------------------------------------------- prompts

#[test]
fn user_prompt_has_every_section_in_order() {
    let (_, mut s) = corpus_session(VLC_ID, EpisodeConfig::default());
    let b = s.prompt();
    let mut at = 0;
    for h in USER_SECTIONS {
        let pos = b.user_text[at..].find(h).unwrap_or_else(|| panic!("missing {h}"));
        at += pos + h.len();
    }
    assert_eq!(b.user_text.matches("```text").count(), 1);
    assert_eq!(b.user_text.matches("```table").count(), 1);
    assert!(b.user_text.contains("Help me modify the folder"));
}

#[test]
fn system_text_lists_the_whole_api() {
    let sys = system_text();
    for sig in SIGNATURES {
        assert!(sys.contains(&format!("computer.{}.{}(", sig.group.as_str(), sig.name)), "{}", sig.name);
    }
    for ex in PROMPT_EXAMPLES {
        assert!(sys.contains(ex));
    }
}

#[test]
fn history_is_truncated_to_the_last_n() {
    let (_, mut s) = corpus_session(VLC_ID, EpisodeConfig::default());
    let history: Vec<HistoryItem> = (0..12)
        .map(|i| HistoryItem {
            step: i,
            decision: DecisionKind::Wait,
            code: None,
        })
        .collect();
    let obs = s.observe().clone();
    let b = build_prompt(&obs, &history, "", N_HISTORY, 12);
    let shown: Vec<usize> = (0..12).filter(|i| b.user_text.contains(&format!("Step {i}: WAIT"))).collect();
    assert_eq!(shown, vec![7, 8, 9, 10, 11]);
}

#[test]
fn prompt_is_stable_until_the_step_is_taken() {
    let (_, mut s) = corpus_session(VLC_ID, EpisodeConfig::default());
    let a = s.prompt();
    let b = s.prompt();
    assert_eq!(a.digest(), b.digest());
    let (_, mut s2) = corpus_session(VLC_ID, EpisodeConfig::default());
    assert_eq!(s2.prompt().digest(), a.digest());
}

#[test]
fn memory_block_carries_over() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let mut s = EpisodeSession::start(&c.world, task, EpisodeConfig::default()).unwrap();
    s.take_step(&c.world, "```decision\nWAIT\n```\n```memory\nprefs are under Tools\n```").unwrap();
    let b = s.prompt();
    assert_eq!(b.memory, "prefs are under Tools");
    assert!(b.user_text.contains("## 9. Memory\nprefs are under Tools"));
}

// ---------------------------------------------------------------- parsing

#[test]
fn parses_the_documented_shapes() {
    let d = parse_response("I am finished.\n```decision\nDONE\n```").unwrap();
    assert_eq!(d, AgentDecision::done());

    let d = parse_response("```decision\n# the file is missing\nFAIL\n```").unwrap();
    assert_eq!(d.fail_reason.as_deref(), Some("the file is missing"));

    let d = parse_response("```decision\nFAIL\n```").unwrap();
    assert_eq!(d.fail_reason.as_deref(), Some(DEFAULT_FAIL_REASON));

    let d = parse_response(
        "```decision\nCOMMAND\n```\n```python\ncomputer.os.open_program(\"notepad\")\n```\n```memory\nopened\n```",
    )
    .unwrap();
    assert_eq!(d.kind, DecisionKind::Command);
    assert_eq!(d.program.unwrap().calls.len(), 1);
    assert_eq!(d.memory_update.as_deref(), Some("opened"));
}

#[test]
fn last_keyword_wins_and_comments_are_ignored() {
    let d = parse_response("```decision\nWAIT # not DONE yet\nCOMMAND\n```\n```python\ncomputer.mouse.single_click()\n```")
        .unwrap();
    assert_eq!(d.kind, DecisionKind::Command);
    let d = parse_response("```decision\nCOMMAND then FAIL because blocked\n```").unwrap();
    assert_eq!(d.kind, DecisionKind::Fail);
    assert_eq!(d.fail_reason.as_deref(), Some("then because blocked"));
}

#[test]
fn malformed_responses_are_classified() {
    assert_eq!(parse_response("just prose"), Err(MalformedResponse::NoDecisionBlock));
    assert_eq!(parse_response("```decision\nmaybe\n```"), Err(MalformedResponse::NoKeyword));
    assert_eq!(parse_response("```decision\nCOMMAND\n```"), Err(MalformedResponse::MissingCode));
    assert!(matches!(
        parse_response("```decision\nCOMMAND\n```\n```python\nimport os\n```"),
        Err(MalformedResponse::Dsl(_))
    ));
}

#[test]
fn malformed_response_is_a_logged_no_op() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let mut s = EpisodeSession::start(&c.world, task, EpisodeConfig::default()).unwrap();
    let before = digest(&s.state);
    let out = s.take_step(&c.world, "no blocks here").unwrap();
    assert_eq!(out.record.decision, None);
    assert_eq!(out.record.effects.entries[0].call, "<malformed>");
    assert_eq!(out.record.digest_after, before);
    assert!(!out.finished);
}

fn arb_reason() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,3}", 1..3).prop_map(|v| v.join("\n"))
}

fn arb_decision() -> impl Strategy<Value = AgentDecision> {
    let program = prop::collection::vec(
        prop_oneof![
            Just("computer.mouse.single_click()".to_string()),
            (0usize..40).prop_map(|i| format!("computer.mouse.move_id(id={i})")),
            "[a-zA-Z ]{0,12}".prop_map(|t| format!("computer.keyboard.write(\"{t}\")")),
            Just("computer.keyboard.press(\"enter\")".to_string()),
        ],
        1..5,
    )
    .prop_map(|lines| parse_program(&lines.join("\n")).unwrap());
    let memory = prop::option::of("[a-z]{1,10}( [a-z]{1,10}){0,2}");
    (
        prop_oneof![
            Just(AgentDecision::done()),
            Just(AgentDecision::wait()),
            arb_reason().prop_map(|r| AgentDecision::fail(&r)),
            program.prop_map(AgentDecision::command),
        ],
        memory,
    )
        .prop_map(|(d, m)| match m {
            Some(m) => d.with_memory(&m),
            None => d,
        })
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(d in arb_decision()) {
        prop_assert_eq!(parse_response(&render_response(&d)).unwrap(), d);
    }

    #[test]
    fn parser_never_panics(s in "(```|decision|python|DONE|FAIL|COMMAND|WAIT|#|\n| |[a-z()\"]){0,60}") {
        let _ = parse_response(&s);
    }
}

// ---------------------------------------------------------------- episodes

#[test]
fn zero_budget_hits_the_step_limit_immediately() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let cfg = EpisodeConfig { t_max: 0, ..EpisodeConfig::default() };
    let res = run_episode(&c.world, task, &mut RandomPolicy::new(1), &cfg, &c.eval_context()).unwrap();
    assert_eq!(res.steps, 0);
    assert_eq!(res.termination.termination, Termination::StepLimit);
    assert_eq!(res.reward.value, 0.0);
}

#[test]
fn waiting_forever_uses_the_whole_budget() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let cfg = EpisodeConfig { t_max: 7, ..EpisodeConfig::default() };
    let mut p = ScriptedPolicy::new(vec![render_response(&AgentDecision::wait()); 7]);
    let res = run_episode(&c.world, task, &mut p, &cfg, &c.eval_context()).unwrap();
    assert_eq!(res.steps, 7);
    assert_eq!(res.termination.termination, Termination::StepLimit);
}

#[test]
fn wait_limit_ends_the_episode() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let cfg = EpisodeConfig { wait_limit: Some(3), ..EpisodeConfig::default() };
    let mut p = ScriptedPolicy::new(vec![render_response(&AgentDecision::wait()); 10]);
    let res = run_episode(&c.world, task, &mut p, &cfg, &c.eval_context()).unwrap();
    assert_eq!(res.steps, 3);
    assert_eq!(res.termination.termination, Termination::WaitTimeout);
}

#[test]
fn scripted_oracle_solves_the_recordings_task() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let mut p = ScriptedPolicy::new(c.oracle_script(VLC_ID).unwrap());
    let res = run_episode(&c.world, task, &mut p, &EpisodeConfig::default(), &c.eval_context()).unwrap();
    assert_eq!(res.reward.value, 1.0);
    assert_eq!(res.termination.termination, Termination::Done);
}

#[test]
fn exhausted_script_fails() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let res = run_episode(&c.world, task, &mut ScriptedPolicy::new(vec![]), &EpisodeConfig::default(), &c.eval_context())
        .unwrap();
    assert_eq!(res.termination.fail_reason.as_deref(), Some("script exhausted"));
}

#[test]
fn episodes_are_deterministic() {
    let c = build_corpus();
    for t in &c.suite.tasks {
        let cfg = EpisodeConfig { seed: 11, ..EpisodeConfig::default() };
        let a = run_episode(&c.world, t, &mut RandomPolicy::new(3), &cfg, &c.eval_context()).unwrap();
        let b = run_episode(&c.world, t, &mut RandomPolicy::new(3), &cfg, &c.eval_context()).unwrap();
        assert_eq!(a.transcript.to_jsonl(), b.transcript.to_jsonl());
    }
}

#[test]
fn finished_session_rejects_steps() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let mut s = EpisodeSession::start(&c.world, task, EpisodeConfig::default()).unwrap();
    s.take_step(&c.world, &render_response(&AgentDecision::done())).unwrap();
    assert_eq!(s.take_step(&c.world, "x").unwrap_err(), EpisodeError::Finished);
}

// ---------------------------------------------------------------- prompt schema

/// Independent structural check of a prompt bundle.
fn check_bundle(b: &PromptBundle) -> Result<(), String> {
    let lines: Vec<&str> = b.user_text.lines().collect();
    let heads: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.starts_with("## ") && l.as_bytes().get(3).is_some_and(u8::is_ascii_digit))
        .map(|(i, _)| i)
        .collect();
    if heads.len() != 9 {
        return Err(format!("{} section headings", heads.len()));
    }
    for (n, &i) in heads.iter().enumerate() {
        if !lines[i].starts_with(&format!("## {}. ", n + 1)) {
            return Err(format!("heading {n} is `{}`", lines[i]));
        }
    }
    let fences = lines.iter().filter(|l| l.starts_with("```")).count();
    if fences % 2 != 0 {
        return Err("unbalanced fences".into());
    }
    let rows = b.screen_table.lines().count();
    if rows != b.screen_ref.len() + 1 {
        return Err(format!("table has {rows} lines for {} elements", b.screen_ref.len()));
    }
    if !b.system_text.contains("```python") {
        return Err("system text has no examples".into());
    }
    Ok(())
}

#[test]
fn fifty_prompts_match_the_schema() {
    let c = build_corpus();
    let mut checked = 0;
    'outer: for seed in 0..10u64 {
        for t in &c.suite.tasks {
            let cfg = EpisodeConfig { seed, t_max: 5, ..EpisodeConfig::default() };
            let mut s = EpisodeSession::start(&c.world, t, cfg).unwrap();
            let mut p = RandomPolicy::new(seed);
            while !s.is_finished() {
                let b = s.prompt();
                check_bundle(&b).unwrap_or_else(|e| panic!("{}: {e}", t.id));
                checked += 1;
                if checked == 50 {
                    break 'outer;
                }
                let r = p.decide(&b);
                s.take_step(&c.world, &r).unwrap();
            }
        }
    }
    assert_eq!(checked, 50);
}

// ---------------------------------------------------------------- transcripts

#[test]
fn transcript_replays_to_the_logged_digest() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let mut p = ScriptedPolicy::new(c.oracle_script(VLC_ID).unwrap());
    let res = run_episode(&c.world, task, &mut p, &EpisodeConfig::default(), &c.eval_context()).unwrap();
    let text = res.transcript.to_jsonl();
    let t = Transcript::from_jsonl(&text).unwrap();
    assert_eq!(t, res.transcript);
    let v = replay_transcript(&c.world, &t).unwrap();
    assert!(v.matches);
    assert_eq!(v.final_digest, res.final_digest);

    let mut edited = t.clone();
    edited.steps[1].response = edited.steps[1].response.replace("Desktop", "Music");
    let v = replay_transcript(&c.world, &edited).unwrap();
    assert!(!v.matches);
}

#[test]
fn transcript_lines_must_be_ordered() {
    let c = build_corpus();
    let task = c.task(VLC_ID).unwrap();
    let res = run_episode(&c.world, task, &mut RandomPolicy::new(0), &EpisodeConfig::default(), &c.eval_context())
        .unwrap();
    let text = res.transcript.to_jsonl();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(0, 1);
    assert!(Transcript::from_jsonl(&lines.join("\n")).is_err());
    assert!(Transcript::from_jsonl("").is_err());
}

// ---------------------------------------------------------------- remote policy

/// One-shot HTTP stub answering every request with `body`; reports the
/// protocol header and request JSON it saw.
fn stub_server(body: String, requests: usize) -> (String, mpsc::Receiver<(Option<String>, Value)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for stream in listener.incoming().take(requests) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut header = None;
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case(PROTOCOL_HEADER) {
                        header = Some(v.trim().to_string());
                    }
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send((header, serde_json::from_slice(&buf).unwrap_or(Value::Null)));
            let reply = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/decide"), rx)
}

#[test]
fn remote_policy_round_trips_through_http() {
    let reply = json!({"text": "```decision\nDONE\n```"}).to_string();
    let (url, rx) = stub_server(reply, 1);
    let (_, mut s) = corpus_session(VLC_ID, EpisodeConfig::default());
    let b = s.prompt();
    let mut p = RemotePolicy::new(&url, Duration::from_secs(5), 0);
    let out = p.decide(&b);
    assert_eq!(parse_response(&out).unwrap(), AgentDecision::done());
    let (header, body) = rx.recv().unwrap();
    assert_eq!(header.as_deref(), Some(POLICY_PROTOCOL));
    assert_eq!(body, b.request_body());
}

#[test]
fn unreachable_policy_fails_the_step() {
    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut p = RemotePolicy::new(&format!("http://127.0.0.1:{port}/"), Duration::from_millis(300), 1);
    let (_, mut s) = corpus_session(VLC_ID, EpisodeConfig::default());
    let d = parse_response(&p.decide(&s.prompt())).unwrap();
    assert_eq!(d.kind, DecisionKind::Fail);
    assert_eq!(d.fail_reason.as_deref(), Some(POLICY_TIMEOUT_REASON));
}

#[test]
fn remote_reply_without_text_counts_as_failure() {
    let (url, _rx) = stub_server(json!({"answer": 1}).to_string(), 2);
    let (_, mut s) = corpus_session(VLC_ID, EpisodeConfig::default());
    let mut p = RemotePolicy::new(&url, Duration::from_secs(5), 1);
    let d = parse_response(&p.decide(&s.prompt())).unwrap();
    assert_eq!(d.fail_reason.as_deref(), Some(POLICY_TIMEOUT_REASON));
}
