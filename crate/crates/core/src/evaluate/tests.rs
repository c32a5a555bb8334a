use super::*;
use crate::envsim::{reset, Catalog, FileNode, StateEdit};
use crate::taskspec::{parse_task, task_from_value};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const VLC_TASK: &str = crate::taskspec::tests::VLC_TASK;

fn fresh() -> DeviceState {
    reset(&Catalog::default(), 0)
}

fn getter(t: &str, dest: &str) -> ResultSpec {
    ResultSpec {
        getter: t.into(),
        dest: dest.into(),
    }
}

fn rand_word(rng: &mut ChaCha8Rng, alphabet: &[u8], max: usize) -> String {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
}

#[test]
fn vlc_getter_sees_recording_path() {
    let mut s = fresh();
    s.apply_edit(&StateEdit::SetSetting {
        app: "vlc".into(),
        key: "recording_file_path".into(),
        value: json!("C:\\Users\\Docker\\Desktop"),
    })
    .unwrap();
    match fetch_state(&s, &getter("vlc_config", "vlcrc")).unwrap() {
        StateValue::Document(d) => assert_eq!(d["recording_file_path"], json!("C:\\Users\\Docker\\Desktop")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_file_is_path_missing() {
    assert!(matches!(
        fetch_state(&fresh(), &getter("file", "C:\\missing.txt")),
        Err(EvalError::PathMissing(_))
    ));
    assert!(matches!(
        fetch_state(&fresh(), &getter("registry", "x")),
        Err(EvalError::UnknownGetter(_))
    ));
}

#[test]
fn fetch_matches_shadow_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = fresh();
    let mut shadow_files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut shadow_settings: BTreeMap<(String, String), Value> = BTreeMap::new();
    let paths = ["C:\\a.txt", "C:\\b.txt", "C:\\c\\d.txt"];
    let apps = ["vlc", "vscode", "msedge"];
    for _ in 0..300 {
        if rng.gen_bool(0.5) {
            let path = paths.choose(&mut rng).unwrap().to_string();
            let data = rand_word(&mut rng, b"xyz\n", 6).into_bytes();
            s.apply_edit(&StateEdit::WriteFile {
                path: path.clone(),
                data: data.clone(),
            })
            .unwrap();
            shadow_files.insert(path, data);
        } else {
            let app = apps.choose(&mut rng).unwrap().to_string();
            let key = rand_word(&mut rng, b"kq", 2);
            let value = json!(rng.gen_range(0..5));
            s.apply_edit(&StateEdit::SetSetting {
                app: app.clone(),
                key: key.clone(),
                value: value.clone(),
            })
            .unwrap();
            shadow_settings.insert((app, key), value);
        }
        for p in paths {
            let got = fetch_state(&s, &getter("file", p)).ok();
            assert_eq!(got, shadow_files.get(p).cloned().map(StateValue::Bytes));
        }
        for app in apps {
            let got = fetch_state(&s, &getter("settings_json", app)).ok();
            let want: serde_json::Map<String, Value> = shadow_settings
                .iter()
                .filter(|((a, _), _)| a == app)
                .map(|((_, k), v)| (k.clone(), v.clone()))
                .collect();
            if want.is_empty() {
                assert!(got.is_none());
            } else {
                assert_eq!(got, Some(StateValue::Document(Value::Object(want))));
            }
        }
    }
}

fn cookie(domain: &str) -> CookieRecord {
    CookieRecord {
        domain: domain.into(),
        name: "sid".into(),
        value: "1".into(),
    }
}

#[test]
fn cookie_rule_examples() {
    let amazon = vec!["amazon.com".to_string()];
    assert_eq!(is_cookie_deleted(&[cookie(".amazon.com")], &amazon).value, 0.0);
    assert_eq!(is_cookie_deleted(&[], &amazon).value, 1.0);
    assert_eq!(is_cookie_deleted(&[cookie("bing.com")], &amazon).value, 1.0);
}

#[test]
fn cookie_rule_matches_substring_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let cookies: Vec<_> = (0..rng.gen_range(0..6)).map(|_| cookie(&rand_word(&mut rng, b"ab.", 5))).collect();
        let domains: Vec<String> = (0..rng.gen_range(1..3)).map(|_| rand_word(&mut rng, b"ab.", 3)).collect();
        // Oracle: slide every window of every cookie domain.
        let mut found = false;
        for c in &cookies {
            for d in &domains {
                let (h, n) = (c.domain.as_bytes(), d.as_bytes());
                found |= n.is_empty() || (n.len() <= h.len() && (0..=h.len() - n.len()).any(|i| &h[i..i + n.len()] == n));
            }
        }
        assert_eq!(is_cookie_deleted(&cookies, &domains).value, if found { 0.0 } else { 1.0 });
    }
}

#[test]
fn json_settings_examples() {
    let doc = json!({"debug.focusEditorOnBreak": false, "editor.wordWrapColumn": 80});
    let exp: BTreeMap<_, _> = [("debug.focusEditorOnBreak".to_string(), json!(false))].into();
    assert_eq!(check_json_settings(&doc, &exp).value, 1.0);
    assert_eq!(check_json_settings(&doc, &BTreeMap::new()).value, 1.0);
    let exp: BTreeMap<_, _> = [("editor.wordWrapColumn".to_string(), json!(50))].into();
    assert_eq!(check_json_settings(&doc, &exp).value, 0.0);
    // 1 and 1.0 are different values.
    let exp: BTreeMap<_, _> = [("editor.wordWrapColumn".to_string(), json!(80.0))].into();
    assert_eq!(check_json_settings(&doc, &exp).value, 0.0);
}

fn rand_json(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.gen_range(0..if depth == 0 { 3 } else { 5 }) {
        0 => json!(rng.gen_range(0..3)),
        1 => json!(rng.gen_bool(0.5)),
        2 => json!(rand_word(rng, b"ab", 2)),
        3 => json!([rng.gen_range(0..2)]),
        _ => {
            let mut m = serde_json::Map::new();
            for _ in 0..rng.gen_range(0..4) {
                m.insert(rand_word(rng, b"kl", 2), rand_json(rng, depth - 1));
            }
            Value::Object(m)
        }
    }
}

/// Drops random keys from objects, recursively.
fn rand_subset(rng: &mut ChaCha8Rng, v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut out = serde_json::Map::new();
            for (k, v) in m {
                if rng.gen_bool(0.7) {
                    out.insert(k.clone(), rand_subset(rng, v));
                }
            }
            Value::Object(out)
        }
        other => other.clone(),
    }
}

/// Oracle: flatten both documents into (path, leaf) pairs and check inclusion.
fn flatten(v: &Value, prefix: &str, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, v) in m {
                flatten(v, &format!("{prefix}/{}", k.replace('/', "//")), out);
            }
        }
        Value::Object(_) => out.push((format!("{prefix}/{{}}"), Value::Null)),
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn oracle_subset(doc: &Value, expected: &Value) -> bool {
    let (mut d, mut e) = (Vec::new(), Vec::new());
    flatten(doc, "", &mut d);
    flatten(expected, "", &mut e);
    e.iter().all(|(p, ev)| {
        if let Some(obj_path) = p.strip_suffix("/{}") {
            // An empty expected object needs an object at that path.
            d.iter().any(|(dp, _)| dp == p || dp.starts_with(&format!("{obj_path}/")))
                || (obj_path.is_empty() && doc.is_object())
        } else {
            d.iter().any(|(dp, dv)| dp == p && dv == ev)
        }
    })
}

#[test]
fn json_subset_matches_flattening_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut agree_true = 0;
    for _ in 0..2000 {
        let doc = Value::Object(match rand_json(&mut rng, 3) {
            Value::Object(m) => m,
            other => [("x".to_string(), other)].into_iter().collect(),
        });
        let expected = if rng.gen_bool(0.6) {
            rand_subset(&mut rng, &doc)
        } else {
            rand_json(&mut rng, 2)
        };
        let want = oracle_subset(&doc, &expected);
        assert_eq!(json_subset(&doc, &expected), want, "doc={doc} expected={expected}");
        if let Value::Object(e) = &expected {
            let map: BTreeMap<_, _> = e.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            assert_eq!(check_json_settings(&doc, &map).value == 1.0, want);
        }
        agree_true += usize::from(want);
    }
    assert!(agree_true > 500, "fuzz should exercise both outcomes");
}

#[test]
fn highlight_examples() {
    assert_eq!(check_highlighted_words("plain text", "plain text").unwrap().value, 1.0);
    assert_eq!(check_highlighted_words("plain <hl>text</hl>", "plain text").unwrap().value, 0.0);
    assert_eq!(check_highlighted_words("plain", "<hl>plain</hl>").unwrap().value, 1.0);
    assert!(matches!(check_highlighted_words("a <hl>b", "a b"), Err(EvalError::FormatError(_))));
    assert!(matches!(check_highlighted_words("a </hl>b", "a b"), Err(EvalError::FormatError(_))));
}

#[test]
fn highlight_fuzz_matches_span_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let words: Vec<String> = (0..rng.gen_range(1..6)).map(|_| rand_word(&mut rng, b"abc", 3)).collect();
        let golden = words.join(" ");
        // Candidate: same or perturbed words, some wrapped in spans.
        let mut spans = 0;
        let mut plain = Vec::new();
        let mut marked = Vec::new();
        for w in &words {
            let w = if rng.gen_bool(0.1) { format!("{w}x") } else { w.clone() };
            plain.push(w.clone());
            if rng.gen_bool(0.15) {
                spans += 1;
                marked.push(format!("<hl>{w}</hl>"));
            } else {
                marked.push(w);
            }
        }
        let expected = spans == 0 && plain.join(" ") == golden;
        let r = check_highlighted_words(&marked.join(" "), &golden).unwrap();
        assert_eq!(r.value, if expected { 1.0 } else { 0.0 });
        assert_eq!(parse_highlighted(&marked.join(" ")).unwrap().spans, spans);
    }
}

/// Full-matrix edit distance with an explicit min over three moves.
fn oracle_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = *[d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + cost].iter().min().unwrap();
        }
    }
    d[a.len()][b.len()]
}

#[test]
fn similarity_examples() {
    assert_eq!(text_similarity("same", "same").value, 1.0);
    assert_eq!(text_similarity("abc", "").value, 0.0);
    assert_eq!(text_similarity("", "").value, 1.0);
    assert_eq!(text_similarity("kitten", "sitting").value, 1.0 - 3.0 / 7.0);
    assert_eq!(text_similarity("abc", "abc").kind, RewardKind::Continuous);
}

#[test]
fn similarity_matches_dp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a = rand_word(&mut rng, "abé ".as_bytes(), 12);
        let a = String::from_utf8_lossy(a.as_bytes()).into_owned();
        let b = rand_word(&mut rng, b"abc ", 12);
        let d = oracle_distance(&a, &b);
        assert_eq!(levenshtein(&a, &b), d);
        let max = a.chars().count().max(b.chars().count());
        let want = if max == 0 { 1.0 } else { 1.0 - d as f64 / max as f64 };
        assert_eq!(text_similarity(&a, &b).value, want);
        assert_eq!(text_similarity(&a, &b).value, text_similarity(&b, &a).value);
        assert_eq!(text_similarity(&a, &a).value, 1.0);
    }
}

#[test]
fn infeasible_contract_over_all_terminations() {
    let mut v: Value = serde_json::from_str(VLC_TASK).unwrap();
    v["feasible"] = json!(false);
    v["evaluator"] = json!({"func": "infeasible", "expected": {"type": "infeasible", "rules": {}}});
    let spec = task_from_value(&v).unwrap();
    let s = fresh();
    let ctx = EvalContext::default();
    for t in Termination::ALL {
        let outcomes = if t == Termination::Fail {
            vec![
                (EpisodeOutcome::fail("infeasible"), 1.0),
                (EpisodeOutcome::fail("Task is INFEASIBLE: no such option"), 1.0),
                (EpisodeOutcome::fail("gave up"), 0.0),
            ]
        } else {
            vec![(EpisodeOutcome::ended(t), 0.0)]
        };
        for (o, want) in outcomes {
            let r = evaluate_task(&s, &spec, &o, &ctx).unwrap();
            assert_eq!(r.value, want, "{o:?}");
            assert_eq!(r.kind, RewardKind::Binary);
        }
    }
}

#[test]
fn vlc_task_rule_equality_over_sampled_paths() {
    let spec = parse_task(VLC_TASK).unwrap();
    let target = "C:\\Users\\Docker\\Desktop";
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let candidates = [
        target.to_string(),
        "C:\\Users\\Docker\\Downloads".into(),
        "C:\\Users\\Docker\\Desktop\\".into(),
        "c:\\users\\docker\\desktop".into(),
    ];
    for _ in 0..1000 {
        let path = if rng.gen_bool(0.3) {
            candidates.choose(&mut rng).unwrap().clone()
        } else {
            format!("C:\\Users\\Docker\\{}", rand_word(&mut rng, b"Deskop", 7))
        };
        let mut s = fresh();
        s.apply_edit(&StateEdit::SetSetting {
            app: "vlc".into(),
            key: "recording_file_path".into(),
            value: json!(path),
        })
        .unwrap();
        let r = evaluate_task(&s, &spec, &EpisodeOutcome::done(), &EvalContext::default()).unwrap();
        assert_eq!(r.value, if path == target { 1.0 } else { 0.0 }, "{path}");
    }
    // No vlc settings at all: missing fragment scores 0.
    let r = evaluate_task(&fresh(), &spec, &EpisodeOutcome::done(), &EvalContext::default()).unwrap();
    assert_eq!(r.value, 0.0);
}

#[test]
fn unknown_evaluator_is_an_error() {
    let mut spec = parse_task(VLC_TASK).unwrap();
    spec.evaluator.func = "nope".into();
    assert_eq!(
        evaluate_task(&fresh(), &spec, &EpisodeOutcome::done(), &EvalContext::default()),
        Err(EvalError::EvaluatorMissing("nope".into()))
    );
}

fn spec_for(func: &str, getter_type: &str, dest: &str, rules: Value) -> TaskSpec {
    task_from_value(&json!({
        "id": "t1",
        "instruction": "x",
        "config": [],
        "evaluator": {"func": func, "expected": {"type": "rule", "rules": rules}},
        "result": {"type": getter_type, "dest": dest}
    }))
    .unwrap()
}

#[test]
fn file_evaluators() {
    let mut s = fresh();
    s.files.insert("C:\\n.txt".into(), FileNode::file("hello world"));
    let ctx = EvalContext {
        golden: [("t1".to_string(), b"hello there".to_vec())].into(),
    };
    let done = EpisodeOutcome::done();
    let run = |spec: &TaskSpec| evaluate_task(&s, spec, &done, &ctx).unwrap().value;
    assert_eq!(run(&spec_for("check_file_content", "file", "C:\\n.txt", json!({"content": "hello world"}))), 1.0);
    assert_eq!(run(&spec_for("check_file_content", "file", "C:\\n.txt", json!({"contains": "lo w"}))), 1.0);
    assert_eq!(run(&spec_for("check_file_content", "file", "C:\\n.txt", json!({"contains": "bye"}))), 0.0);
    assert_eq!(run(&spec_for("check_file_exists", "file", "C:\\n.txt", json!({}))), 1.0);
    assert_eq!(run(&spec_for("check_file_exists", "file", "C:\\m.txt", json!({}))), 0.0);
    assert_eq!(run(&spec_for("check_file_hidden", "file_meta", "C:\\n.txt", json!({"hidden": true}))), 0.0);
    assert_eq!(
        run(&spec_for("compare_text_file", "file", "C:\\n.txt", json!({}))),
        1.0 - 5.0 / 11.0
    );
    assert_eq!(
        run(&spec_for("compare_text_file", "file", "C:\\n.txt", json!({"expected": "hello world"}))),
        1.0
    );
}

#[test]
fn manifest_lists_every_evaluator() {
    let m = EvaluatorRegistry::manifest();
    assert_eq!(m.lines().count(), EVALUATORS.len());
    assert!(m.contains("vis_vlc_recordings_folder\tbinary\t"));
    assert!(m.contains("compare_text_file\tcontinuous\t"));
}

/// A random final state and random task for one of the shipped evaluators.
fn random_invocation(rng: &mut ChaCha8Rng) -> (DeviceState, TaskSpec, EpisodeOutcome, EvalContext) {
    let mut s = fresh();
    for _ in 0..rng.gen_range(0..4) {
        s.cookies.push(cookie(&rand_word(rng, b"ab.", 4)));
    }
    let path = "C:\\f.txt";
    if rng.gen_bool(0.8) {
        let mut text = rand_word(rng, b"ab <>/hl", 10);
        if rng.gen_bool(0.5) {
            text = format!("{text}<hl>{}</hl>", rand_word(rng, b"ab", 3));
        }
        let bytes = if rng.gen_bool(0.05) { vec![0xff, 0xfe] } else { text.into_bytes() };
        s.files.insert(path.into(), FileNode::file(bytes));
        s.files.get_mut(path).unwrap().hidden = rng.gen_bool(0.5);
    }
    if rng.gen_bool(0.7) {
        s.settings.insert("vlc".into(), json!({"recording_file_path": rand_word(rng, b"C:\\D", 4)}));
        s.settings.insert("vscode".into(), rand_json(rng, 2));
    }
    let entry = EVALUATORS.choose(rng).unwrap();
    let (getter_type, dest, rules) = match entry.name {
        "vis_vlc_recordings_folder" => ("vlc_config", "vlcrc", json!({"recording_file_path": rand_word(rng, b"C:\\D", 4)})),
        "is_cookie_deleted" => ("cookies", "", json!({"domains": [rand_word(rng, b"ab.", 2)]})),
        "check_json_settings" => ("settings_json", "vscode", json!({"expected": {rand_word(rng, b"kl", 2): rand_json(rng, 1)}})),
        "check_highlighted_words" => ("file", path, json!({})),
        "compare_text_file" => ("file", path, json!({"expected": rand_word(rng, b"ab <", 10)})),
        "check_file_content" => ("file", path, json!({"contains": rand_word(rng, b"ab", 2)})),
        "check_file_hidden" => ("file_meta", path, json!({"hidden": rng.gen_bool(0.5)})),
        _ => ("file", path, json!({})),
    };
    let mut spec = spec_for(entry.name, getter_type, dest, rules);
    if entry.name == INFEASIBLE_EVALUATOR {
        spec.feasible = !rng.gen_bool(0.8);
    }
    let t = *Termination::ALL.choose(rng).unwrap();
    let outcome = if t == Termination::Fail {
        EpisodeOutcome::fail(["infeasible", "stuck", ""].choose(rng).unwrap().to_string())
    } else {
        EpisodeOutcome::ended(t)
    };
    let ctx = EvalContext {
        golden: [("t1".to_string(), rand_word(rng, b"ab <hl>/", 8).into_bytes())].into(),
    };
    (s, spec, outcome, ctx)
}

#[test]
fn reward_range_law_over_fuzzed_invocations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut scored, mut format_errors) = (0, 0);
    for _ in 0..12_000 {
        let (s, spec, outcome, ctx) = random_invocation(&mut rng);
        match evaluate_task(&s, &spec, &outcome, &ctx) {
            Ok(r) => {
                assert!(r.is_well_formed(), "{r:?} for {}", spec.evaluator.func);
                let entry = EvaluatorRegistry::entry(&spec.evaluator.func).unwrap();
                if spec.feasible {
                    assert_eq!(r.kind, entry.kind);
                }
                // Purity: same inputs, same reward.
                assert_eq!(evaluate_task(&s, &spec, &outcome, &ctx).unwrap(), r);
                scored += 1;
            }
            Err(EvalError::FormatError(_)) => format_errors += 1,
            Err(e) => panic!("unexpected {e:?}"),
        }
    }
    assert!(scored >= 10_000, "{scored} scored, {format_errors} format errors");
}
