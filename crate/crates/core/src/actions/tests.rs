use super::*;
use crate::envsim::{reset, AppModel, Behavior, Effect, UiNode, ValueSource};
use crate::geom::Rect;
use crate::observe::{annotate, DetectorConfig, ElementKind, Mark, ScreenElement, Source};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn call(group: Group, name: &str, args: Vec<Literal>) -> ComputerCall {
    ComputerCall::new(group, name, args)
}

fn s(v: &str) -> Literal {
    Literal::Str(v.into())
}

fn kw(c: ComputerCall, pairs: &[(&str, Literal)]) -> ComputerCall {
    pairs.iter().fold(c, |c, (k, v)| c.with_kwarg(k, v.clone()))
}

#[test]
fn prompt_examples_parse_to_expected_calls() {
    use Group::*;
    let click = || call(Mouse, "single_click", vec![]);
    let expected: [Vec<ComputerCall>; 9] = [
        vec![call(Os, "open_program", vec![s("msedge")])],
        vec![
            kw(call(Mouse, "move_id", vec![]), &[("id", Literal::Int(29))]),
            click(),
            call(Keyboard, "write", vec![s("amazon.com")]),
            call(Keyboard, "press", vec![s("enter")]),
        ],
        vec![
            kw(call(Mouse, "move_id", vec![]), &[("id", Literal::Int(107))]),
            call(Mouse, "double_click", vec![]),
        ],
        vec![
            kw(
                call(Clipboard, "copy_image", vec![]),
                &[
                    ("id", Literal::Int(140)),
                    ("description", s("already copied image about revenue projection plot to clipboard")),
                ],
            ),
            call(Os, "open_program", vec![s("outlook")]),
        ],
        vec![
            kw(call(Mouse, "move_abs", vec![]), &[("x", Literal::Float(0.25)), ("y", Literal::Float(0.25))]),
            click(),
            call(Keyboard, "write", vec![s("Justin Wagle")]),
            call(Keyboard, "press", vec![s("enter")]),
        ],
        vec![
            kw(call(Mouse, "move_abs", vec![]), &[("x", Literal::Float(0.25)), ("y", Literal::Float(0.34))]),
            click(),
            call(Keyboard, "write", vec![s("Revenue projections")]),
        ],
        vec![kw(call(Mouse, "move_id", vec![]), &[("id", Literal::Int(12))]), click()],
        vec![kw(call(Mouse, "move_id", vec![]), &[("id", Literal::Int(78))]), click()],
        vec![call(Os, "open_program", vec![s("msedge")])],
    ];
    for (i, (text, want)) in PROMPT_EXAMPLES.iter().zip(expected).enumerate() {
        let got = parse_program(text).unwrap_or_else(|e| panic!("example {i}: {e}"));
        assert_eq!(got.calls, want, "example {i}");
        assert_eq!(got.source_text, *text);
    }
}

#[test]
fn assignment_is_a_syntax_error_on_its_line() {
    assert!(matches!(parse_program("x = 5"), Err(ActionError::DslSyntax { line: 1, .. })));
    let e = parse_program("# ok\ncomputer.mouse.single_click()\nfor i in range(3):").unwrap_err();
    assert_eq!(e.line(), 3);
}

#[test]
fn error_kinds() {
    assert!(matches!(
        parse_statement("computer.mouse.teleport()", 1),
        Err(ActionError::UnknownFunction { .. })
    ));
    assert!(matches!(parse_statement("print('x')", 1), Err(ActionError::UnknownFunction { .. })));
    assert!(matches!(
        parse_statement("computer.mouse.move_abs(0.1)", 1),
        Err(ActionError::Arity { .. })
    ));
    assert!(matches!(
        parse_statement("computer.mouse.single_click(1)", 1),
        Err(ActionError::Arity { .. })
    ));
    assert!(matches!(
        parse_statement("computer.mouse.move_id(id='29')", 1),
        Err(ActionError::Type { .. })
    ));
    assert!(matches!(
        parse_statement("computer.mouse.move_abs(x=1.5, y=0)", 1),
        Err(ActionError::Type { .. })
    ));
    assert!(matches!(
        parse_statement("computer.mouse.scroll(dir='left')", 1),
        Err(ActionError::Type { .. })
    ));
    assert!(matches!(
        parse_statement("computer.mouse.move_id(29, id=29)", 1),
        Err(ActionError::Arity { .. })
    ));
}

#[test]
fn scroll_accepts_both_keywords() {
    for text in [
        "computer.mouse.scroll(dir=\"down\")",
        "computer.mouse.scroll(direction=\"down\")",
        "computer.mouse.scroll('down')",
    ] {
        let c = parse_statement(text, 1).unwrap();
        assert_eq!(c.arg("dir"), Some(&s("down")), "{text}");
    }
}

#[test]
fn display_round_trips() {
    for text in PROMPT_EXAMPLES {
        for c in parse_program(text).unwrap().calls {
            assert_eq!(parse_statement(&c.to_string(), 1).unwrap(), c);
        }
    }
}

/// Statements that must never parse.
fn mutate(rng: &mut ChaCha8Rng, base: &str) -> String {
    let idents = ["x", "os", "self", "pyautogui", "eval", "sys", "computer2", "Computer", "cmd"];
    let id = *idents.choose(rng).unwrap();
    let open = base.find('(').unwrap();
    let (head, tail) = base.split_at(open);
    let inner = &tail[1..tail.len() - 1];
    match rng.gen_range(0..16) {
        0 => format!("{id} = {base}"),
        1 => format!("{head}({id}({inner}))"),
        2 => format!("{head}(1 + 2)"),
        3 => ["import os", "from os import system", "import subprocess as sp"].choose(rng).unwrap().to_string(),
        4 => format!("for i in range(3): {base}"),
        5 => format!("if True: {base}"),
        6 => format!("lambda: {base}"),
        7 => base.replacen("computer", id, 1),
        8 => {
            let parts: Vec<&str> = head.split('.').collect();
            format!("{}.{}.{}_{}({inner})", parts[0], parts[1], parts[2], id)
        }
        9 => format!("{base}; {base}"),
        10 => {
            let extra = if inner.is_empty() { "1, 2, 3".to_string() } else { format!("{inner}, 1, 2, 3") };
            format!("{head}({extra})")
        }
        11 => head.replacen("computer.", &format!("computer.{id}."), 1) + tail,
        12 => format!("{head}([1, 2])"),
        13 => format!("{head}({id})"),
        14 => format!("{head}(*args)"),
        _ => format!("{base})"),
    }
}

fn whitelisted_bases() -> Vec<String> {
    PROMPT_EXAMPLES
        .iter()
        .flat_map(|e| parse_program(e).unwrap().calls)
        .map(|c| c.to_string())
        .chain(["computer.mouse.scroll(dir=\"up\")".to_string(), "computer.clipboard.paste()".to_string()])
        .collect()
}

#[test]
fn mutated_statements_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let bases = whitelisted_bases();
    for _ in 0..10_000 {
        let base = bases.choose(&mut rng).unwrap();
        let m = mutate(&mut rng, base);
        assert!(parse_program(&m).is_err(), "accepted {m}");
    }
}

// ---------------------------------------------------------------------------
// Execution

fn browser() -> AppModel {
    let mut a = AppModel::new("msedge", "New tab - Microsoft Edge");
    a.aliases = vec!["edge".into()];
    a.elements = vec![
        UiNode::new("address", NodeKind::Input, "", Rect::new(0.1, 0.05, 0.7, 0.09)).on(
            EventKind::TextInput,
            vec![
                Effect::SetSetting {
                    app: "msedge".into(),
                    key: "current_url".into(),
                    value: ValueSource::Payload,
                },
                Effect::SetTitle {
                    value: ValueSource::Concat(vec![
                        ValueSource::Payload,
                        ValueSource::Literal(json!(" - Microsoft Edge")),
                    ]),
                },
            ],
        ),
        UiNode::new("go", NodeKind::Button, "Go", Rect::new(0.72, 0.05, 0.78, 0.09)).on(
            EventKind::Click,
            vec![Effect::SetSetting {
                app: "msedge".into(),
                key: "go_clicks".into(),
                value: ValueSource::Literal(json!(1)),
            }],
        ),
        UiNode::new("menu", NodeKind::Button, "...", Rect::new(0.9, 0.05, 0.95, 0.09)).on(
            EventKind::RightClick,
            vec![Effect::SetVisible {
                nodes: vec!["ctx".into()],
                visible: true,
            }],
        ),
        UiNode::new("ctx", NodeKind::ListItem, "Settings", Rect::new(0.8, 0.1, 0.95, 0.14)).hidden(),
        UiNode::new("pic", NodeKind::Image, "a red bicycle", Rect::new(0.2, 0.3, 0.5, 0.6)),
    ];
    a.behaviors = vec![Behavior::on_key("ctrl+d", vec![Effect::SetSetting {
        app: "msedge".into(),
        key: "bookmarked".into(),
        value: ValueSource::Literal(json!(true)),
    }])];
    a
}

fn notepad() -> AppModel {
    let mut a = AppModel::new("notepad", "Untitled - Notepad");
    a.elements = vec![UiNode::new("body", NodeKind::Text, "", Rect::new(0.0, 0.1, 1.0, 1.0))];
    a.behaviors = vec![Behavior::on(EventKind::TextInput, vec![Effect::SetContent {
        node: "body".into(),
        value: ValueSource::Concat(vec![ValueSource::NodeContent("body".into()), ValueSource::Payload]),
    }])];
    a
}

fn catalog() -> Catalog {
    Catalog::new([browser(), notepad()])
}

fn run(text: &str, state: &DeviceState, cursor: &CursorState) -> (DeviceState, CursorState, EffectLog) {
    let screen = annotate(state, &DetectorConfig::uia_only(), 0);
    execute_program(&catalog(), state, cursor, &parse_program(text).unwrap(), &screen)
}

fn with_browser() -> DeviceState {
    let c = catalog();
    let s = reset(&c, 0);
    let (s, _, log) = run("computer.os.open_program(\"msedge\")", &s, &CursorState::default());
    assert!(!log.has_error());
    s
}

#[test]
fn move_id_goes_to_center() {
    let mut screen = AnnotatedScreen::empty();
    screen.marks.push(Mark {
        id: 0,
        element: ScreenElement {
            source: Source::Uia,
            kind: ElementKind::Button,
            content: String::new(),
            bbox: Rect::new(0.2, 0.2, 0.4, 0.3),
            node: None,
        },
    });
    let c = parse_statement("computer.mouse.move_id(id=0)", 1).unwrap();
    let s = reset(&catalog(), 0);
    let done = execute_call(&catalog(), &s, &CursorState::default(), &c, &screen).unwrap();
    assert!((done.cursor.position.x - 0.3).abs() < 1e-12);
    assert!((done.cursor.position.y - 0.25).abs() < 1e-12);
    let stale = parse_statement("computer.mouse.move_id(id=1)", 1).unwrap();
    assert!(matches!(
        execute_call(&catalog(), &s, &CursorState::default(), &stale, &screen),
        Err(ExecError::UnknownElementId(1))
    ));
}

#[test]
fn switching_to_front_window_is_a_no_op() {
    let s = with_browser();
    let (s2, _, log) = run("computer.window_manager.switch_to_application(\"New tab - Microsoft Edge\")", &s, &CursorState::default());
    assert!(!log.has_error());
    assert_eq!(s2, s);
    let (_, _, log) = run("computer.window_manager.switch_to_application(\"new tab\")", &s, &CursorState::default());
    assert!(log.entries[0].error.as_ref().unwrap().contains("no window titled"));
}

#[test]
fn address_bar_example_navigates() {
    let s = with_browser();
    let screen = annotate(&s, &DetectorConfig::uia_only(), 0);
    // Renumber the address bar as 29 by padding the screen.
    let addr = screen.marks[screen.id_of_node("address").unwrap()].element.clone();
    let mut padded = AnnotatedScreen::empty();
    padded.window = screen.window.clone();
    for id in 0..29 {
        let mut e = addr.clone();
        e.node = None;
        e.bbox = Rect::new(0.0, 0.95, 0.01, 0.96);
        padded.marks.push(Mark { id, element: e });
    }
    padded.marks.push(Mark { id: 29, element: addr });
    let program = parse_program(PROMPT_EXAMPLES[1]).unwrap();
    let (next, cursor, log) = execute_program(&catalog(), &s, &CursorState::default(), &program, &padded);
    assert_eq!(log.entries.len(), 4);
    assert!(!log.has_error(), "{log:?}");
    assert_eq!(next.setting("msedge", "current_url"), Some(&json!("amazon.com")));
    assert_eq!(next.foreground_window().unwrap().title, "amazon.com - Microsoft Edge");
    assert_eq!(cursor.last_target.unwrap().node, "address");
    assert!(next.cookies.is_empty());
}

#[test]
fn write_replaces_then_appends() {
    let s = with_browser();
    let text = "computer.mouse.move_abs(x=0.3, y=0.07)\ncomputer.mouse.single_click()\ncomputer.keyboard.write(\"bing\")\ncomputer.keyboard.write(\".com\")";
    let (s2, _, _) = run(text, &s, &CursorState::default());
    let (s3, _, _) = run(text, &s2, &CursorState::default());
    let content = |st: &DeviceState| st.foreground_window().unwrap().node("address").unwrap().content.clone();
    assert_eq!(content(&s2), "bing.com");
    assert_eq!(content(&s3), "bing.com");
    let (s4, _, _) = run(
        "computer.mouse.move_abs(x=0.3, y=0.07)\ncomputer.mouse.single_click()\ncomputer.keyboard.write(\"abc\")\ncomputer.keyboard.press(\"backspace\")",
        &s,
        &CursorState::default(),
    );
    assert_eq!(content(&s4), "ab");
}

#[test]
fn keyboard_without_recipient_fails() {
    let s = reset(&catalog(), 0);
    let (_, _, log) = run("computer.keyboard.write(\"hi\")", &s, &CursorState::default());
    assert!(log.entries[0].error.as_ref().unwrap().contains("focus"));
    let (_, _, log) = run("computer.keyboard.press(\"enter\")", &s, &CursorState::default());
    assert!(log.has_error());
    // The browser window has no text handler and nothing is focused.
    let (_, _, log) = run("computer.keyboard.write(\"hi\")", &with_browser(), &CursorState::default());
    assert!(log.has_error());
}

#[test]
fn window_level_text_and_keys() {
    let s = reset(&catalog(), 0);
    let (s, _, log) = run(
        "computer.os.open_program(\"notepad\")\ncomputer.keyboard.write(\"hello \")\ncomputer.clipboard.copy_text(\"world\")\ncomputer.clipboard.paste()",
        &s,
        &CursorState::default(),
    );
    assert!(!log.has_error(), "{log:?}");
    assert_eq!(s.foreground_window().unwrap().node("body").unwrap().content, "hello world");
    let s = with_browser();
    let (s, _, log) = run("computer.keyboard.press(\"Ctrl+D\")", &s, &CursorState::default());
    assert!(!log.has_error());
    assert_eq!(s.setting("msedge", "bookmarked"), Some(&json!(true)));
}

#[test]
fn clipboard_image_uses_element_content() {
    let s = with_browser();
    let screen = annotate(&s, &DetectorConfig::uia_only(), 0);
    let id = screen.id_of_node("pic").unwrap();
    let c = parse_statement(&format!("computer.clipboard.copy_image(id={id}, description=\"ignored\")"), 1).unwrap();
    let done = execute_call(&catalog(), &s, &CursorState::default(), &c, &screen).unwrap();
    assert_eq!(
        done.state.clipboard,
        ClipboardContent::Image {
            description: "a red bicycle".into()
        }
    );
}

#[test]
fn right_click_and_scroll() {
    let s = with_browser();
    let (s, _, _) = run("computer.mouse.move_abs(x=0.92, y=0.07)\ncomputer.mouse.right_click()", &s, &CursorState::default());
    assert!(s.foreground_window().unwrap().is_node_visible("ctx"));
    let mut st = s;
    for (dir, want) in [("down", 0.25), ("down", 0.5), ("up", 0.25), ("up", 0.0), ("up", 0.0)] {
        st = run(&format!("computer.mouse.scroll(dir=\"{dir}\")"), &st, &CursorState::default()).0;
        assert_eq!(st.foreground_window().unwrap().viewport, want);
    }
    for _ in 0..6 {
        st = run("computer.mouse.scroll(direction=\"down\")", &st, &CursorState::default()).0;
    }
    assert_eq!(st.foreground_window().unwrap().viewport, 1.0);
}

#[test]
fn unknown_program() {
    let s = reset(&catalog(), 0);
    let (_, _, log) = run("computer.os.open_program(\"spotify\")", &s, &CursorState::default());
    assert!(log.entries[0].error.as_ref().unwrap().contains("spotify"));
}

#[test]
fn empty_program_is_identity() {
    let s = with_browser();
    let (s2, c2, log) = run("# nothing to do\n\n", &s, &CursorState::default());
    assert_eq!(s2, s);
    assert_eq!(c2, CursorState::default());
    assert!(log.entries.is_empty());
}

#[test]
fn error_truncates_program() {
    let s = with_browser();
    let text = "computer.clipboard.copy_text(\"a\")\ncomputer.mouse.move_id(id=999)\ncomputer.clipboard.copy_text(\"b\")\ncomputer.clipboard.copy_text(\"c\")";
    let (s2, _, log) = run(text, &s, &CursorState::default());
    assert_eq!(log.entries.len(), 2);
    assert!(log.entries[1].error.is_some());
    assert_eq!(s2.clipboard, ClipboardContent::Text { text: "a".into() });
    assert_eq!(EffectLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
}

#[test]
fn move_id_click_equals_move_abs_click() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let base = with_browser();
    for case in 0..100 {
        // Open the context menu on some cases so the screen varies.
        let s = if case % 2 == 0 {
            base.clone()
        } else {
            run("computer.mouse.move_abs(x=0.92, y=0.07)\ncomputer.mouse.right_click()", &base, &CursorState::default()).0
        };
        let screen = annotate(&s, &DetectorConfig::noiseless(), rng.gen());
        let id = rng.gen_range(0..screen.len());
        let center = screen.get(id).unwrap().bbox.center();
        let click = ["single_click", "double_click", "right_click"].choose(&mut rng).unwrap();
        let a = parse_program(&format!("computer.mouse.move_id(id={id})\ncomputer.mouse.{click}()")).unwrap();
        let b = parse_program(&format!(
            "computer.mouse.move_abs(x={}, y={})\ncomputer.mouse.{click}()",
            Literal::Float(center.x),
            Literal::Float(center.y)
        ))
        .unwrap();
        let (sa, ca, la) = execute_program(&catalog(), &s, &CursorState::default(), &a, &screen);
        let (sb, cb, lb) = execute_program(&catalog(), &s, &CursorState::default(), &b, &screen);
        assert_eq!(la.entries[1].effect, lb.entries[1].effect, "case {case}");
        assert_eq!(sa, sb);
        assert_eq!(ca, cb);
    }
}

#[test]
fn execution_is_deterministic() {
    let s = with_browser();
    let text = PROMPT_EXAMPLES.join("\n");
    let a = run(&text, &s, &CursorState::default());
    let b = run(&text, &s, &CursorState::default());
    assert_eq!(a, b);
}
