//! Config steps: the deterministic setup script run before an episode.
//!
//! `execute` steps never run arbitrary code. Their command (a string, or a
//! `["python", "-c", script]` list) is split into statements and each one
//! must be a whitelisted call:
//!
//! | statement                          | effect                                  |
//! |------------------------------------|-----------------------------------------|
//! | `import pyautogui`, `import time`  | nothing                                 |
//! | `pyautogui.click(px, py)`          | click at a 1440×900 pixel position      |
//! | `click_at(x, y)`                   | click at a normalized position          |
//! | `time.sleep(s)`, `sleep(s)`        | `max(1, ceil(s))` ticks                 |
//! | `write_file(path, text)`           | create or overwrite a text file         |
//! | `add_cookie(domain, name, value)`  | append a cookie                         |
//! | `set_setting(app, key, literal)`   | set one settings key                    |

use serde_json::Value;

use super::{
    dispatch_event, hit_test, open_program_edits, tick_wait, DeviceState, EffectKind, EffectRecord, EnvError,
    EventKind, StateEdit, Timer, World,
};
use crate::geom::Point;
use crate::lexer::{parse_call, tokenize, Literal};
use crate::taskspec::ConfigStep;
use crate::envsim::{Effect, ValueSource};

#[derive(Debug, Clone, PartialEq)]
pub enum ExecCommand {
    Import(String),
    ClickAt(Point),
    Sleep { ticks: u64 },
    WriteFile { path: String, text: String },
    AddCookie { domain: String, name: String, value: String },
    SetSetting { app: String, key: String, value: Value },
}

/// Applies `steps` in order.
pub fn apply_config(world: &World, state: &DeviceState, steps: &[ConfigStep]) -> Result<DeviceState, EnvError> {
    apply_config_logged(world, state, steps).map(|(s, _)| s)
}

/// Like [`apply_config`], also returning the effect records produced.
pub fn apply_config_logged(
    world: &World,
    state: &DeviceState,
    steps: &[ConfigStep],
) -> Result<(DeviceState, Vec<EffectRecord>), EnvError> {
    let mut current = state.clone();
    let mut records = Vec::new();
    for step in steps {
        apply_step(world, &mut current, step, &mut records)?;
    }
    Ok((current, records))
}

fn config_record(edits: Vec<StateEdit>) -> EffectRecord {
    EffectRecord {
        kind: EffectKind::Config,
        event: None,
        target: None,
        edits,
    }
}

fn commit(state: &mut DeviceState, records: &mut Vec<EffectRecord>, edits: Vec<StateEdit>) -> Result<(), EnvError> {
    state.apply_edits(&edits)?;
    records.push(config_record(edits));
    Ok(())
}

fn required<'a>(step: &'a ConfigStep, key: &str) -> Result<&'a str, EnvError> {
    step.param_str(key)
        .ok_or_else(|| EnvError::BadStep(format!("`{}` needs a string `{key}`", step.step_type)))
}

fn apply_step(
    world: &World,
    state: &mut DeviceState,
    step: &ConfigStep,
    records: &mut Vec<EffectRecord>,
) -> Result<(), EnvError> {
    match step.step_type.as_str() {
        "launch" => {
            let edits = open_program_edits(&world.catalog, state, required(step, "command")?)?;
            commit(state, records, edits)
        }
        "execute" => {
            let command = step
                .parameters
                .get("command")
                .ok_or_else(|| EnvError::BadStep("`execute` needs a `command`".into()))?;
            for cmd in parse_exec_script(command)? {
                run_exec(world, state, cmd, records)?;
            }
            Ok(())
        }
        "download" => {
            let name = required(step, "name")?;
            let path = required(step, "path")?.to_string();
            let data = world
                .fixtures
                .get(name)
                .ok_or_else(|| EnvError::FixtureMissing(name.to_string()))?
                .clone();
            let delay = step.parameters.get("delay").and_then(Value::as_u64).unwrap_or(0);
            if delay == 0 {
                return commit(state, records, vec![StateEdit::WriteFile { path, data }]);
            }
            let text = String::from_utf8(data)
                .map_err(|_| EnvError::BadStep(format!("delayed download `{name}` must be text")))?;
            let timer = Timer {
                id: state.next_id,
                due: state.tick + delay,
                window: None,
                effects: vec![Effect::WriteFile {
                    path: ValueSource::Literal(Value::String(path)),
                    content: ValueSource::Literal(Value::String(text)),
                }],
            };
            commit(state, records, vec![StateEdit::StartTimer { timer }])
        }
        "open_file" => {
            let path = required(step, "path")?.to_string();
            let text = state
                .files
                .get(&path)
                .filter(|f| f.kind == super::FileKind::File)
                .ok_or_else(|| EnvError::FileMissing(path.clone()))?
                .text()
                .unwrap_or_default()
                .to_string();
            let file_name = path.rsplit('\\').next().unwrap_or(&path).to_string();
            let ext = file_name.rsplit_once('.').map(|(_, e)| e).unwrap_or("");
            let app = world
                .catalog
                .app_for_extension(ext)
                .ok_or_else(|| EnvError::NoSuchProgram(format!("handler for .{ext}")))?;
            let open = open_program_edits(&world.catalog, state, &app.name)?;
            commit(state, records, open)?;
            let window = state
                .window_for_app(&app.name)
                .expect("window was just opened")
                .id
                .clone();
            let mut edits = vec![
                StateEdit::SetWindowDocument {
                    window: window.clone(),
                    path: Some(path.clone()),
                },
                StateEdit::SetWindowTitle {
                    window: window.clone(),
                    title: format!("{file_name} - {}", app.title),
                },
            ];
            if let Some(node) = &app.document_node {
                edits.push(StateEdit::SetNodeContent {
                    window,
                    node: node.clone(),
                    content: text,
                });
            }
            commit(state, records, edits)
        }
        other => Err(EnvError::UnknownStep(other.to_string())),
    }
}

fn run_exec(
    world: &World,
    state: &mut DeviceState,
    cmd: ExecCommand,
    records: &mut Vec<EffectRecord>,
) -> Result<(), EnvError> {
    match cmd {
        ExecCommand::Import(_) => Ok(()),
        ExecCommand::ClickAt(point) => {
            let Some(hit) = hit_test(state, point)? else {
                records.push(EffectRecord::noop(Some(EventKind::Click), None));
                return Ok(());
            };
            match dispatch_event(&world.catalog, state, &hit.window, &hit.node, EventKind::Click, "") {
                Ok((next, record)) => {
                    *state = next;
                    records.push(record);
                    Ok(())
                }
                Err(EnvError::NodeDisabled(_)) => {
                    records.push(EffectRecord::noop(Some(EventKind::Click), Some(hit)));
                    Ok(())
                }
                Err(e) => Err(e),
            }
        }
        ExecCommand::Sleep { ticks } => {
            for _ in 0..ticks {
                let (next, record) = tick_wait(&world.catalog, state)?;
                *state = next;
                records.push(record);
            }
            Ok(())
        }
        ExecCommand::WriteFile { path, text } => commit(
            state,
            records,
            vec![StateEdit::WriteFile {
                path,
                data: text.into_bytes(),
            }],
        ),
        ExecCommand::AddCookie { domain, name, value } => commit(
            state,
            records,
            vec![StateEdit::AppendCookie {
                cookie: super::CookieRecord { domain, name, value },
            }],
        ),
        ExecCommand::SetSetting { app, key, value } => {
            commit(state, records, vec![StateEdit::SetSetting { app, key, value }])
        }
    }
}

/// Splits a script on `;` and newlines outside string literals.
fn split_statements(script: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in script.chars() {
        if let Some(q) = quote {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            ';' | '\n' => out.push(std::mem::take(&mut cur)),
            '"' | '\'' => {
                quote = Some(c);
                cur.push(c);
            }
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Parses an `execute` command into whitelisted operations.
pub fn parse_exec_script(command: &Value) -> Result<Vec<ExecCommand>, EnvError> {
    let script = match command {
        Value::String(s) => s.clone(),
        Value::Array(parts) => {
            let parts: Vec<&str> = parts
                .iter()
                .map(|p| p.as_str().ok_or_else(|| EnvError::ExecDenied("non-string argument".into())))
                .collect::<Result<_, _>>()?;
            match parts.as_slice() {
                ["python", "-c", script] | ["python3", "-c", script] => script.to_string(),
                _ => return Err(EnvError::ExecDenied(parts.join(" "))),
            }
        }
        other => return Err(EnvError::ExecDenied(other.to_string())),
    };
    split_statements(&script).iter().map(|s| parse_exec_statement(s)).collect()
}

fn parse_exec_statement(stmt: &str) -> Result<ExecCommand, EnvError> {
    let denied = || EnvError::ExecDenied(stmt.to_string());
    if let Some(module) = stmt.strip_prefix("import ") {
        let module = module.trim();
        return match module {
            "pyautogui" | "time" => Ok(ExecCommand::Import(module.to_string())),
            _ => Err(denied()),
        };
    }
    let tokens = tokenize(stmt).map_err(|_| denied())?;
    let call = parse_call(&tokens).map_err(|_| denied())?;
    let names: Vec<&str> = call.path.iter().map(String::as_str).collect();
    let mut args = call.args.clone();
    // Keyword arguments are accepted in the documented order only.
    args.extend(call.kwargs.iter().map(|(_, v)| v.clone()));
    let num = |i: usize| args.get(i).and_then(Literal::as_f64).ok_or_else(denied);
    let text = |i: usize| args.get(i).and_then(Literal::as_str).map(str::to_string).ok_or_else(denied);
    let arity = |n: usize| if args.len() == n { Ok(()) } else { Err(denied()) };
    match names.as_slice() {
        ["pyautogui", "click"] => {
            arity(2)?;
            let p = Point::from_pixels(num(0)?, num(1)?);
            if !p.in_unit_square() {
                return Err(EnvError::OutOfRange { x: p.x, y: p.y });
            }
            Ok(ExecCommand::ClickAt(p))
        }
        ["click_at"] => {
            arity(2)?;
            let p = Point::new(num(0)?, num(1)?);
            if !p.in_unit_square() {
                return Err(EnvError::OutOfRange { x: p.x, y: p.y });
            }
            Ok(ExecCommand::ClickAt(p))
        }
        ["time", "sleep"] | ["sleep"] => {
            arity(1)?;
            let secs = num(0)?;
            if secs < 0.0 {
                return Err(denied());
            }
            Ok(ExecCommand::Sleep {
                ticks: (secs.ceil() as u64).max(1),
            })
        }
        ["write_file"] => {
            arity(2)?;
            Ok(ExecCommand::WriteFile {
                path: text(0)?,
                text: text(1)?,
            })
        }
        ["add_cookie"] => {
            arity(3)?;
            Ok(ExecCommand::AddCookie {
                domain: text(0)?,
                name: text(1)?,
                value: text(2)?,
            })
        }
        ["set_setting"] => {
            arity(3)?;
            let value = match &args[2] {
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Int(i) => Value::from(*i),
                Literal::Float(f) => serde_json::Number::from_f64(*f).map(Value::Number).ok_or_else(denied)?,
                Literal::Str(s) => Value::String(s.clone()),
            };
            Ok(ExecCommand::SetSetting {
                app: text(0)?,
                key: text(1)?,
                value,
            })
        }
        _ => Err(denied()),
    }
}
