//! The embedded task corpus: app models, tasks, oracle scripts, golden
//! files and the human-baseline fixture.
//!
//! Oracle scripts name UI nodes; they are resolved to `move_abs` calls at the
//! node centers, so they do not depend on the detector profile.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::actions::{parse_program, ComputerCall, Group};
use crate::agent::{render_response, AgentDecision};
use crate::canonical::sha256_hex;
use crate::envsim::{
    home_path, AppModel, Behavior, Catalog, Effect, EventKind, NodeKind, UiNode, ValueSource, World,
};
use crate::evaluate::EvalContext;
use crate::geom::Rect;
use crate::lexer::Literal;
use crate::taskspec::{serialize, task_from_value, Domain, TaskSpec, TaskSuite};

// ---------------------------------------------------------------------------
// Builders

fn r(x1: f64, y1: f64, x2: f64, y2: f64) -> Rect {
    Rect::new(x1, y1, x2, y2)
}

fn node(id: &str, kind: NodeKind, content: &str, b: Rect) -> UiNode {
    UiNode::new(id, kind, content, b)
}

fn button(id: &str, content: &str, b: Rect) -> UiNode {
    node(id, NodeKind::Button, content, b)
}

fn item(id: &str, content: &str, b: Rect) -> UiNode {
    node(id, NodeKind::ListItem, content, b)
}

fn text(id: &str, content: &str, b: Rect) -> UiNode {
    node(id, NodeKind::Text, content, b)
}

fn input(id: &str, content: &str, b: Rect) -> UiNode {
    node(id, NodeKind::Input, content, b)
}

fn icon(id: &str, content: &str, b: Rect) -> UiNode {
    node(id, NodeKind::Icon, content, b)
}

fn lit(v: Value) -> ValueSource {
    ValueSource::Literal(v)
}

fn set(app: &str, key: &str, value: ValueSource) -> Effect {
    Effect::SetSetting {
        app: app.into(),
        key: key.into(),
        value,
    }
}

fn show(nodes: &[&str]) -> Effect {
    Effect::SetVisible {
        nodes: nodes.iter().map(|s| s.to_string()).collect(),
        visible: true,
    }
}

fn hide(nodes: &[&str]) -> Effect {
    Effect::SetVisible {
        nodes: nodes.iter().map(|s| s.to_string()).collect(),
        visible: false,
    }
}

fn content(node: &str, value: &str) -> Effect {
    Effect::SetContent {
        node: node.into(),
        value: lit(json!(value)),
    }
}

fn overlay(n: UiNode) -> UiNode {
    n.hidden().z(2)
}

fn settings(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

// ---------------------------------------------------------------------------
// App models

fn vlc() -> AppModel {
    let mut a = AppModel::new("vlc", "VLC media player");
    a.aliases = vec!["vlc media player".into()];
    let menu_items = ["mi_effects", "mi_prefs"];
    let panel = [
        "prefs_title",
        "lbl_rec",
        "in_rec",
        "lbl_maxvol",
        "in_maxvol",
        "chk_resize",
        "prefs_save",
        "prefs_cancel",
    ];
    let menus = [
        ("menu_media", "Media", 0.00),
        ("menu_playback", "Playback", 0.06),
        ("menu_audio", "Audio", 0.13),
        ("menu_video", "Video", 0.19),
        ("menu_view", "View", 0.31),
        ("menu_help", "Help", 0.37),
    ];
    for (id, label, x) in menus {
        a.elements
            .push(button(id, label, r(x, 0.0, x + 0.06, 0.04)).on(EventKind::Click, vec![hide(&menu_items)]));
    }
    a.elements.extend([
        button("menu_tools", "Tools", r(0.25, 0.0, 0.31, 0.04)).on(EventKind::Click, vec![show(&menu_items)]),
        node("video", NodeKind::Image, "video surface", r(0.0, 0.05, 1.0, 0.85)),
        button("btn_play", "Play", r(0.02, 0.88, 0.08, 0.95)),
        button("btn_stop", "Stop", r(0.09, 0.88, 0.15, 0.95)),
        button("btn_record", "Record", r(0.16, 0.88, 0.24, 0.95))
            .on(EventKind::Click, vec![set("vlc", "recording", lit(json!(true)))]),
        button("btn_loop", "Loop", r(0.25, 0.88, 0.31, 0.95))
            .on(EventKind::Click, vec![set("vlc", "loop", lit(json!(true)))]),
        node("volume", NodeKind::Slider, "Volume 100%", r(0.8, 0.88, 0.98, 0.95)),
        overlay(item("mi_effects", "Effects and Filters", r(0.25, 0.04, 0.45, 0.08)))
            .on(EventKind::Click, vec![hide(&menu_items)]),
        overlay(item("mi_prefs", "Preferences", r(0.25, 0.08, 0.45, 0.12)))
            .on(EventKind::Click, vec![hide(&menu_items), show(&panel)]),
        overlay(text("prefs_title", "Simple Preferences", r(0.2, 0.15, 0.8, 0.2))),
        overlay(text("lbl_rec", "Record directory or filename", r(0.22, 0.25, 0.5, 0.29))),
        overlay(input("in_rec", &home_path("Videos"), r(0.5, 0.25, 0.78, 0.29))),
        overlay(text("lbl_maxvol", "Maximum volume (%)", r(0.22, 0.32, 0.5, 0.36))),
        overlay(input("in_maxvol", "125", r(0.5, 0.32, 0.78, 0.36))),
        overlay(button("chk_resize", "Resize interface to video size", r(0.22, 0.39, 0.78, 0.43)))
            .on(EventKind::Click, vec![set("vlc", "resize_interface", lit(json!(false)))]),
        overlay(button("prefs_save", "Save", r(0.6, 0.7, 0.7, 0.75))).on(
            EventKind::Click,
            vec![
                set("vlc", "recording_file_path", ValueSource::NodeContent("in_rec".into())),
                set("vlc", "max_volume", ValueSource::NodeNumber("in_maxvol".into())),
                hide(&panel),
            ],
        ),
        overlay(button("prefs_cancel", "Cancel", r(0.7, 0.7, 0.8, 0.75))).on(EventKind::Click, vec![hide(&panel)]),
    ]);
    a.default_settings = settings(&[
        ("recording_file_path", json!(home_path("Videos"))),
        ("max_volume", json!(125)),
        ("loop", json!(false)),
        ("recording", json!(false)),
        ("resize_interface", json!(true)),
    ]);
    a
}

fn msedge() -> AppModel {
    let mut a = AppModel::new("msedge", "New tab - Microsoft Edge");
    a.aliases = vec!["edge".into(), "microsoft edge".into()];
    let menu = ["mi_newtab", "mi_history", "mi_downloads", "mi_settings"];
    let nav = ["nav_privacy", "nav_start", "nav_appearance"];
    let privacy = ["btn_clear", "btn_search_engine", "btn_dnt"];
    let start = ["lbl_home", "in_home"];
    let clear = ["clr_title", "clr_now", "clr_cancel"];
    let engines = ["se_bing", "se_google", "se_ddg", "se_yahoo"];
    a.elements = vec![
        icon("btn_back", "Back", r(0.0, 0.05, 0.03, 0.09)),
        icon("btn_refresh", "Refresh", r(0.03, 0.05, 0.06, 0.09)),
        input("address", "", r(0.1, 0.05, 0.7, 0.09)).on(
            EventKind::TextInput,
            vec![
                set("msedge", "current_url", ValueSource::Payload),
                Effect::SetTitle {
                    value: ValueSource::Concat(vec![ValueSource::Payload, lit(json!(" - Microsoft Edge"))]),
                },
            ],
        ),
        icon("btn_fav", "Favorites", r(0.72, 0.05, 0.75, 0.09)),
        button("btn_menu", "Settings and more", r(0.95, 0.05, 1.0, 0.09)).on(EventKind::Click, vec![show(&menu)]),
        overlay(item("mi_newtab", "New tab", r(0.75, 0.1, 1.0, 0.14))).on(EventKind::Click, vec![hide(&menu)]),
        overlay(item("mi_history", "History", r(0.75, 0.14, 1.0, 0.18))).on(EventKind::Click, vec![hide(&menu)]),
        overlay(item("mi_downloads", "Downloads", r(0.75, 0.18, 1.0, 0.22))).on(EventKind::Click, vec![hide(&menu)]),
        overlay(item("mi_settings", "Settings", r(0.75, 0.22, 1.0, 0.26))).on(
            EventKind::Click,
            vec![
                hide(&menu),
                hide(&["page_logo", "tile_news", "tile_mail"]),
                show(&nav),
                Effect::SetTitle {
                    value: lit(json!("Settings - Microsoft Edge")),
                },
            ],
        ),
        node("page_logo", NodeKind::Image, "Microsoft Edge logo", r(0.4, 0.3, 0.6, 0.45)),
        button("tile_news", "News", r(0.3, 0.5, 0.45, 0.6)),
        button("tile_mail", "Outlook", r(0.55, 0.5, 0.7, 0.6)),
        item("nav_privacy", "Privacy, search, and services", r(0.0, 0.2, 0.2, 0.25))
            .hidden()
            .on(EventKind::Click, vec![hide(&start), show(&privacy)]),
        item("nav_start", "Start, home, and new tabs", r(0.0, 0.26, 0.2, 0.31))
            .hidden()
            .on(EventKind::Click, vec![hide(&privacy), show(&start)]),
        item("nav_appearance", "Appearance", r(0.0, 0.32, 0.2, 0.37))
            .hidden()
            .on(EventKind::Click, vec![hide(&privacy), hide(&start)]),
        button("btn_clear", "Choose what to clear", r(0.3, 0.25, 0.6, 0.3))
            .hidden()
            .on(EventKind::Click, vec![show(&clear)]),
        button("btn_search_engine", "Search engine used in the address bar: Bing", r(0.3, 0.35, 0.9, 0.4))
            .hidden()
            .on(EventKind::Click, vec![show(&engines)]),
        button("btn_dnt", "Send Do Not Track requests", r(0.3, 0.45, 0.9, 0.5))
            .hidden()
            .on(EventKind::Click, vec![set("msedge", "do_not_track", lit(json!(true)))]),
        text("lbl_home", "Home page address", r(0.3, 0.25, 0.6, 0.29)).hidden(),
        input("in_home", "", r(0.3, 0.3, 0.9, 0.35))
            .hidden()
            .on(EventKind::TextInput, vec![set("msedge", "homepage", ValueSource::Payload)]),
        overlay(text("clr_title", "Clear browsing data", r(0.35, 0.5, 0.65, 0.55))),
        overlay(button("clr_now", "Clear now", r(0.4, 0.6, 0.5, 0.65)))
            .on(EventKind::Click, vec![Effect::DeleteCookies { domain: None }, hide(&clear)]),
        overlay(button("clr_cancel", "Cancel", r(0.52, 0.6, 0.62, 0.65))).on(EventKind::Click, vec![hide(&clear)]),
    ];
    for (i, (id, name)) in engines.iter().zip(["Bing", "Google", "DuckDuckGo", "Yahoo!"]).enumerate() {
        let y = 0.41 + 0.04 * i as f64;
        a.elements.push(overlay(item(id, name, r(0.5, y, 0.9, y + 0.04))).on(
            EventKind::Click,
            vec![
                set("msedge", "default_search_engine", lit(json!(name))),
                content("btn_search_engine", &format!("Search engine used in the address bar: {name}")),
                hide(&engines),
            ],
        ));
    }
    a.default_settings = settings(&[
        ("default_search_engine", json!("Bing")),
        ("homepage", json!("about:blank")),
        ("do_not_track", json!(false)),
    ]);
    a
}

fn explorer() -> AppModel {
    let mut a = AppModel::new("explorer", "Documents - File Explorer");
    a.aliases = vec!["file explorer".into()];
    let ctx = ["ctx_open", "ctx_rename", "ctx_props"];
    let props = ["props_title", "chk_readonly", "chk_hidden", "props_ok"];
    for (i, name) in ["Home", "Desktop", "Documents", "Downloads", "Pictures"].iter().enumerate() {
        let y = 0.1 + 0.05 * i as f64;
        a.elements.push(item(
            &format!("nav_{}", name.to_lowercase()),
            name,
            r(0.0, y, 0.18, y + 0.04),
        ));
    }
    a.elements.extend([
        button("tb_new", "New", r(0.2, 0.05, 0.26, 0.09)),
        icon("tb_cut", "Cut", r(0.27, 0.05, 0.3, 0.09)),
        icon("tb_copy", "Copy", r(0.31, 0.05, 0.34, 0.09)),
        button("tb_sort", "Sort", r(0.36, 0.05, 0.42, 0.09)),
        button("tb_view", "View", r(0.43, 0.05, 0.49, 0.09)),
        item("f_budget", "budget.xlsx", r(0.2, 0.11, 0.6, 0.15)).on(EventKind::RightClick, vec![hide(&ctx)]),
        item("f_notes", "notes.txt", r(0.2, 0.15, 0.6, 0.19)).on(EventKind::RightClick, vec![hide(&ctx)]),
        item("f_secret", "secret.txt", r(0.2, 0.19, 0.6, 0.23)).on(EventKind::RightClick, vec![show(&ctx)]),
        overlay(item("ctx_open", "Open", r(0.3, 0.24, 0.5, 0.28))).on(EventKind::Click, vec![hide(&ctx)]),
        overlay(item("ctx_rename", "Rename", r(0.3, 0.28, 0.5, 0.32))).on(EventKind::Click, vec![hide(&ctx)]),
        overlay(item("ctx_props", "Properties", r(0.3, 0.32, 0.5, 0.36)))
            .on(EventKind::Click, vec![hide(&ctx), show(&props)]),
        overlay(text("props_title", "secret.txt Properties", r(0.3, 0.4, 0.7, 0.45))),
        overlay(button("chk_readonly", "Read-only", r(0.32, 0.5, 0.45, 0.54))),
        overlay(button("chk_hidden", "Hidden", r(0.47, 0.5, 0.6, 0.54))).on(
            EventKind::Click,
            vec![Effect::SetFileHidden {
                path: lit(json!(home_path("Documents\\secret.txt"))),
                hidden: true,
            }],
        ),
        overlay(button("props_ok", "OK", r(0.6, 0.6, 0.68, 0.64))).on(EventKind::Click, vec![hide(&props)]),
    ]);
    a
}

fn system_settings() -> AppModel {
    let mut a = AppModel::new("settings", "Settings");
    a.aliases = vec!["ms-settings".into()];
    let system = ["sys_display", "sys_sound", "sys_notifications", "sys_power"];
    let notif = ["notif_toggle", "notif_dnd"];
    let time = ["time_zone"];
    let zones = ["tz_pacific", "tz_eastern", "tz_cet"];
    let pages: Vec<&str> = system.iter().chain(&notif).chain(&time).chain(&zones).copied().collect();
    let others: Vec<&str> = pages.clone();
    a.elements = vec![
        input("search", "Find a setting", r(0.0, 0.06, 0.2, 0.1)),
        item("nav_home", "Home", r(0.0, 0.12, 0.2, 0.16)).on(EventKind::Click, vec![hide(&others)]),
        item("nav_system", "System", r(0.0, 0.16, 0.2, 0.2))
            .on(EventKind::Click, vec![hide(&others), show(&system)]),
        item("nav_bluetooth", "Bluetooth & devices", r(0.0, 0.2, 0.2, 0.24)).on(EventKind::Click, vec![hide(&others)]),
        item("nav_personalization", "Personalization", r(0.0, 0.24, 0.2, 0.28))
            .on(EventKind::Click, vec![hide(&others)]),
        item("nav_apps", "Apps", r(0.0, 0.28, 0.2, 0.32)).on(EventKind::Click, vec![hide(&others)]),
        item("nav_time", "Time & language", r(0.0, 0.32, 0.2, 0.36))
            .on(EventKind::Click, vec![hide(&others), show(&time)]),
        button("tile_recommended", "Recommended settings", r(0.3, 0.2, 0.6, 0.3)),
        button("tile_cloud", "Cloud storage", r(0.65, 0.2, 0.95, 0.3)),
        item("sys_display", "Display", r(0.25, 0.15, 0.95, 0.2)).hidden().z(1),
        item("sys_sound", "Sound", r(0.25, 0.21, 0.95, 0.26)).hidden().z(1),
        item("sys_notifications", "Notifications", r(0.25, 0.27, 0.95, 0.32))
            .hidden()
            .z(1)
            .on(EventKind::Click, vec![hide(&system), show(&notif)]),
        item("sys_power", "Power & battery", r(0.25, 0.33, 0.95, 0.38)).hidden().z(1),
        button("notif_toggle", "Notifications: On", r(0.7, 0.15, 0.95, 0.2)).hidden().z(1).on(
            EventKind::Click,
            vec![set("settings", "notifications", lit(json!(false))), content("notif_toggle", "Notifications: Off")],
        ),
        button("notif_dnd", "Do not disturb: Off", r(0.7, 0.22, 0.95, 0.27))
            .hidden()
            .z(1)
            .on(EventKind::Click, vec![set("settings", "do_not_disturb", lit(json!(true)))]),
        button("time_zone", "Time zone: (UTC) Coordinated Universal Time", r(0.3, 0.15, 0.95, 0.2))
            .hidden()
            .z(1)
            .on(EventKind::Click, vec![show(&zones)]),
    ];
    let tz = [
        ("tz_pacific", "(UTC-08:00) Pacific Time (US & Canada)", "Pacific Standard Time"),
        ("tz_eastern", "(UTC-05:00) Eastern Time (US & Canada)", "Eastern Standard Time"),
        ("tz_cet", "(UTC+01:00) Amsterdam, Berlin, Rome", "W. Europe Standard Time"),
    ];
    for (i, (id, label, key)) in tz.into_iter().enumerate() {
        let y = 0.21 + 0.04 * i as f64;
        a.elements.push(overlay(item(id, label, r(0.4, y, 0.95, y + 0.04))).on(
            EventKind::Click,
            vec![
                set("settings", "time_zone", lit(json!(key))),
                content("time_zone", &format!("Time zone: {label}")),
                hide(&zones),
            ],
        ));
    }
    a.default_settings = settings(&[
        ("notifications", json!(true)),
        ("do_not_disturb", json!(false)),
        ("time_zone", json!("UTC")),
    ]);
    a
}

fn vscode() -> AppModel {
    let mut a = AppModel::new("code", "Welcome - Visual Studio Code");
    a.aliases = vec!["vscode".into(), "vs code".into()];
    let manage = ["mm_settings", "mm_themes", "mm_keys"];
    let editor = ["set_search", "lbl_autosave", "sel_autosave", "lbl_delay", "in_delay"];
    let modes = ["as_off", "as_delay", "as_focus"];
    let themes = ["th_modern", "th_vs_dark", "th_light", "th_solarized"];
    let save = ["save_lbl", "save_path"];
    a.elements = vec![
        icon("act_explorer", "Explorer", r(0.0, 0.06, 0.04, 0.11)),
        icon("act_search", "Search", r(0.0, 0.12, 0.04, 0.17)),
        icon("act_extensions", "Extensions", r(0.0, 0.18, 0.04, 0.23)),
        icon("act_manage", "Manage", r(0.0, 0.9, 0.04, 0.95)).on(EventKind::Click, vec![show(&manage)]),
        overlay(item("mm_settings", "Settings", r(0.04, 0.74, 0.2, 0.78)))
            .on(EventKind::Click, vec![hide(&manage), show(&editor)]),
        overlay(item("mm_themes", "Themes", r(0.04, 0.78, 0.2, 0.82)))
            .on(EventKind::Click, vec![hide(&manage), show(&themes)]),
        overlay(item("mm_keys", "Keyboard Shortcuts", r(0.04, 0.82, 0.2, 0.86))).on(EventKind::Click, vec![hide(&manage)]),
        text("tab_welcome", "Welcome", r(0.05, 0.02, 0.15, 0.05)),
        text("editor", "", r(0.05, 0.06, 1.0, 0.9)),
        text("status", "Ln 1, Col 1", r(0.8, 0.96, 1.0, 1.0)),
        input("set_search", "Search settings", r(0.1, 0.1, 0.9, 0.14)).hidden().z(1),
        text("lbl_autosave", "Files: Auto Save", r(0.1, 0.2, 0.5, 0.24)).hidden().z(1),
        button("sel_autosave", "off", r(0.1, 0.25, 0.35, 0.29))
            .hidden()
            .z(1)
            .on(EventKind::Click, vec![show(&modes)]),
        text("lbl_delay", "Files: Auto Save Delay", r(0.1, 0.35, 0.5, 0.39)).hidden().z(1),
        input("in_delay", "1000", r(0.1, 0.4, 0.35, 0.44))
            .hidden()
            .z(1)
            .on(EventKind::TextInput, vec![set("code", "files.autoSaveDelay", ValueSource::PayloadNumber)]),
        overlay(text("save_lbl", "Save As", r(0.3, 0.3, 0.7, 0.34))),
        overlay(input("save_path", "", r(0.3, 0.35, 0.7, 0.39))).on(
            EventKind::TextInput,
            vec![
                Effect::WriteFile {
                    path: ValueSource::Payload,
                    content: ValueSource::NodeContent("editor".into()),
                },
                hide(&save),
            ],
        ),
    ];
    for (i, (id, value)) in modes.iter().zip(["off", "afterDelay", "onFocusChange"]).enumerate() {
        let y = 0.29 + 0.03 * i as f64;
        a.elements.push(
            node(id, NodeKind::ListItem, value, r(0.1, y, 0.35, y + 0.03))
                .hidden()
                .z(3)
                .on(
                    EventKind::Click,
                    vec![set("code", "files.autoSave", lit(json!(value))), content("sel_autosave", value), hide(&modes)],
                ),
        );
    }
    let theme_rows = [
        ("th_modern", "Dark Modern", "Default Dark Modern"),
        ("th_vs_dark", "Dark (Visual Studio)", "Visual Studio Dark"),
        ("th_light", "Light (Visual Studio)", "Visual Studio Light"),
        ("th_solarized", "Solarized Dark", "Solarized Dark"),
    ];
    for (i, (id, label, value)) in theme_rows.into_iter().enumerate() {
        let y = 0.1 + 0.04 * i as f64;
        a.elements.push(overlay(item(id, label, r(0.3, y, 0.7, y + 0.04))).on(
            EventKind::Click,
            vec![set("code", "workbench.colorTheme", lit(json!(value))), hide(&themes)],
        ));
    }
    a.behaviors = vec![
        Behavior::on(
            EventKind::TextInput,
            vec![Effect::SetContent {
                node: "editor".into(),
                value: ValueSource::Concat(vec![ValueSource::NodeContent("editor".into()), ValueSource::Payload]),
            }],
        ),
        Behavior::on_key("ctrl+s", vec![show(&save)]),
    ];
    a.default_settings = settings(&[
        ("files.autoSave", json!("off")),
        ("files.autoSaveDelay", json!(1000)),
        ("workbench.colorTheme", json!("Default Dark Modern")),
    ]);
    a
}

fn notepad() -> AppModel {
    let mut a = AppModel::new("notepad", "Untitled - Notepad");
    let dialog = ["save_title", "save_name", "save_btn"];
    let save_effects = || {
        vec![
            Effect::WriteFile {
                path: ValueSource::Concat(vec![
                    lit(json!(home_path("Documents\\"))),
                    ValueSource::NodeContent("save_name".into()),
                ]),
                content: ValueSource::NodeContent("body".into()),
            },
            Effect::SetTitle {
                value: ValueSource::Concat(vec![ValueSource::NodeContent("save_name".into()), lit(json!(" - Notepad"))]),
            },
            hide(&dialog),
        ]
    };
    a.elements = vec![
        button("menu_file", "File", r(0.0, 0.0, 0.05, 0.04)),
        button("menu_edit", "Edit", r(0.05, 0.0, 0.1, 0.04)),
        button("menu_view", "View", r(0.1, 0.0, 0.15, 0.04)),
        text("body", "", r(0.0, 0.05, 1.0, 0.96)),
        text("status", "Ln 1, Col 1", r(0.0, 0.96, 0.3, 1.0)),
        overlay(text("save_title", "Save as", r(0.3, 0.3, 0.7, 0.34))),
        overlay(input("save_name", "*.txt", r(0.3, 0.36, 0.6, 0.4))).on(EventKind::TextInput, save_effects()),
        overlay(button("save_btn", "Save", r(0.61, 0.36, 0.7, 0.4))).on(EventKind::Click, save_effects()),
    ];
    a.behaviors = vec![
        Behavior::on(
            EventKind::TextInput,
            vec![Effect::SetContent {
                node: "body".into(),
                value: ValueSource::Concat(vec![ValueSource::NodeContent("body".into()), ValueSource::Payload]),
            }],
        ),
        Behavior::on_key("ctrl+s", vec![show(&dialog)]),
    ];
    a.file_types = vec!["txt".into()];
    a.document_node = Some("body".into());
    a
}

fn clock() -> AppModel {
    let mut a = AppModel::new("clock", "Clock");
    let timer = ["lbl_hours", "in_hours", "lbl_minutes", "in_minutes", "btn_start"];
    let world = ["world_list"];
    let all: Vec<&str> = timer.iter().chain(&world).copied().collect();
    a.elements = vec![
        item("nav_focus", "Focus sessions", r(0.0, 0.1, 0.2, 0.15)).on(EventKind::Click, vec![hide(&all)]),
        item("nav_timer", "Timer", r(0.0, 0.15, 0.2, 0.2)).on(EventKind::Click, vec![hide(&all), show(&timer)]),
        item("nav_alarm", "Alarm", r(0.0, 0.2, 0.2, 0.25)).on(EventKind::Click, vec![hide(&all)]),
        item("nav_stopwatch", "Stopwatch", r(0.0, 0.25, 0.2, 0.3)).on(EventKind::Click, vec![hide(&all)]),
        item("nav_world", "World clock", r(0.0, 0.3, 0.2, 0.35)).on(EventKind::Click, vec![hide(&all), show(&world)]),
        button("focus_start", "Start focus session", r(0.4, 0.5, 0.6, 0.56)),
        text("lbl_hours", "Hours", r(0.3, 0.2, 0.45, 0.24)).hidden().z(1),
        input("in_hours", "0", r(0.3, 0.25, 0.45, 0.3)).hidden().z(1),
        text("lbl_minutes", "Minutes", r(0.5, 0.2, 0.65, 0.24)).hidden().z(1),
        input("in_minutes", "0", r(0.5, 0.25, 0.65, 0.3)).hidden().z(1),
        button("btn_start", "Start", r(0.4, 0.4, 0.55, 0.45)).hidden().z(1).on(
            EventKind::Click,
            vec![
                set("clock", "timer_hours", ValueSource::NodeNumber("in_hours".into())),
                set("clock", "timer_minutes", ValueSource::NodeNumber("in_minutes".into())),
                set("clock", "timer_running", lit(json!(true))),
            ],
        ),
        text("world_list", "Local time", r(0.3, 0.2, 0.9, 0.3)).hidden().z(1),
    ];
    a.default_settings = settings(&[
        ("timer_hours", json!(0)),
        ("timer_minutes", json!(0)),
        ("timer_running", json!(false)),
    ]);
    a
}

fn calc() -> AppModel {
    let mut a = AppModel::new("calc", "Untitled 1 - LibreOffice Calc");
    a.aliases = vec!["scalc".into(), "libreoffice calc".into()];
    let dialog = ["rn_title", "rn_name", "rn_ok", "rn_cancel"];
    let rename = || {
        vec![
            set("calc", "sheet1_name", ValueSource::NodeContent("rn_name".into())),
            Effect::SetContent {
                node: "tab_sheet1".into(),
                value: ValueSource::NodeContent("rn_name".into()),
            },
            hide(&dialog),
        ]
    };
    a.elements = vec![
        icon("tb_bold", "Bold", r(0.0, 0.04, 0.03, 0.08)),
        icon("tb_sum", "Sum", r(0.04, 0.04, 0.07, 0.08)),
        icon("tb_chart", "Insert Chart", r(0.08, 0.04, 0.11, 0.08)),
        input("name_box", "A1", r(0.0, 0.09, 0.08, 0.12)),
        input("formula", "", r(0.1, 0.09, 1.0, 0.12)),
        node("grid", NodeKind::Image, "spreadsheet grid", r(0.0, 0.13, 1.0, 0.9)),
        icon("tab_add", "Add sheet", r(0.0, 0.92, 0.04, 0.96)),
        button("tab_sheet1", "Sheet1", r(0.05, 0.92, 0.15, 0.96)).on(EventKind::DoubleClick, vec![show(&dialog)]),
        overlay(text("rn_title", "Rename Sheet", r(0.35, 0.35, 0.65, 0.39))),
        overlay(input("rn_name", "Sheet1", r(0.35, 0.4, 0.65, 0.44))).on(EventKind::TextInput, rename()),
        overlay(button("rn_ok", "OK", r(0.45, 0.5, 0.54, 0.54))).on(EventKind::Click, rename()),
        overlay(button("rn_cancel", "Cancel", r(0.56, 0.5, 0.65, 0.54))).on(EventKind::Click, vec![hide(&dialog)]),
    ];
    a.default_settings = settings(&[("sheet1_name", json!("Sheet1"))]);
    a
}

fn writer() -> AppModel {
    let mut a = AppModel::new("writer", "LibreOffice Writer");
    a.aliases = vec!["swriter".into(), "libreoffice writer".into()];
    let palette = ["hl_yellow", "hl_green", "hl_none"];
    a.elements = vec![
        button("menu_file", "File", r(0.0, 0.0, 0.05, 0.04)),
        button("menu_edit", "Edit", r(0.05, 0.0, 0.1, 0.04)),
        button("menu_format", "Format", r(0.1, 0.0, 0.16, 0.04)),
        icon("tb_bold", "Bold", r(0.0, 0.05, 0.03, 0.09)),
        icon("tb_italic", "Italic", r(0.03, 0.05, 0.06, 0.09)),
        icon("tb_highlight", "Character Highlighting Color", r(0.07, 0.05, 0.1, 0.09))
            .on(EventKind::Click, vec![show(&palette)]),
        text("body", "", r(0.1, 0.12, 0.9, 0.95)),
        overlay(item("hl_yellow", "Yellow", r(0.07, 0.09, 0.17, 0.12))).on(EventKind::Click, vec![hide(&palette)]),
        overlay(item("hl_green", "Green", r(0.07, 0.12, 0.17, 0.15))).on(EventKind::Click, vec![hide(&palette)]),
        overlay(item("hl_none", "No Fill", r(0.07, 0.15, 0.17, 0.18))).on(
            EventKind::Click,
            vec![
                Effect::SetContent {
                    node: "body".into(),
                    value: ValueSource::StripHighlights(Box::new(ValueSource::NodeContent("body".into()))),
                },
                hide(&palette),
            ],
        ),
    ];
    a.behaviors = vec![Behavior::on_key(
        "ctrl+s",
        vec![Effect::WriteFile {
            path: ValueSource::WindowDocument,
            content: ValueSource::NodeContent("body".into()),
        }],
    )];
    a.file_types = vec!["docx".into(), "odt".into()];
    a.document_node = Some("body".into());
    a
}

/// Every application model in the corpus.
pub fn catalog() -> Catalog {
    Catalog::new([vlc(), msedge(), explorer(), system_settings(), vscode(), notepad(), clock(), calc(), writer()])
}

pub fn world() -> World {
    World {
        catalog: catalog(),
        fixtures: BTreeMap::new(),
    }
}

// ---------------------------------------------------------------------------
// Tasks and oracles

#[derive(Debug, Clone, Copy)]
enum Act {
    Click(&'static str),
    DoubleClick(&'static str),
    RightClick(&'static str),
    Write(&'static str),
    Press(&'static str),
    Open(&'static str),
}

#[derive(Debug, Clone, Copy)]
enum Finish {
    Done,
    Fail(&'static str),
}

struct TaskDef {
    task: Value,
    /// App whose nodes the oracle names.
    app: &'static str,
    steps: Vec<Vec<Act>>,
    finish: Finish,
    /// Row of the human-baseline table the task belongs to.
    human_row: &'static str,
    adapted: bool,
    golden: Option<(&'static str, &'static str)>,
}

const VLC_RECORDINGS_ID: &str = "8ba5ae7a-5ae5-4eab-9fcc-5dd4fe3abf89-W0S";

fn launch(app: &str) -> Value {
    json!({"type": "launch", "parameters": {"command": app}})
}

fn execute(script: &str) -> Value {
    json!({"type": "execute", "parameters": {"command": script}})
}

fn open_file(path: &str) -> Value {
    json!({"type": "open_file", "parameters": {"path": path}})
}

fn rule_task(id: &str, domain: Domain, instruction: &str, config: Vec<Value>, func: &str, rules: Value, result: Option<(&str, &str)>) -> Value {
    let mut t = json!({
        "id": id,
        "instruction": instruction,
        "config": config,
        "evaluator": {"func": func, "expected": {"type": "rule", "rules": rules}},
        "domain": domain.label(),
    });
    if let Some((getter, dest)) = result {
        t["result"] = json!({"type": getter, "dest": dest});
    }
    t
}

fn settings_task(id: &str, domain: Domain, instruction: &str, config: Vec<Value>, app: &str, expected: Value) -> Value {
    rule_task(
        id,
        domain,
        instruction,
        config,
        "check_json_settings",
        json!({"expected": expected}),
        Some(("settings_json", app)),
    )
}

const HIGHLIGHTED_DOC: &str = "The <hl>quick</hl> brown fox jumps over the <hl>lazy</hl> dog.\nA second <hl>paragraph</hl> closes the review.";
const HIGHLIGHT_GOLDEN: &str = "The quick brown fox jumps over the lazy dog.\nA second paragraph closes the review.";

fn definitions() -> Vec<TaskDef> {
    use Act::*;
    let vlc_setup = || {
        vec![
            launch("vlc"),
            json!({"type": "execute", "parameters": {"command": ["python", "-c", "import pyautogui; import time; pyautogui.click(960, 540); time.sleep(0.5);"]}}),
        ]
    };
    let vlc_prefs = vec![Click("menu_tools"), Click("mi_prefs")];
    let edge_settings = vec![Click("btn_menu"), Click("mi_settings")];
    let review_doc = home_path("Documents\\review.docx");
    vec![
        // Office
        TaskDef {
            task: rule_task(
                "writer-remove-highlight",
                Domain::Office,
                "The review document still has yellow highlighting left over from my edits. Strip every highlight so none of the text is marked.",
                vec![
                    execute(&format!(
                        "write_file({}, {})",
                        Literal::Str(review_doc.clone()),
                        Literal::Str(HIGHLIGHTED_DOC.into())
                    )),
                    open_file(&review_doc),
                ],
                "check_highlighted_words",
                json!({}),
                Some(("file", &review_doc)),
            ),
            app: "writer",
            steps: vec![vec![Click("tb_highlight")], vec![Click("hl_none"), Press("ctrl+s")]],
            finish: Finish::Done,
            human_row: "LibreOffice Writer",
            adapted: false,
            golden: Some(("writer-remove-highlight", HIGHLIGHT_GOLDEN)),
        },
        TaskDef {
            task: settings_task(
                "calc-rename-sheet",
                Domain::Office,
                "Help me rename sheet1 \"LARSScienceAssessment\"",
                vec![launch("calc")],
                "calc",
                json!({"sheet1_name": "LARSScienceAssessment"}),
            ),
            app: "calc",
            steps: vec![
                vec![DoubleClick("tab_sheet1")],
                vec![Click("rn_name"), Write("LARSScienceAssessment"), Click("rn_ok")],
            ],
            finish: Finish::Done,
            human_row: "LibreOffice Calc",
            adapted: false,
            golden: None,
        },
        // Web browsing
        TaskDef {
            task: rule_task(
                "edge-clear-amazon-cookies",
                Domain::WebBrowsing,
                "Delete the cookies amazon.com stored in Edge. Leave cookies from other sites alone.",
                vec![
                    launch("msedge"),
                    execute("add_cookie(\"amazon.com\", \"session-id\", \"131-0001\"); add_cookie(\".amazon.com\", \"ubid-main\", \"x9\"); add_cookie(\"bing.com\", \"MUID\", \"a1\")"),
                ],
                "is_cookie_deleted",
                json!({"domains": ["amazon.com"]}),
                Some(("cookies", "")),
            ),
            app: "msedge",
            steps: vec![edge_settings.clone(), vec![Click("nav_privacy"), Click("btn_clear")], vec![Click("clr_now")]],
            finish: Finish::Done,
            human_row: "Web Browsing",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "edge-duckduckgo-search",
                Domain::WebBrowsing,
                "Switch the address bar search engine in Edge to DuckDuckGo.",
                vec![launch("msedge")],
                "msedge",
                json!({"default_search_engine": "DuckDuckGo"}),
            ),
            app: "msedge",
            steps: vec![edge_settings.clone(), vec![Click("nav_privacy"), Click("btn_search_engine")], vec![Click("se_ddg")]],
            finish: Finish::Done,
            human_row: "Web Browsing",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "edge-wikipedia-home",
                Domain::WebBrowsing,
                "Make www.wikipedia.org the Edge home page.",
                vec![launch("msedge")],
                "msedge",
                json!({"homepage": "www.wikipedia.org"}),
            ),
            app: "msedge",
            steps: vec![
                edge_settings,
                vec![Click("nav_start"), Click("in_home"), Write("www.wikipedia.org"), Press("enter")],
            ],
            finish: Finish::Done,
            human_row: "Web Browsing",
            adapted: false,
            golden: None,
        },
        // Windows system
        TaskDef {
            task: rule_task(
                "explorer-hide-secret",
                Domain::WindowsSystem,
                "Hide Documents\\secret.txt from normal folder views.",
                vec![
                    execute(&format!(
                        "write_file({}, \"do not share\")",
                        Literal::Str(home_path("Documents\\secret.txt"))
                    )),
                    launch("explorer"),
                ],
                "check_file_hidden",
                json!({"hidden": true}),
                Some(("file_meta", &home_path("Documents\\secret.txt"))),
            ),
            app: "explorer",
            steps: vec![vec![RightClick("f_secret")], vec![Click("ctx_props")], vec![Click("chk_hidden"), Click("props_ok")]],
            finish: Finish::Done,
            human_row: "Windows System",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "settings-notifications-off",
                Domain::WindowsSystem,
                "Disable system notifications in Settings.",
                vec![launch("settings")],
                "settings",
                json!({"notifications": false}),
            ),
            app: "settings",
            steps: vec![vec![Click("nav_system")], vec![Click("sys_notifications")], vec![Click("notif_toggle")]],
            finish: Finish::Done,
            human_row: "Windows System",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "settings-pacific-timezone",
                Domain::WindowsSystem,
                "Set the Windows time zone to Pacific Time (US & Canada).",
                vec![launch("settings")],
                "settings",
                json!({"time_zone": "Pacific Standard Time"}),
            ),
            app: "settings",
            steps: vec![vec![Click("nav_time")], vec![Click("time_zone")], vec![Click("tz_pacific")]],
            finish: Finish::Done,
            human_row: "Windows System",
            adapted: false,
            golden: None,
        },
        // Coding
        TaskDef {
            task: settings_task(
                "vscode-autosave-500",
                Domain::Coding,
                "Turn on auto save in VS Code with a 500 ms delay.",
                vec![launch("code")],
                "code",
                json!({"files.autoSave": "afterDelay", "files.autoSaveDelay": 500}),
            ),
            app: "code",
            steps: vec![
                vec![Click("act_manage"), Click("mm_settings")],
                vec![Click("sel_autosave")],
                vec![Click("as_delay"), Click("in_delay"), Write("500"), Press("enter")],
            ],
            finish: Finish::Done,
            human_row: "VS Code",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "vscode-theme-vs-dark",
                Domain::Coding,
                "Use the Visual Studio Dark color theme in VS Code.",
                vec![launch("code")],
                "code",
                json!({"workbench.colorTheme": "Visual Studio Dark"}),
            ),
            app: "code",
            steps: vec![vec![Click("act_manage")], vec![Click("mm_themes")], vec![Click("th_vs_dark")]],
            finish: Finish::Done,
            human_row: "VS Code",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: rule_task(
                "vscode-create-test-py",
                Domain::Coding,
                "Using VS Code, save an empty Python file called \"test.py\" on the Desktop (C:/Users/Docker/Desktop).",
                vec![launch("code")],
                "check_file_exists",
                json!({}),
                Some(("file", &home_path("Desktop\\test.py"))),
            ),
            app: "code",
            steps: vec![
                vec![Press("ctrl+s")],
                vec![Click("save_path"), Write("C:\\Users\\Docker\\Desktop\\test.py"), Press("enter")],
            ],
            finish: Finish::Done,
            human_row: "VS Code",
            adapted: true,
            golden: None,
        },
        // Media
        TaskDef {
            task: rule_task(
                VLC_RECORDINGS_ID,
                Domain::MediaVideo,
                "Help me modify the folder used to store my recordings to the Desktop",
                vlc_setup(),
                "vis_vlc_recordings_folder",
                json!({"recording_file_path": home_path("Desktop")}),
                Some(("vlc_config", "vlcrc")),
            ),
            app: "vlc",
            steps: vec![vlc_prefs.clone(), vec![Click("in_rec"), Write("C:\\Users\\Docker\\Desktop"), Click("prefs_save")]],
            finish: Finish::Done,
            human_row: "VLC Player",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: rule_task(
                "vlc-recordings-downloads",
                Domain::MediaVideo,
                "VLC should write its recordings into Downloads from now on. Update the setting.",
                vlc_setup(),
                "vis_vlc_recordings_folder",
                json!({"recording_file_path": home_path("Downloads")}),
                Some(("vlc_config", "vlcrc")),
            ),
            app: "vlc",
            steps: vec![vlc_prefs.clone(), vec![Click("in_rec"), Write("C:\\Users\\Docker\\Downloads"), Click("prefs_save")]],
            finish: Finish::Done,
            human_row: "VLC Player",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "vlc-max-volume-100",
                Domain::MediaVideo,
                "Cap the VLC volume slider at 100%.",
                vec![launch("vlc")],
                "vlc",
                json!({"max_volume": 100}),
            ),
            app: "vlc",
            steps: vec![vlc_prefs, vec![Click("in_maxvol"), Write("100"), Click("prefs_save")]],
            finish: Finish::Done,
            human_row: "VLC Player",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: {
                let mut t = rule_task(
                    "vlc-play-store-purchase",
                    Domain::MediaVideo,
                    "Stream the show I bought on a video store app straight inside VLC, using my store account.",
                    vec![launch("vlc")],
                    "infeasible",
                    json!({}),
                    None,
                );
                t["feasible"] = json!(false);
                t
            },
            app: "vlc",
            steps: vec![],
            finish: Finish::Fail("infeasible: store purchases are protected and cannot be opened in VLC"),
            human_row: "VLC Player",
            adapted: false,
            golden: None,
        },
        // Windows utilities
        TaskDef {
            task: rule_task(
                "notepad-draft",
                Domain::WindowsUtilities,
                "In Notepad, write \"This is a draft.\" and save it as \"draft.txt\" under Documents.",
                vec![],
                "compare_text_file",
                json!({"expected": "This is a draft."}),
                Some(("file", &home_path("Documents\\draft.txt"))),
            ),
            app: "notepad",
            steps: vec![
                vec![Open("notepad")],
                vec![Write("This is a draft."), Press("ctrl+s")],
                vec![Click("save_name"), Write("draft.txt"), Click("save_btn")],
            ],
            finish: Finish::Done,
            human_row: "Windows Utilities",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "clock-timer-3h",
                Domain::WindowsUtilities,
                "Use the Clock app to run a timer of three hours.",
                vec![],
                "clock",
                json!({"timer_hours": 3, "timer_minutes": 0, "timer_running": true}),
            ),
            app: "clock",
            steps: vec![
                vec![Open("clock")],
                vec![Click("nav_timer")],
                vec![Click("in_hours"), Write("3"), Click("btn_start")],
            ],
            finish: Finish::Done,
            human_row: "Windows Utilities",
            adapted: false,
            golden: None,
        },
        TaskDef {
            task: settings_task(
                "clock-timer-30m",
                Domain::WindowsUtilities,
                "Give me a 30 minute countdown in the Clock app.",
                vec![launch("clock")],
                "clock",
                json!({"timer_hours": 0, "timer_minutes": 30, "timer_running": true}),
            ),
            app: "clock",
            steps: vec![vec![Click("nav_timer")], vec![Click("in_minutes"), Write("30"), Click("btn_start")]],
            finish: Finish::Done,
            human_row: "Windows Utilities",
            adapted: false,
            golden: None,
        },
    ]
}

fn find_node<'a>(nodes: &'a [UiNode], id: &str) -> Option<&'a UiNode> {
    nodes
        .iter()
        .find_map(|n| if n.id == id { Some(n) } else { find_node(&n.children, id) })
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

fn resolve_step(app: &AppModel, acts: &[Act]) -> String {
    let mut lines = Vec::new();
    let move_to = |id: &str, lines: &mut Vec<String>| {
        let n = find_node(&app.elements, id).unwrap_or_else(|| panic!("oracle names unknown node `{id}` in {}", app.name));
        let c = n.bbox.center();
        let call = ComputerCall::new(Group::Mouse, "move_abs", vec![])
            .with_kwarg("x", Literal::Float(round4(c.x)))
            .with_kwarg("y", Literal::Float(round4(c.y)));
        lines.push(format!("{call} # {}", if n.content.is_empty() { &n.id } else { &n.content }));
    };
    let simple = |g: Group, name: &str, arg: Option<&str>| {
        ComputerCall::new(g, name, arg.map(|a| vec![Literal::Str(a.into())]).unwrap_or_default()).to_string()
    };
    for act in acts {
        match *act {
            Act::Click(id) => {
                move_to(id, &mut lines);
                lines.push(simple(Group::Mouse, "single_click", None));
            }
            Act::DoubleClick(id) => {
                move_to(id, &mut lines);
                lines.push(simple(Group::Mouse, "double_click", None));
            }
            Act::RightClick(id) => {
                move_to(id, &mut lines);
                lines.push(simple(Group::Mouse, "right_click", None));
            }
            Act::Write(t) => lines.push(simple(Group::Keyboard, "write", Some(t))),
            Act::Press(k) => lines.push(simple(Group::Keyboard, "press", Some(k))),
            Act::Open(p) => lines.push(simple(Group::Os, "open_program", Some(p))),
        }
    }
    lines.join("\n")
}

fn oracle_decisions(def: &TaskDef, catalog: &Catalog) -> Vec<AgentDecision> {
    let app = catalog.resolve(def.app).expect("oracle app is in the catalog");
    let mut out: Vec<AgentDecision> = def
        .steps
        .iter()
        .map(|acts| AgentDecision::command(parse_program(&resolve_step(app, acts)).expect("oracle code parses")))
        .collect();
    out.push(match def.finish {
        Finish::Done => AgentDecision::done(),
        Finish::Fail(reason) => AgentDecision::fail(reason),
    });
    out
}

// ---------------------------------------------------------------------------
// Corpus

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub domain: String,
    pub feasible: bool,
    pub oracle_id: String,
    pub oracle_steps: usize,
    pub human_row: String,
    /// Instruction text changed from its source wording.
    pub adapted: bool,
    /// Evaluator rules were reconstructed rather than copied.
    pub evaluator_reconstructed: bool,
    pub golden: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// sha256 of every golden artifact, by key.
    pub golden_digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub suite: TaskSuite,
    pub world: World,
    pub golden: BTreeMap<String, Vec<u8>>,
    pub oracles: BTreeMap<String, Vec<AgentDecision>>,
    pub manifest: CorpusManifest,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("no task `{0}` in the corpus")]
    UnknownTask(String),
}

pub fn build_corpus() -> Corpus {
    let world = world();
    let mut tasks = Vec::new();
    let mut golden = BTreeMap::new();
    let mut oracles = BTreeMap::new();
    let mut entries = Vec::new();
    for def in definitions() {
        let task = task_from_value(&def.task).expect("corpus tasks parse");
        let decisions = oracle_decisions(&def, &world.catalog);
        let golden_refs: Vec<String> = def.golden.iter().map(|(k, _)| k.to_string()).collect();
        if let Some((k, v)) = def.golden {
            golden.insert(k.to_string(), v.as_bytes().to_vec());
        }
        entries.push(ManifestEntry {
            task_id: task.id.clone(),
            domain: task.category().to_string(),
            feasible: task.feasible,
            oracle_id: task.id.clone(),
            oracle_steps: decisions.len(),
            human_row: def.human_row.to_string(),
            adapted: def.adapted,
            evaluator_reconstructed: task.id != VLC_RECORDINGS_ID,
            golden: golden_refs,
        });
        oracles.insert(task.id.clone(), decisions);
        tasks.push(task);
    }
    let golden_digests = golden.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect();
    Corpus {
        suite: TaskSuite::from_tasks(tasks).expect("corpus ids are unique"),
        world,
        golden,
        oracles,
        manifest: CorpusManifest { entries, golden_digests },
    }
}

impl Corpus {
    pub fn eval_context(&self) -> EvalContext {
        EvalContext {
            golden: self.golden.clone(),
        }
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec, CorpusError> {
        self.suite.get(id).ok_or_else(|| CorpusError::UnknownTask(id.to_string()))
    }

    /// Oracle responses in the policy response format, one per step.
    pub fn oracle_script(&self, id: &str) -> Result<Vec<String>, CorpusError> {
        self.oracles
            .get(id)
            .map(|ds| ds.iter().map(render_response).collect())
            .ok_or_else(|| CorpusError::UnknownTask(id.to_string()))
    }

    /// Writes tasks as `<dir>/<id>.json`, golden files under `golden/` and
    /// the manifest and human baseline under `meta/`.
    pub fn export(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("golden"))?;
        std::fs::create_dir_all(dir.join("meta"))?;
        for t in &self.suite.tasks {
            std::fs::write(dir.join(format!("{}.json", t.id)), serialize(t))?;
        }
        for (k, v) in &self.golden {
            std::fs::write(dir.join("golden").join(k), v)?;
        }
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(dir.join("meta").join("manifest.json"), manifest + "\n")?;
        std::fs::write(dir.join("meta").join("human_baseline.json"), HUMAN_BASELINE_JSON)?;
        Ok(())
    }
}

/// Reads golden files written by [`Corpus::export`], if any.
pub fn load_golden(dir: &Path) -> std::io::Result<BTreeMap<String, Vec<u8>>> {
    let g = dir.join("golden");
    let mut out = BTreeMap::new();
    if !g.is_dir() {
        return Ok(out);
    }
    for e in std::fs::read_dir(g)? {
        let p = e?.path();
        if p.is_file() {
            if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

/// Published human-evaluation results: per-domain averages and the
/// per-category success rates of the results table.
pub const HUMAN_BASELINE_JSON: &str = r#"{
  "source": "human evaluation of the 154-task suite",
  "domains": [
    {"domain": "LibreOffice Calc", "avg_steps": 15.3, "success_rate": 83.3, "avg_difficulty": 2.0},
    {"domain": "LibreOffice Writer", "avg_steps": 8.3, "success_rate": 66.7, "avg_difficulty": 1.9},
    {"domain": "Windows System", "avg_steps": 6.3, "success_rate": 83.3, "avg_difficulty": 1.6},
    {"domain": "Windows Utilities", "avg_steps": 11.7, "success_rate": 91.7, "avg_difficulty": 1.3},
    {"domain": "VLC Player", "avg_steps": 6.6, "success_rate": 42.8, "avg_difficulty": 2.4},
    {"domain": "VS Code", "avg_steps": 4.5, "success_rate": 68.4, "avg_difficulty": 2.1},
    {"domain": "Web Browsing", "avg_steps": 5.5, "success_rate": 76.7, "avg_difficulty": 1.9}
  ],
  "overall": {"domain": "Overall", "avg_steps": 8.1, "success_rate": 74.5, "avg_difficulty": 1.9},
  "categories": {
    "Office": 75.8,
    "Web Browser": 76.7,
    "Windows System": 83.3,
    "Coding": 68.4,
    "Media & Video": 42.8,
    "Windows Utils": 91.7,
    "Total": 74.5
  }
}
"#;
