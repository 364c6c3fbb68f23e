//! ScriptedDesk: a small symbolic GUI whose behaviour is a transition table.
//!
//! A [`DeskApp`] is the immutable base snapshot (widgets, hotkeys, initial
//! variables). A [`DeskState`] is everything that can change. [`apply`] is the
//! only transition function; the planner, the critics and the environment all
//! go through it.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::action::{Action, ScrollDirection, TermStatus};

/// 64-bit digest of a full environment state. Displays as 16 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct StateHash(pub u64);

impl fmt::Display for StateHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl From<StateHash> for String {
    fn from(h: StateHash) -> String {
        h.to_string()
    }
}

impl TryFrom<String> for StateHash {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.len() != 16 {
            return Err(format!("state hash `{s}` must be 16 hex digits"));
        }
        u64::from_str_radix(&s, 16)
            .map(StateHash)
            .map_err(|e| format!("state hash `{s}`: {e}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Button,
    TextField,
    Checkbox,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Test {
    Eq(String),
    Ne(String),
    /// Numeric lower bound; only meaningful for the `scroll` pseudo-variable.
    Ge(u32),
}

/// A predicate over one state variable. `scroll` and `focus` are
/// pseudo-variables backed by the dedicated state fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cond {
    pub var: String,
    #[serde(flatten)]
    pub test: Test,
}

impl Cond {
    pub fn eq(var: impl Into<String>, value: impl Into<String>) -> Self {
        Cond {
            var: var.into(),
            test: Test::Eq(value.into()),
        }
    }

    pub fn ne(var: impl Into<String>, value: impl Into<String>) -> Self {
        Cond {
            var: var.into(),
            test: Test::Ne(value.into()),
        }
    }

    pub fn ge(var: impl Into<String>, bound: u32) -> Self {
        Cond {
            var: var.into(),
            test: Test::Ge(bound),
        }
    }

    pub fn holds(&self, state: &DeskState) -> bool {
        match &self.test {
            Test::Eq(v) => state.lookup(&self.var) == v.as_str(),
            Test::Ne(v) => state.lookup(&self.var) != v.as_str(),
            Test::Ge(bound) => match self.var.as_str() {
                "scroll" => state.scroll >= *bound,
                _ => state
                    .lookup(&self.var)
                    .parse::<u32>()
                    .map(|x| x >= *bound)
                    .unwrap_or(false),
            },
        }
    }
}

pub fn all_hold(conds: &[Cond], state: &DeskState) -> bool {
    conds.iter().all(|c| c.holds(state))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Set { var: String, value: String },
    Toggle { var: String },
    ScrollTo(u32),
    Focus(String),
    Blur,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetDef {
    pub id: String,
    pub kind: WidgetKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enabled_when: Vec<Cond>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on_click: Vec<Effect>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on_type: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotkeyDef {
    pub keys: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enabled_when: Vec<Cond>,
    pub effects: Vec<Effect>,
}

/// Base snapshot: the static application definition plus initial variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeskApp {
    pub id: String,
    pub title: String,
    pub widgets: Vec<WidgetDef>,
    #[serde(default)]
    pub hotkeys: Vec<HotkeyDef>,
    #[serde(default)]
    pub vars: BTreeMap<String, String>,
    #[serde(default)]
    pub max_scroll: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeskState {
    pub vars: BTreeMap<String, String>,
    pub focus: Option<String>,
    pub scroll: u32,
    pub status: EpisodeStatus,
    /// Count of spurious notification popups; never read by any predicate.
    pub popups: u32,
}

impl DeskState {
    pub fn initial(app: &DeskApp) -> Self {
        DeskState {
            vars: app.vars.clone(),
            focus: None,
            scroll: 0,
            status: EpisodeStatus::Running,
            popups: 0,
        }
    }

    pub fn lookup(&self, var: &str) -> std::borrow::Cow<'_, str> {
        use std::borrow::Cow;
        match var {
            "scroll" => Cow::Owned(self.scroll.to_string()),
            "focus" => Cow::Borrowed(self.focus.as_deref().unwrap_or("")),
            _ => Cow::Borrowed(self.vars.get(var).map(String::as_str).unwrap_or("")),
        }
    }

    pub fn is_running(&self) -> bool {
        self.status == EpisodeStatus::Running
    }

    pub fn digest(&self) -> StateHash {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        let sum = Sha256::digest(&bytes);
        let mut first = [0u8; 8];
        first.copy_from_slice(&sum[..8]);
        StateHash(u64::from_be_bytes(first))
    }
}

impl DeskApp {
    pub fn widget(&self, id: &str) -> Option<&WidgetDef> {
        self.widgets.iter().find(|w| w.id == id)
    }

    pub fn is_enabled(&self, widget: &WidgetDef, state: &DeskState) -> bool {
        all_hold(&widget.enabled_when, state)
    }

    pub fn observe(&self, state: &DeskState) -> Observation {
        let widgets = self
            .widgets
            .iter()
            .map(|w| WidgetView {
                id: w.id.clone(),
                kind: w.kind,
                label: w.label.clone(),
                enabled: self.is_enabled(w, state),
            })
            .collect();
        let mut note = format!("{}", self.title);
        if let Some(page) = state.vars.get("page") {
            note.push_str(&format!(" | page {page}"));
        }
        if let Some(f) = &state.focus {
            note.push_str(&format!(" | focus {f}"));
        }
        if state.scroll > 0 {
            note.push_str(&format!(" | scrolled {}", state.scroll));
        }
        if state.popups > 0 {
            note.push_str(&format!(" | {} notification(s)", state.popups));
        }
        match state.status {
            EpisodeStatus::Running => {}
            EpisodeStatus::Succeeded => note.push_str(" | finished: success"),
            EpisodeStatus::Failed => note.push_str(" | finished: failure"),
        }
        Observation {
            state_hash: state.digest(),
            widgets,
            screen_note: note,
            state: state.clone(),
        }
    }
}

fn run_effects(effects: &[Effect], state: &mut DeskState, max_scroll: u32) {
    for e in effects {
        match e {
            Effect::Set { var, value } => {
                state.vars.insert(var.clone(), value.clone());
            }
            Effect::Toggle { var } => {
                let next = if state.lookup(var) == "true" { "false" } else { "true" };
                state.vars.insert(var.clone(), next.to_string());
            }
            Effect::ScrollTo(n) => state.scroll = (*n).min(max_scroll),
            Effect::Focus(w) => state.focus = Some(w.clone()),
            Effect::Blur => state.focus = None,
        }
    }
}

/// The transition table. Actions that do not apply (unknown or disabled
/// widget, typing without a focused field, unbound hotkey) leave the state
/// untouched. Terminal states absorb every action.
pub fn apply(app: &DeskApp, state: &DeskState, action: &Action) -> DeskState {
    let mut next = state.clone();
    if !state.is_running() {
        return next;
    }
    match action {
        Action::Click(id) => {
            if let Some(w) = app.widget(id).filter(|w| app.is_enabled(w, state)) {
                match w.kind {
                    WidgetKind::TextField => next.focus = Some(w.id.clone()),
                    WidgetKind::Checkbox => {
                        let v = if state.lookup(&w.id) == "true" { "false" } else { "true" };
                        next.vars.insert(w.id.clone(), v.to_string());
                    }
                    WidgetKind::Button => {}
                }
                run_effects(&w.on_click, &mut next, app.max_scroll);
            }
        }
        Action::Type(text) => {
            let target = state
                .focus
                .as_deref()
                .and_then(|f| app.widget(f))
                .filter(|w| w.kind == WidgetKind::TextField && app.is_enabled(w, state));
            if let Some(w) = target {
                next.vars.insert(w.id.clone(), text.clone());
                run_effects(&w.on_type, &mut next, app.max_scroll);
            }
        }
        Action::Hotkey(keys) => {
            if let Some(h) = app
                .hotkeys
                .iter()
                .find(|h| &h.keys == keys && all_hold(&h.enabled_when, state))
            {
                run_effects(&h.effects, &mut next, app.max_scroll);
            }
        }
        Action::Scroll(dir, amount) => {
            next.scroll = match dir {
                ScrollDirection::Down => state.scroll.saturating_add(*amount).min(app.max_scroll),
                ScrollDirection::Up => state.scroll.saturating_sub(*amount),
            };
        }
        Action::Terminate(status) => {
            next.status = match status {
                TermStatus::Success => EpisodeStatus::Succeeded,
                TermStatus::Failure => EpisodeStatus::Failed,
            };
        }
    }
    next
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidgetView {
    pub id: String,
    pub kind: WidgetKind,
    pub label: String,
    pub enabled: bool,
}

/// Symbolic stand-in for a screenshot: everything visible on screen,
/// including the state the digest was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub state_hash: StateHash,
    pub widgets: Vec<WidgetView>,
    pub screen_note: String,
    pub state: DeskState,
}

impl Observation {
    pub fn widget(&self, id: &str) -> Option<&WidgetView> {
        self.widgets.iter().find(|w| w.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn app() -> DeskApp {
        DeskApp {
            id: "t".into(),
            title: "Test".into(),
            widgets: vec![
                WidgetDef {
                    id: "name".into(),
                    kind: WidgetKind::TextField,
                    label: "Name".into(),
                    enabled_when: vec![],
                    on_click: vec![],
                    on_type: vec![Effect::Set {
                        var: "saved".into(),
                        value: "no".into(),
                    }],
                },
                WidgetDef {
                    id: "locked".into(),
                    kind: WidgetKind::Button,
                    label: "Locked".into(),
                    enabled_when: vec![Cond::eq("never", "yes")],
                    on_click: vec![Effect::Set {
                        var: "x".into(),
                        value: "1".into(),
                    }],
                    on_type: vec![],
                },
                WidgetDef {
                    id: "opt".into(),
                    kind: WidgetKind::Checkbox,
                    label: "Option".into(),
                    enabled_when: vec![Cond::ge("scroll", 1)],
                    on_click: vec![],
                    on_type: vec![],
                },
            ],
            hotkeys: vec![HotkeyDef {
                keys: vec!["ctrl".into(), "s".into()],
                enabled_when: vec![],
                effects: vec![Effect::Set {
                    var: "saved".into(),
                    value: "yes".into(),
                }],
            }],
            vars: BTreeMap::from([("saved".to_string(), "no".to_string())]),
            max_scroll: 2,
        }
    }

    #[test]
    fn disabled_click_is_noop() {
        let app = app();
        let s = DeskState::initial(&app);
        let n = apply(&app, &s, &Action::click("locked"));
        assert_eq!(n.digest(), s.digest());
        let n = apply(&app, &s, &Action::click("nope"));
        assert_eq!(n, s);
    }

    #[test]
    fn focus_then_type() {
        let app = app();
        let s = DeskState::initial(&app);
        assert_eq!(apply(&app, &s, &Action::type_text("a")), s);
        let s = apply(&app, &s, &Action::click("name"));
        let s = apply(&app, &s, &Action::type_text("Ada"));
        assert_eq!(s.lookup("name"), "Ada");
        let s = apply(&app, &s, &Action::hotkey(["ctrl", "s"]));
        assert_eq!(s.lookup("saved"), "yes");
        let s = apply(&app, &s, &Action::type_text("Bob"));
        assert_eq!(s.lookup("saved"), "no");
    }

    #[test]
    fn scroll_gates_checkbox_and_clamps() {
        let app = app();
        let s = DeskState::initial(&app);
        assert_eq!(apply(&app, &s, &Action::click("opt")), s);
        let s = apply(&app, &s, &Action::Scroll(ScrollDirection::Down, 9));
        assert_eq!(s.scroll, 2);
        let s = apply(&app, &s, &Action::click("opt"));
        assert_eq!(s.lookup("opt"), "true");
        let s = apply(&app, &s, &Action::Scroll(ScrollDirection::Up, 9));
        assert_eq!(s.scroll, 0);
    }

    #[test]
    fn terminal_state_absorbs() {
        let app = app();
        let s = DeskState::initial(&app);
        let t = apply(&app, &s, &Action::Terminate(TermStatus::Success));
        assert_eq!(t.status, EpisodeStatus::Succeeded);
        assert_eq!(apply(&app, &t, &Action::click("name")), t);
    }

    #[test]
    fn cond_serde_shape() {
        let c = Cond::eq("page", "home");
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"var":"page","eq":"home"}"#
        );
        let back: Cond = serde_json::from_str(r#"{"var":"scroll","ge":2}"#).unwrap();
        assert_eq!(back, Cond::ge("scroll", 2));
    }

    #[test]
    fn hash_hex_round_trip() {
        let h = StateHash(0xdead_beef);
        let s: String = h.into();
        assert_eq!(s, "00000000deadbeef");
        assert_eq!(StateHash::try_from(s).unwrap(), h);
    }
}
