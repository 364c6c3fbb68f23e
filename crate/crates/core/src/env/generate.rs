//! Procedural ScriptedDesk tasks: a settings application with a few pages,
//! one text field and one checkbox per page, a save action and distractors.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::desk::{Cond, DeskApp, Effect, HotkeyDef, WidgetDef, WidgetKind};
use super::task::{Milestone, TaskSpec, SYNTHESIS_MAX_STEPS};

const PAGES: &[(&str, &str, &str, &str)] = &[
    ("profile", "Profile", "Display name", "Show online status"),
    ("privacy", "Privacy", "Blocked contact", "Share usage data"),
    ("display", "Display", "Theme name", "Large text"),
    ("network", "Network", "Proxy host", "Use metered connection"),
    ("sound", "Sound", "Output device", "Mute notifications"),
    ("mail", "Mail", "Signature", "Plain text only"),
];

const VALUES: &[&str] = &[
    "Ada Lovelace",
    "grace@example.org",
    "Solarized Dark",
    "proxy.internal:3128",
    "USB Headset",
    "Regards, Lin",
    "noreply@corp.test",
    "Nord",
    "10.0.0.7:8080",
    "HDMI Output",
    "Cheers, Sam",
    "Mono Light",
];

fn widget(id: &str, kind: WidgetKind, label: &str) -> WidgetDef {
    WidgetDef {
        id: id.to_string(),
        kind,
        label: label.to_string(),
        enabled_when: Vec::new(),
        on_click: Vec::new(),
        on_type: Vec::new(),
    }
}

fn set(var: &str, value: &str) -> Effect {
    Effect::Set {
        var: var.to_string(),
        value: value.to_string(),
    }
}

/// Builds task `index` from `seed`. The snapshot id is derived from the
/// snapshot content, so identical apps share an id.
pub fn generate_task(index: usize, seed: u64) -> (DeskApp, TaskSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n_pages = rng.gen_range(2..=3);
    let mut pool: Vec<usize> = (0..PAGES.len()).collect();
    pool.shuffle(&mut rng);
    let pages: Vec<_> = pool[..n_pages].iter().map(|&i| PAGES[i]).collect();
    let scroll_page = rng.gen_range(0..n_pages);

    let mut widgets = Vec::new();
    let mut vars = BTreeMap::from([
        ("page".to_string(), "home".to_string()),
        ("saved".to_string(), "no".to_string()),
        ("locked".to_string(), "yes".to_string()),
    ]);
    let nav = |page: &str| vec![set("page", page), Effect::ScrollTo(0), Effect::Blur];

    for (key, title, _, _) in &pages {
        let mut w = widget(&format!("open_{key}"), WidgetKind::Button, &format!("Open {title}"));
        w.enabled_when = vec![Cond::eq("page", "home")];
        w.on_click = nav(key);
        widgets.push(w);
    }
    let mut about = widget("about_btn", WidgetKind::Button, "About");
    about.enabled_when = vec![Cond::eq("page", "home")];
    about.on_click = nav("about");
    widgets.push(about);

    let mut goal = Vec::new();
    let mut milestones = Vec::new();
    let mut instruction_parts = Vec::new();
    let mut values: Vec<&str> = VALUES.to_vec();
    values.shuffle(&mut rng);
    for (i, (key, title, field_label, toggle_label)) in pages.iter().enumerate() {
        let field_id = format!("{key}_field");
        let toggle_id = format!("{key}_toggle");
        let mut field = widget(&field_id, WidgetKind::TextField, field_label);
        field.enabled_when = vec![Cond::eq("page", *key)];
        if i == scroll_page {
            field.enabled_when.push(Cond::ge("scroll", 1));
        }
        field.on_type = vec![set("saved", "no")];
        widgets.push(field);
        let mut toggle = widget(&toggle_id, WidgetKind::Checkbox, toggle_label);
        toggle.enabled_when = vec![Cond::eq("page", *key)];
        toggle.on_click = vec![set("saved", "no")];
        widgets.push(toggle);
        vars.insert(field_id.clone(), String::new());
        vars.insert(toggle_id.clone(), "false".to_string());

        let target = values[i];
        let want_toggle = rng.gen_bool(0.6);
        let conds = vec![
            Cond::eq(&field_id, target),
            Cond::eq(&toggle_id, if want_toggle { "true" } else { "false" }),
        ];
        goal.extend(conds.iter().cloned());
        let verb = if want_toggle { "enable" } else { "leave off" };
        milestones.push(Milestone {
            description: format!(
                "{title}: set {field_label} to \"{target}\" and {verb} \"{toggle_label}\""
            ),
            predicate: conds,
        });
        instruction_parts.push(format!(
            "on the {title} page set {} to \"{target}\" and {verb} \"{}\"",
            field_label.to_lowercase(),
            toggle_label.to_lowercase()
        ));
    }

    let mut home = widget("home_btn", WidgetKind::Button, "Back");
    home.enabled_when = vec![Cond::ne("page", "home")];
    home.on_click = nav("home");
    widgets.push(home);
    let mut save = widget("save_btn", WidgetKind::Button, "Save changes");
    save.enabled_when = vec![Cond::eq("page", "home")];
    save.on_click = vec![set("saved", "yes")];
    widgets.push(save);
    let mut delete = widget("delete_btn", WidgetKind::Button, "Delete account");
    delete.enabled_when = vec![Cond::eq("locked", "no")];
    delete.on_click = vec![set("page", "deleted")];
    widgets.push(delete);
    let mut reset = widget("reset_btn", WidgetKind::Button, "Reset form");
    reset.enabled_when = vec![Cond::eq("page", "home")];
    for (key, ..) in &pages {
        reset.on_click.push(set(&format!("{key}_field"), ""));
        reset.on_click.push(set(&format!("{key}_toggle"), "false"));
    }
    reset.on_click.push(set("saved", "no"));
    widgets.push(reset);

    goal.push(Cond::eq("saved", "yes"));
    milestones.push(Milestone {
        description: "Save the changes".to_string(),
        predicate: goal.clone(),
    });

    let hotkeys = vec![HotkeyDef {
        keys: vec!["ctrl".into(), "s".into()],
        enabled_when: vec![Cond::eq("page", "home")],
        effects: vec![set("saved", "yes")],
    }];

    let mut app = DeskApp {
        id: String::new(),
        title: "Settings".to_string(),
        widgets,
        hotkeys,
        vars,
        max_scroll: 2,
    };
    let digest = Sha256::digest(serde_json::to_vec(&app).expect("app serializes"));
    app.id = format!("desk-{}", hex::encode(&digest[..6]));

    let task = TaskSpec {
        task_id: format!("desk-{index:04}"),
        instruction: format!("In Settings, {}, then save.", instruction_parts.join("; ")),
        snapshot_id: app.id.clone(),
        setup_ops: Vec::new(),
        milestones,
        goal_predicate: goal,
        max_steps: SYNTHESIS_MAX_STEPS,
        stochasticity: 0.0,
        seed: rng.gen(),
    };
    (app, task)
}
