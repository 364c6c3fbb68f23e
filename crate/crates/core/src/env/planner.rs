//! Exact shortest-path planning over a ScriptedDesk task.
//!
//! Variable values that no predicate or effect mentions are collapsed into a
//! single placeholder before planning. Predicates only compare against
//! mentioned constants, so the collapsed state has the same distance to the
//! goal as the concrete one. With that abstraction the reachable space of a
//! generated task is small enough to enumerate once; distances then come from
//! one reverse breadth-first pass out of the goal set.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::action::{Action, ScrollDirection, TermStatus};
use super::desk::{apply, Cond, DeskApp, DeskState, Effect, Test, WidgetKind};
use super::task::TaskSpec;

const OTHER: &str = "\u{1}other";
const ENUMERATION_CAP: usize = 400_000;

#[derive(Debug)]
pub struct DeskPlanner {
    app: Arc<DeskApp>,
    goal: Vec<Cond>,
    milestones: Vec<Vec<Cond>>,
    domains: HashMap<String, BTreeSet<String>>,
    /// Vars compared numerically; their values are never collapsed.
    numeric: BTreeSet<String>,
    /// Collapsed state -> distance; `u32::MAX` marks states that cannot
    /// reach the goal.
    dist: HashMap<DeskState, u32>,
    fallback: Mutex<HashMap<DeskState, Option<u32>>>,
}

fn conds_of(app: &DeskApp) -> impl Iterator<Item = &Cond> {
    app.widgets
        .iter()
        .flat_map(|w| w.enabled_when.iter())
        .chain(app.hotkeys.iter().flat_map(|h| h.enabled_when.iter()))
}

fn effects_of(app: &DeskApp) -> impl Iterator<Item = &Effect> {
    app.widgets
        .iter()
        .flat_map(|w| w.on_click.iter().chain(w.on_type.iter()))
        .chain(app.hotkeys.iter().flat_map(|h| h.effects.iter()))
}

impl DeskPlanner {
    pub fn new(task: &TaskSpec, app: Arc<DeskApp>) -> Self {
        let mut domains: HashMap<String, BTreeSet<String>> = HashMap::new();
        let mut numeric = BTreeSet::new();
        let mut add = |var: &str, value: &str| {
            domains
                .entry(var.to_string())
                .or_default()
                .insert(value.to_string());
        };
        let task_conds = task
            .goal_predicate
            .iter()
            .chain(task.milestones.iter().flat_map(|m| m.predicate.iter()));
        for c in conds_of(&app).chain(task_conds) {
            match &c.test {
                Test::Eq(v) | Test::Ne(v) => add(&c.var, v),
                Test::Ge(_) => {
                    numeric.insert(c.var.clone());
                }
            }
        }
        for e in effects_of(&app) {
            match e {
                Effect::Set { var, value } => add(var, value),
                Effect::Toggle { var } => {
                    add(var, "true");
                    add(var, "false");
                }
                _ => {}
            }
        }
        for w in &app.widgets {
            if w.kind == WidgetKind::Checkbox {
                add(&w.id, "true");
                add(&w.id, "false");
            }
        }
        for (k, v) in &app.vars {
            add(k, v);
        }
        for op in &task.setup_ops {
            if let super::task::StateOp::SetVar { var, value } = op {
                add(var, value);
            }
        }
        let mut planner = DeskPlanner {
            goal: task.goal_predicate.clone(),
            milestones: task.milestones.iter().map(|m| m.predicate.clone()).collect(),
            app,
            domains,
            numeric,
            dist: HashMap::new(),
            fallback: Mutex::new(HashMap::new()),
        };
        if let Ok(initial) = task.initial_state(&planner.app) {
            planner.dist = planner.enumerate(&planner.collapse(&initial));
        }
        planner
    }

    pub fn app(&self) -> &Arc<DeskApp> {
        &self.app
    }

    pub fn goal_holds(&self, state: &DeskState) -> bool {
        super::desk::all_hold(&self.goal, state)
    }

    pub fn milestones_met(&self, state: &DeskState) -> usize {
        self.milestones
            .iter()
            .filter(|m| super::desk::all_hold(m, state))
            .count()
    }

    pub fn milestone_count(&self) -> usize {
        self.milestones.len()
    }

    /// Number of distinct collapsed states enumerated up front.
    pub fn state_count(&self) -> usize {
        self.dist.len()
    }

    fn collapse(&self, state: &DeskState) -> DeskState {
        let mut s = state.clone();
        s.popups = 0;
        for (k, v) in s.vars.iter_mut() {
            if self.numeric.contains(k) {
                continue;
            }
            let known = self.domains.get(k).is_some_and(|d| d.contains(v.as_str()));
            if !known {
                *v = OTHER.to_string();
            }
        }
        s
    }

    /// Every action worth considering from `state`, in a fixed order.
    /// Includes the placeholder text so enumeration covers typos.
    fn candidates(&self, state: &DeskState, include_placeholder: bool) -> Vec<Action> {
        let mut out: Vec<Action> = self
            .app
            .widgets
            .iter()
            .map(|w| Action::Click(w.id.clone()))
            .collect();
        if let Some(f) = &state.focus {
            if let Some(values) = self.domains.get(f) {
                out.extend(values.iter().map(|v| Action::Type(v.clone())));
            }
            if include_placeholder {
                out.push(Action::Type(OTHER.to_string()));
            }
        }
        out.extend(self.app.hotkeys.iter().map(|h| Action::Hotkey(h.keys.clone())));
        for k in 1..=self.app.max_scroll {
            out.push(Action::Scroll(ScrollDirection::Down, k));
            out.push(Action::Scroll(ScrollDirection::Up, k));
        }
        out
    }

    fn enumerate(&self, start: &DeskState) -> HashMap<DeskState, u32> {
        let mut index: HashMap<DeskState, u32> = HashMap::new();
        let mut states: Vec<DeskState> = Vec::new();
        let mut reverse: Vec<Vec<u32>> = Vec::new();
        index.insert(start.clone(), 0);
        states.push(start.clone());
        reverse.push(Vec::new());
        let mut cursor = 0;
        while cursor < states.len() {
            if states.len() > ENUMERATION_CAP {
                return HashMap::new();
            }
            let s = states[cursor].clone();
            for a in self.candidates(&s, true) {
                let n = self.collapse(&apply(&self.app, &s, &a));
                if n == s {
                    continue;
                }
                let id = match index.get(&n) {
                    Some(&id) => id,
                    None => {
                        let id = states.len() as u32;
                        index.insert(n.clone(), id);
                        states.push(n);
                        reverse.push(Vec::new());
                        id
                    }
                };
                reverse[id as usize].push(cursor as u32);
            }
            cursor += 1;
        }
        let mut dist = vec![u32::MAX; states.len()];
        let mut queue = VecDeque::new();
        for (i, s) in states.iter().enumerate() {
            if s.is_running() && self.goal_holds(s) {
                dist[i] = 0;
                queue.push_back(i as u32);
            }
        }
        while let Some(i) = queue.pop_front() {
            let d = dist[i as usize];
            for &p in &reverse[i as usize] {
                if dist[p as usize] == u32::MAX {
                    dist[p as usize] = d + 1;
                    queue.push_back(p);
                }
            }
        }
        index
            .into_iter()
            .map(|(s, i)| (s, dist[i as usize]))
            .collect()
    }

    /// Forward search for states outside the enumerated space.
    fn search(&self, start: &DeskState) -> Option<u32> {
        let mut best: Option<u32> = None;
        let mut seen: HashMap<DeskState, u32> = HashMap::new();
        let mut queue = VecDeque::from([(start.clone(), 0u32)]);
        seen.insert(start.clone(), 0);
        while let Some((s, depth)) = queue.pop_front() {
            if best.is_some_and(|b| depth >= b) || depth > 64 {
                break;
            }
            if self.goal_holds(&s) {
                best = Some(best.map_or(depth, |b| b.min(depth)));
                continue;
            }
            if let Some(&known) = self.dist.get(&s) {
                if known != u32::MAX {
                    best = Some(best.map_or(depth + known, |b| b.min(depth + known)));
                }
                continue;
            }
            for a in self.candidates(&s, true) {
                let n = self.collapse(&apply(&self.app, &s, &a));
                if !n.is_running() || seen.contains_key(&n) {
                    continue;
                }
                seen.insert(n.clone(), depth + 1);
                queue.push_back((n, depth + 1));
            }
        }
        best
    }

    /// Non-empty values any text field is ever compared against or set to,
    /// sorted.
    pub fn text_values(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        for w in self.app.widgets.iter().filter(|w| w.kind == WidgetKind::TextField) {
            if let Some(d) = self.domains.get(&w.id) {
                out.extend(d.iter().filter(|v| !v.is_empty()).cloned());
            }
        }
        out.into_iter().collect()
    }

    /// Index of the first milestone not satisfied in `state`.
    pub fn next_milestone(&self, state: &DeskState) -> Option<usize> {
        self.milestones
            .iter()
            .position(|m| !m.iter().all(|c| c.holds(state)))
    }

    /// Minimum number of non-terminating actions to reach a goal state, or
    /// `None` when the episode is over or the goal is unreachable.
    pub fn distance(&self, state: &DeskState) -> Option<u32> {
        if !state.is_running() {
            return None;
        }
        let key = self.collapse(state);
        if let Some(&d) = self.dist.get(&key) {
            return (d != u32::MAX).then_some(d);
        }
        let mut cache = self.fallback.lock().expect("planner cache poisoned");
        if let Some(d) = cache.get(&key) {
            return *d;
        }
        let d = self.search(&key);
        cache.insert(key, d);
        d
    }

    /// True when `action` makes strict progress: terminating successfully on
    /// a goal state, or moving one step closer to the goal otherwise.
    pub fn is_useful(&self, state: &DeskState, action: &Action) -> bool {
        if !state.is_running() {
            return false;
        }
        let at_goal = self.goal_holds(state);
        match action {
            Action::Terminate(TermStatus::Success) => at_goal,
            Action::Terminate(TermStatus::Failure) => false,
            _ if at_goal => false,
            _ => match self.distance(state) {
                Some(d) if d > 0 => {
                    let next = apply(&self.app, state, action);
                    self.distance(&next) == Some(d - 1)
                }
                _ => false,
            },
        }
    }

    /// All useful actions in a fixed order; empty only when the episode is
    /// over or the goal is unreachable.
    pub fn useful_actions(&self, state: &DeskState) -> Vec<Action> {
        if !state.is_running() {
            return Vec::new();
        }
        if self.goal_holds(state) {
            return vec![Action::Terminate(TermStatus::Success)];
        }
        self.candidates(state, false)
            .into_iter()
            .filter(|a| self.is_useful(state, a))
            .collect()
    }

    /// All actions the planner knows about from `state`, useful or not.
    pub fn known_actions(&self, state: &DeskState) -> Vec<Action> {
        self.candidates(state, false)
    }

    /// Greedy plan following the first useful action at every step, ending
    /// with `TERMINATE(success)`. Empty when the goal is unreachable.
    pub fn reference_plan(&self, state: &DeskState) -> Vec<Action> {
        let mut plan = Vec::new();
        let mut s = state.clone();
        while let Some(a) = self.useful_actions(&s).into_iter().next() {
            s = apply(&self.app, &s, &a);
            let done = a.is_terminate();
            plan.push(a);
            if done {
                break;
            }
        }
        plan
    }
}
