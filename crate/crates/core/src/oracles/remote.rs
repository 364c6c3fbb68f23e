//! HTTP adapter for remote judges and agents.
//!
//! Every call is a `POST <endpoint>/<role>` carrying
//! `{"version": 1, "role": ..., "request": ...}`. Transport failures and 5xx
//! responses are retried with exponential backoff; anything else that is not
//! a well-formed verdict becomes [`OracleError::JudgeUnavailable`].

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use rand::RngCore;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::types::{
    AgentStep, CandidateErrorProposal, HistoryStep, ProgressVerdict, RewardVerdict, StepContext,
    TrajectoryExperience, TrajectoryRecord,
};
use super::{
    ActionCritic, OracleError, Policy, ProgressCritic, RecoveryActor, ReflectionIdentifier,
    Reflector, RewardModel,
};
use crate::env::{Action, Observation, StateHash, WidgetView};

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 200,
            max_in_flight: 8,
        }
    }
}

/// Observation as sent over the wire: what is on screen, not the hidden
/// state.
#[derive(Debug, Serialize)]
struct WireObservation<'a> {
    state_hash: StateHash,
    widgets: &'a [WidgetView],
    screen_note: &'a str,
}

impl<'a> From<&'a Observation> for WireObservation<'a> {
    fn from(o: &'a Observation) -> Self {
        WireObservation {
            state_hash: o.state_hash,
            widgets: &o.widgets,
            screen_note: &o.screen_note,
        }
    }
}

fn wire_history(history: &[HistoryStep]) -> Value {
    history
        .iter()
        .map(|h| {
            json!({
                "observation": WireObservation::from(&*h.observation),
                "output": h.output,
                "action": h.action,
            })
        })
        .collect()
}

fn wire_trajectory(t: &TrajectoryRecord) -> Value {
    json!({
        "steps": wire_history(&t.steps),
        "final_observation": WireObservation::from(&*t.final_observation),
    })
}

struct Permit<'a>(&'a RemoteJudge);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking client with a bounded number of concurrent requests.
pub struct RemoteJudge {
    config: RemoteConfig,
    agent: ureq::Agent,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl std::fmt::Debug for RemoteJudge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteJudge").field("config", &self.config).finish()
    }
}

impl RemoteJudge {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteJudge {
            config,
            agent,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn acquire(&self) -> Permit<'_> {
        let cap = self.config.max_in_flight.max(1);
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }

    /// Sends one request and returns the parsed response document.
    pub fn invoke(&self, role: &str, request: Value) -> Result<Value, OracleError> {
        let _permit = self.acquire();
        let url = format!("{}/{role}", self.config.endpoint.trim_end_matches('/'));
        let body = json!({ "version": WIRE_VERSION, "role": role, "request": request });
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            match self.agent.post(&url).send_json(&body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<Value>().map_err(|e| {
                            OracleError::JudgeUnavailable(format!("{role}: malformed response: {e}"))
                        });
                    }
                    last = format!("{role}: HTTP {status}");
                    if status < 500 && status != 429 {
                        break;
                    }
                }
                Err(e) => last = format!("{role}: {e}"),
            }
            log::warn!("remote {role} attempt {} failed: {last}", attempt + 1);
        }
        Err(OracleError::JudgeUnavailable(last))
    }

    pub fn invoke_typed<T: DeserializeOwned>(&self, role: &str, request: Value) -> Result<T, OracleError> {
        let v = self.invoke(role, request)?;
        if let Some(version) = v.get("version") {
            if version != &json!(WIRE_VERSION) {
                return Err(OracleError::JudgeUnavailable(format!(
                    "{role}: unsupported wire version {version}"
                )));
            }
        }
        serde_json::from_value(v)
            .map_err(|e| OracleError::JudgeUnavailable(format!("{role}: malformed response: {e}")))
    }
}

fn binary(role: &str, v: u8) -> Result<u8, OracleError> {
    if v <= 1 {
        Ok(v)
    } else {
        Err(OracleError::JudgeUnavailable(format!("{role}: expected 0 or 1, got {v}")))
    }
}

#[derive(Deserialize)]
struct RewardResponse {
    r: u8,
    #[serde(default)]
    experience: TrajectoryExperience,
}

#[derive(Deserialize)]
struct ProgressResponse {
    c: u8,
    #[serde(default)]
    reason: String,
}

#[derive(Deserialize)]
struct BinaryResponse {
    v: u8,
}

#[derive(Deserialize)]
struct ReflectorResponse {
    proposals: Vec<CandidateErrorProposal>,
}

#[derive(Deserialize)]
struct StepResponse {
    thought: String,
    action: Action,
}

/// All oracle roles served by one remote endpoint.
#[derive(Debug)]
pub struct RemoteOracles {
    judge: RemoteJudge,
    id: String,
}

impl RemoteOracles {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteOracles {
            id: config.endpoint.clone(),
            judge: RemoteJudge::new(config),
        }
    }

    pub fn judge(&self) -> &RemoteJudge {
        &self.judge
    }

    fn step(&self, role: &str, request: Value) -> Result<AgentStep, OracleError> {
        let r: StepResponse = self.judge.invoke_typed(role, request)?;
        Ok(AgentStep {
            thought: r.thought,
            action: r.action,
            label: None,
        })
    }
}

impl RewardModel for RemoteOracles {
    fn judge_trajectory(&self, instruction: &str, t: &TrajectoryRecord) -> Result<RewardVerdict, OracleError> {
        let r: RewardResponse = self.judge.invoke_typed(
            "reward",
            json!({ "instruction": instruction, "trajectory": wire_trajectory(t) }),
        )?;
        Ok(RewardVerdict {
            r_tau: binary("reward", r.r)?,
            experience: r.experience,
        })
    }
}

impl ProgressCritic for RemoteOracles {
    fn assess_progress(
        &self,
        instruction: &str,
        observation: &Observation,
        action: &Action,
        history: &[HistoryStep],
    ) -> Result<ProgressVerdict, OracleError> {
        let r: ProgressResponse = self.judge.invoke_typed(
            "progress_critic",
            json!({
                "instruction": instruction,
                "observation": WireObservation::from(observation),
                "action": action,
                "history": wire_history(history),
            }),
        )?;
        Ok(ProgressVerdict {
            c: binary("progress_critic", r.c)?,
            reason: r.reason,
        })
    }
}

impl ActionCritic for RemoteOracles {
    fn verify_action(&self, before: &Observation, action: &Action, after: &Observation) -> Result<u8, OracleError> {
        let r: BinaryResponse = self.judge.invoke_typed(
            "action_critic",
            json!({
                "before": WireObservation::from(before),
                "action": action,
                "after": WireObservation::from(after),
            }),
        )?;
        binary("action_critic", r.v)
    }
}

impl ReflectionIdentifier for RemoteOracles {
    fn detect_reflection(&self, instruction: &str, history: &[HistoryStep], step_output: &str) -> Result<u8, OracleError> {
        let r: BinaryResponse = self.judge.invoke_typed(
            "reflection",
            json!({
                "instruction": instruction,
                "history": wire_history(history),
                "step_output": step_output,
            }),
        )?;
        binary("reflection", r.v)
    }
}

impl Reflector for RemoteOracles {
    fn propose_error_candidates(
        &self,
        instruction: &str,
        failed: &TrajectoryRecord,
        verdict: &RewardVerdict,
        neighbors: &[&TrajectoryExperience],
        k_cand: usize,
    ) -> Result<Vec<CandidateErrorProposal>, OracleError> {
        if verdict.r_tau != 0 {
            return Err(OracleError::ContractViolation(
                "reflector called on a successful trajectory".to_string(),
            ));
        }
        let r: ReflectorResponse = self.judge.invoke_typed(
            "reflector",
            json!({
                "instruction": instruction,
                "trajectory": wire_trajectory(failed),
                "experience": verdict.experience,
                "neighbor_experiences": neighbors,
                "k_cand": k_cand,
            }),
        )?;
        let t = failed.steps.len();
        for p in &r.proposals {
            if p.step == 0 || p.step > t || !(0.0..=1.0).contains(&p.priority) || p.guidance.trim().is_empty() {
                return Err(OracleError::JudgeUnavailable(format!(
                    "reflector: invalid proposal at step {} with priority {}",
                    p.step, p.priority
                )));
            }
        }
        Ok(r.proposals.into_iter().take(k_cand).collect())
    }
}

impl Policy for RemoteOracles {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose_action(&self, ctx: &StepContext<'_>, _rng: &mut dyn RngCore) -> Result<AgentStep, OracleError> {
        self.step(
            "policy",
            json!({
                "instruction": ctx.instruction,
                "observation": WireObservation::from(ctx.observation),
                "history": wire_history(ctx.history),
            }),
        )
    }
}

impl RecoveryActor for RemoteOracles {
    fn propose_recovery_action(
        &self,
        ctx: &StepContext<'_>,
        guidance: &str,
        _rng: &mut dyn RngCore,
    ) -> Result<AgentStep, OracleError> {
        self.step(
            "recovery",
            json!({
                "instruction": ctx.instruction,
                "observation": WireObservation::from(ctx.observation),
                "history": wire_history(ctx.history),
                "guidance": guidance,
            }),
        )
    }

    fn continue_rollout(&self, ctx: &StepContext<'_>, rng: &mut dyn RngCore) -> Result<AgentStep, OracleError> {
        self.propose_action(ctx, rng)
    }
}
