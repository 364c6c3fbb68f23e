use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::action::Action;
use super::desk::{apply, DeskApp, DeskState, Observation, StateHash};
use super::task::{SnapshotRegistry, TaskSpec};
use super::EnvError;

/// A live episode. Owned by one rollout at a time.
#[derive(Debug, Clone)]
pub struct EnvHandle {
    task: Arc<TaskSpec>,
    app: Arc<DeskApp>,
    state: DeskState,
    steps: u32,
    rng: ChaCha8Rng,
    diverged: bool,
    last_spurious: bool,
    spurious_steps: u32,
}

/// Starts an episode with the task's own seed.
pub fn init_env(
    task: &Arc<TaskSpec>,
    registry: &SnapshotRegistry,
) -> Result<(EnvHandle, Observation), EnvError> {
    let app = registry.get(&task.snapshot_id)?;
    EnvHandle::start(task, &app, task.seed)
}

/// Re-initializes from the task snapshot and applies `actions` in order.
/// Returns every observation including the initial one. When `expected` is
/// given, any hash mismatch sets the handle's divergence flag.
pub fn replay_prefix(
    task: &Arc<TaskSpec>,
    app: &Arc<DeskApp>,
    actions: &[Action],
    expected: Option<&[StateHash]>,
    seed: u64,
) -> Result<(EnvHandle, Vec<Observation>), EnvError> {
    if actions.len() > task.max_steps as usize {
        return Err(EnvError::Protocol(format!(
            "prefix of {} actions exceeds max_steps {}",
            actions.len(),
            task.max_steps
        )));
    }
    let (mut handle, first) = EnvHandle::start(task, app, seed)?;
    let mut observations = Vec::with_capacity(actions.len() + 1);
    observations.push(first);
    for a in actions {
        observations.push(handle.step(a)?);
    }
    if let Some(expected) = expected {
        let mismatch = expected.len() != observations.len()
            || expected
                .iter()
                .zip(&observations)
                .any(|(h, o)| *h != o.state_hash);
        if mismatch {
            handle.diverged = true;
        }
    }
    Ok((handle, observations))
}

#[derive(Serialize, Deserialize)]
struct SnapshotPayload {
    format_version: u32,
    task_id: String,
    snapshot_id: String,
    state: DeskState,
    steps: u32,
    rng_seed: String,
    rng_word_pos: String,
    diverged: bool,
    last_spurious: bool,
    spurious_steps: u32,
}

/// Serialized handle: a SHA-256 hex line followed by the JSON payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotBlob(pub Vec<u8>);

impl EnvHandle {
    pub fn start(
        task: &Arc<TaskSpec>,
        app: &Arc<DeskApp>,
        seed: u64,
    ) -> Result<(EnvHandle, Observation), EnvError> {
        if app.id != task.snapshot_id {
            return Err(EnvError::UnknownSnapshot(task.snapshot_id.clone()));
        }
        task.validate()?;
        let state = task.initial_state(app)?;
        let handle = EnvHandle {
            task: Arc::clone(task),
            app: Arc::clone(app),
            state,
            steps: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            diverged: false,
            last_spurious: false,
            spurious_steps: 0,
        };
        let obs = handle.observe();
        Ok((handle, obs))
    }

    pub fn observe(&self) -> Observation {
        self.app.observe(&self.state)
    }

    pub fn state(&self) -> &DeskState {
        &self.state
    }

    pub fn task(&self) -> &Arc<TaskSpec> {
        &self.task
    }

    pub fn app(&self) -> &Arc<DeskApp> {
        &self.app
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn remaining_steps(&self) -> u32 {
        self.task.max_steps - self.steps
    }

    pub fn is_terminated(&self) -> bool {
        !self.state.is_running()
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Whether the most recent transition was a seeded spurious one.
    pub fn last_transition_spurious(&self) -> bool {
        self.last_spurious
    }

    pub fn spurious_steps(&self) -> u32 {
        self.spurious_steps
    }

    pub fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        if self.is_terminated() {
            return Err(EnvError::Protocol("step after termination".into()));
        }
        if self.steps >= self.task.max_steps {
            return Err(EnvError::Protocol(format!(
                "step budget of {} exhausted",
                self.task.max_steps
            )));
        }
        let mut next = apply(&self.app, &self.state, action);
        self.last_spurious = false;
        if !action.is_terminate()
            && self.task.stochasticity > 0.0
            && self.rng.gen::<f64>() < self.task.stochasticity
        {
            next.popups += 1;
            self.last_spurious = true;
            self.spurious_steps += 1;
        }
        self.state = next;
        self.steps += 1;
        Ok(self.observe())
    }

    pub fn save(&self) -> SnapshotBlob {
        let payload = SnapshotPayload {
            format_version: 1,
            task_id: self.task.task_id.clone(),
            snapshot_id: self.app.id.clone(),
            state: self.state.clone(),
            steps: self.steps,
            rng_seed: hex::encode(self.rng.get_seed()),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            diverged: self.diverged,
            last_spurious: self.last_spurious,
            spurious_steps: self.spurious_steps,
        };
        let body = serde_json::to_vec(&payload).expect("payload serializes");
        let mut out = hex::encode(Sha256::digest(&body)).into_bytes();
        out.push(b'\n');
        out.extend_from_slice(&body);
        SnapshotBlob(out)
    }

    pub fn restore(
        blob: &SnapshotBlob,
        task: &Arc<TaskSpec>,
        app: &Arc<DeskApp>,
    ) -> Result<EnvHandle, EnvError> {
        let bytes = &blob.0;
        let corrupt = |m: &str| EnvError::Integrity(format!("snapshot blob: {m}"));
        if bytes.len() < 65 || bytes[64] != b'\n' {
            return Err(corrupt("truncated header"));
        }
        let (sum, body) = (&bytes[..64], &bytes[65..]);
        if hex::encode(Sha256::digest(body)).as_bytes() != sum {
            return Err(corrupt("checksum mismatch"));
        }
        let p: SnapshotPayload =
            serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
        if p.format_version != 1 || p.task_id != task.task_id || p.snapshot_id != app.id {
            return Err(corrupt("blob belongs to a different task or format"));
        }
        let seed_bytes = hex::decode(&p.rng_seed).map_err(|_| corrupt("rng seed"))?;
        let seed: [u8; 32] = seed_bytes.try_into().map_err(|_| corrupt("rng seed length"))?;
        let word_pos: u128 = p.rng_word_pos.parse().map_err(|_| corrupt("rng position"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        Ok(EnvHandle {
            task: Arc::clone(task),
            app: Arc::clone(app),
            state: p.state,
            steps: p.steps,
            rng,
            diverged: p.diverged,
            last_spurious: p.last_spurious,
            spurious_steps: p.spurious_steps,
        })
    }

    /// `restore(save(self))`.
    pub fn snapshot_restore(&self) -> Result<EnvHandle, EnvError> {
        EnvHandle::restore(&self.save(), &self.task, &self.app)
    }
}
