//! DQN agent: replay buffer, masked epsilon-greedy action selection,
//! temporal-difference training with a target network, offline pretraining
//! across sampled environments, and online fine-tuning.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{action_space_size, decode_action, ActionVec, Env, StepOutcome};
use crate::error::{Error, Result};
use crate::mlp::{backward_sample, sgd_apply, ForwardCache, Gradients, MlpParams};
use crate::model::mix_seed;

/// One experience tuple. `next_mask` preserves the feasibility mask of the
/// successor state so the TD target only bootstraps over actions the agent
/// could actually take.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub next_mask: Vec<bool>,
}

/// Fixed-capacity FIFO experience store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            storage: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Uniform minibatch without replacement (partial Fisher-Yates).
    pub fn sample<'a>(&'a self, k: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Transition> {
        let n = self.storage.len();
        debug_assert!(k <= n);
        let mut indices: Vec<u32> = (0..n as u32).collect();
        for i in 0..k {
            let j = rng.random_range(i..n);
            indices.swap(i, j);
        }
        indices[..k]
            .iter()
            .map(|&i| &self.storage[i as usize])
            .collect()
    }
}

/// DQN training hyperparameters. Defaults match the shipped experiment
/// configs; every field can be overridden per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentHyperparams {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_eps_start")]
    pub epsilon_start: f64,
    #[serde(default = "default_eps_end")]
    pub epsilon_end: f64,
    #[serde(default = "default_eps_decay")]
    pub epsilon_decay_steps: u64,
    #[serde(default = "default_minibatch")]
    pub minibatch_size: usize,
    #[serde(default = "default_target_sync")]
    pub target_sync_period: u64,
    #[serde(default = "default_replay")]
    pub replay_capacity: usize,
    #[serde(default = "default_train_every")]
    pub train_every: u64,
}

fn default_gamma() -> f64 {
    0.9
}
fn default_lr() -> f64 {
    1e-3
}
fn default_eps_start() -> f64 {
    1.0
}
fn default_eps_end() -> f64 {
    0.05
}
fn default_eps_decay() -> u64 {
    2_000
}
fn default_minibatch() -> usize {
    64
}
fn default_target_sync() -> u64 {
    500
}
fn default_replay() -> usize {
    10_000
}
fn default_train_every() -> u64 {
    1
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        AgentHyperparams {
            gamma: default_gamma(),
            learning_rate: default_lr(),
            epsilon_start: default_eps_start(),
            epsilon_end: default_eps_end(),
            epsilon_decay_steps: default_eps_decay(),
            minibatch_size: default_minibatch(),
            target_sync_period: default_target_sync(),
            replay_capacity: default_replay(),
            train_every: default_train_every(),
        }
    }
}

impl AgentHyperparams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..1.0).contains(&self.gamma) {
            problems.push("hyper.gamma: must lie in [0, 1)".to_string());
        }
        if !(self.learning_rate > 0.0) {
            problems.push("hyper.learning_rate: must be > 0".to_string());
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || self.epsilon_end > self.epsilon_start
        {
            problems.push("hyper.epsilon: need epsilon_end <= epsilon_start <= 1".to_string());
        }
        if self.epsilon_decay_steps == 0 {
            problems.push("hyper.epsilon_decay_steps: must be >= 1".to_string());
        }
        if self.minibatch_size == 0 {
            problems.push("hyper.minibatch_size: must be >= 1".to_string());
        }
        if self.target_sync_period == 0 {
            problems.push("hyper.target_sync_period: must be >= 1".to_string());
        }
        if self.replay_capacity < self.minibatch_size {
            problems.push("hyper.replay_capacity: must be >= minibatch_size".to_string());
        }
        if self.train_every == 0 {
            problems.push("hyper.train_every: must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Masked epsilon-greedy selection over joint action indices: with
/// probability `epsilon` uniform over feasible actions, otherwise the
/// feasible argmax of the Q-values (lowest index on ties).
pub fn select_action(
    params: &MlpParams,
    state: &[f64],
    mask: &[bool],
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let feasible = mask.iter().filter(|&&m| m).count();
    if feasible == 0 {
        return Err(Error::InvalidAllocation(
            "feasibility mask admits no action".into(),
        ));
    }
    if mask.len() != params.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "mask length {} does not match action count {}",
            mask.len(),
            params.output_dim()
        )));
    }
    if epsilon > 0.0 && rng.random_range(0.0..1.0) < epsilon {
        let pick = rng.random_range(0..feasible);
        let index = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .nth(pick)
            .map(|(i, _)| i)
            .expect("pick < feasible count");
        return Ok(index);
    }
    let q = params.forward(state)?;
    greedy_masked(&q, mask).ok_or_else(|| {
        Error::InvalidAllocation("feasibility mask admits no action".into())
    })
}

fn greedy_masked(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &m)) in q.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        match best {
            Some(b) if q[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

fn max_masked(q: &[f64], mask: &[bool]) -> Option<f64> {
    greedy_masked(q, mask).map(|i| q[i])
}

/// TD target for one transition: `r` when terminal, otherwise
/// `r + gamma * max over feasible a' of Q_target(s')[a']`.
fn td_target(
    target_params: &MlpParams,
    t: &Transition,
    gamma: f64,
    scratch: &mut ForwardCache,
) -> f64 {
    if t.done {
        return t.reward;
    }
    target_params.forward_into(&t.next_state, scratch);
    match max_masked(&scratch.q, &t.next_mask) {
        Some(max_next) => t.reward + gamma * max_next,
        None => t.reward,
    }
}

/// Mean-squared TD loss of a minibatch. Kept separate from the gradient path
/// so finite-difference tests can evaluate the loss as a pure function of the
/// parameters.
pub fn td_loss(
    params: &MlpParams,
    target_params: &MlpParams,
    batch: &[&Transition],
    gamma: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::DimensionMismatch("empty minibatch".into()));
    }
    let mut scratch = ForwardCache::default();
    let mut loss = 0.0;
    for t in batch {
        let y = td_target(target_params, t, gamma, &mut scratch);
        params.forward_into(&t.state, &mut scratch);
        let diff = scratch.q[t.action] - y;
        loss += diff * diff;
    }
    Ok(loss / batch.len() as f64)
}

/// Loss plus exact backprop gradients for one minibatch.
pub fn td_loss_and_grads(
    params: &MlpParams,
    target_params: &MlpParams,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::DimensionMismatch("empty minibatch".into()));
    }
    let mut grads = Gradients::zeros(&params.dims);
    let mut scratch = ForwardCache::default();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for t in batch {
        let y = td_target(target_params, t, gamma, &mut scratch);
        let cache = params.forward_cached(&t.state);
        let diff = cache.q[t.action] - y;
        loss += diff * diff;
        backward_sample(params, &t.state, &cache, t.action, 2.0 * diff * scale, &mut grads);
    }
    Ok((loss * scale, grads))
}

/// One SGD step on a minibatch: returns the pre-update loss. Surfaces an
/// error when the loss goes non-finite.
pub fn sgd_step(
    params: &mut MlpParams,
    target_params: &MlpParams,
    batch: &[&Transition],
    hyper: &AgentHyperparams,
    step: u64,
) -> Result<f64> {
    let (loss, grads) = td_loss_and_grads(params, target_params, batch, hyper.gamma)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    sgd_apply(params, &grads, hyper.learning_rate);
    Ok(loss)
}

/// The learning agent: online Q-network, frozen target copy, replay buffer,
/// and the exploration schedule. Single-owner mutable; one instance per run.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub params: MlpParams,
    target: MlpParams,
    pub hyper: AgentHyperparams,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    env_steps: u64,
    train_steps: u64,
}

impl DqnAgent {
    pub fn new(dims: [usize; 4], hyper: AgentHyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let params = MlpParams::new(dims, mix_seed(seed, 0x1_717));
        Ok(Self::assemble(params, hyper, seed))
    }

    pub fn with_params(params: MlpParams, hyper: AgentHyperparams, seed: u64) -> Result<Self> {
        hyper.validate()?;
        params.validate()?;
        Ok(Self::assemble(params, hyper, seed))
    }

    fn assemble(params: MlpParams, hyper: AgentHyperparams, seed: u64) -> Self {
        DqnAgent {
            target: params.clone(),
            buffer: ReplayBuffer::new(hyper.replay_capacity),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xD92A)),
            params,
            hyper,
            env_steps: 0,
            train_steps: 0,
        }
    }

    /// Linearly decayed exploration rate.
    pub fn epsilon(&self) -> f64 {
        let frac =
            1.0 - (self.env_steps as f64 / self.hyper.epsilon_decay_steps as f64).min(1.0);
        self.hyper.epsilon_end + (self.hyper.epsilon_start - self.hyper.epsilon_end) * frac
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Epsilon-greedy action for the current exploration schedule.
    pub fn act(&mut self, state: &[f64], mask: &[bool]) -> Result<usize> {
        select_action(&self.params, state, mask, self.epsilon(), &mut self.rng)
    }

    /// Pure exploitation (epsilon = 0).
    pub fn act_greedy(&mut self, state: &[f64], mask: &[bool]) -> Result<usize> {
        select_action(&self.params, state, mask, 0.0, &mut self.rng)
    }

    /// Records a transition and trains per the `train_every` cadence.
    /// Returns the training loss when a gradient step occurred.
    pub fn observe(&mut self, t: Transition) -> Result<Option<f64>> {
        self.buffer.push(t);
        self.env_steps += 1;
        if self.env_steps % self.hyper.train_every != 0
            || self.buffer.len() < self.hyper.minibatch_size
        {
            return Ok(None);
        }
        let loss = {
            let batch = self.buffer.sample(self.hyper.minibatch_size, &mut self.rng);
            sgd_step(
                &mut self.params,
                &self.target,
                &batch,
                &self.hyper,
                self.train_steps,
            )?
        };
        self.train_steps += 1;
        if self.train_steps % self.hyper.target_sync_period == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    /// Copies the online network into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.params.clone();
    }

    pub fn target_params(&self) -> &MlpParams {
        &self.target
    }
}

/// Result of one driver step.
pub struct DriverStep {
    pub outcome: StepOutcome,
    /// Joint action index, absent during downtime.
    pub action: Option<usize>,
    /// TD loss when a gradient step ran.
    pub loss: Option<f64>,
}

/// Drives one agent-environment step: masked action selection, environment
/// transition, replay insertion, and training. During OOM downtime no action
/// is selected and nothing is learned.
pub struct OnlineLoop<'a> {
    pub agent: &'a mut DqnAgent,
    pub env: &'a mut Env,
    state: Vec<f64>,
}

impl<'a> OnlineLoop<'a> {
    pub fn new(agent: &'a mut DqnAgent, env: &'a mut Env) -> Result<Self> {
        let expect_in = env.state_len();
        let expect_out = env.action_count() as usize;
        if agent.params.input_dim() != expect_in || agent.params.output_dim() != expect_out {
            return Err(Error::DimensionMismatch(format!(
                "agent network is {}-in/{}-out but the environment needs {}-in/{}-out",
                agent.params.input_dim(),
                agent.params.output_dim(),
                expect_in,
                expect_out
            )));
        }
        let state = env.current_state().as_vector();
        Ok(OnlineLoop { agent, env, state })
    }

    /// Runs one environment step; `terminal` marks the transition as the end
    /// of an episode (used by episodic pretraining).
    pub fn step_once(&mut self, terminal: bool) -> Result<DriverStep> {
        if self.env.in_downtime() {
            let knobs = self.env.knobs();
            let outcome = self.env.step(&ActionVec::maintain(knobs))?;
            self.state = outcome.state.as_vector();
            return Ok(DriverStep {
                outcome,
                action: None,
                loss: None,
            });
        }
        let mask = self.env.feasible_mask();
        let action = self.agent.act(&self.state, &mask)?;
        let decoded = decode_action(action as u64, self.env.knobs())?;
        let outcome = self.env.step(&decoded)?;
        let next_state = outcome.state.as_vector();
        let next_mask = self.env.feasible_mask();
        let loss = self.agent.observe(Transition {
            state: std::mem::replace(&mut self.state, next_state.clone()),
            action,
            reward: outcome.reward,
            next_state,
            done: terminal,
            next_mask,
        })?;
        Ok(DriverStep {
            outcome,
            action: Some(action),
            loss,
        })
    }
}

/// Draws randomized environments of a fixed knob count for offline
/// pretraining.
pub trait EnvSampler {
    /// Knob count every sampled environment must share.
    fn knobs(&self) -> usize;
    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Result<Env>;
}

/// Sampler that always yields clones of one environment.
pub struct FixedEnvSampler {
    env: Env,
}

impl FixedEnvSampler {
    pub fn new(env: Env) -> Self {
        FixedEnvSampler { env }
    }
}

impl EnvSampler for FixedEnvSampler {
    fn knobs(&self) -> usize {
        self.env.knobs()
    }

    fn sample(&mut self, _rng: &mut ChaCha8Rng) -> Result<Env> {
        Ok(self.env.clone())
    }
}

/// One row of the recorded training curve.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub episode: usize,
    pub env_steps: u64,
    pub mean_reward: f64,
    /// Mean TD loss of the episode's gradient steps; absent before the
    /// replay buffer fills.
    pub mean_loss: Option<f64>,
    pub epsilon: f64,
}

/// Episodic DQN over environments drawn from the sampler. Returns the trained
/// parameters (tagged with the sampler's knob count via the output width) and
/// the per-episode training curve.
pub fn pretrain_offline(
    sampler: &mut dyn EnvSampler,
    hidden: (usize, usize),
    hyper: &AgentHyperparams,
    total_steps: usize,
    episode_len: usize,
    seed: u64,
) -> Result<(MlpParams, Vec<CurveRow>)> {
    assert!(episode_len > 0, "episode_len must be positive");
    let r = sampler.knobs();
    let dims = [6 + r, hidden.0, hidden.1, action_space_size(r) as usize];
    let mut agent = DqnAgent::new(dims, hyper.clone(), mix_seed(seed, 0x0FF))?;
    let mut sampler_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5A17));
    let mut curve = Vec::new();
    let mut steps_done = 0usize;
    let mut episode = 0usize;
    while steps_done < total_steps {
        let mut env = sampler.sample(&mut sampler_rng)?;
        if env.knobs() != r {
            return Err(Error::DimensionMismatch(format!(
                "sampler produced an environment with {} knobs, expected {r}",
                env.knobs()
            )));
        }
        env.reset()?;
        let this_episode = episode_len.min(total_steps - steps_done);
        let mut reward_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        {
            let mut driver = OnlineLoop::new(&mut agent, &mut env)?;
            for i in 0..this_episode {
                let terminal = i + 1 == this_episode;
                let step = driver.step_once(terminal)?;
                reward_sum += step.outcome.reward;
                if let Some(loss) = step.loss {
                    loss_sum += loss;
                    loss_count += 1;
                }
            }
        }
        steps_done += this_episode;
        episode += 1;
        curve.push(CurveRow {
            episode,
            env_steps: agent.env_steps(),
            mean_reward: reward_sum / this_episode as f64,
            mean_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            epsilon: agent.epsilon(),
        });
    }
    Ok((agent.params, curve))
}

/// Continues epsilon-greedy interaction and TD updates on a live
/// environment. Never selects actions while the environment is in OOM
/// downtime. Returns the tuned parameters and the full step trajectory.
pub fn fine_tune_online(
    params: MlpParams,
    env: &mut Env,
    hyper: &AgentHyperparams,
    steps: usize,
    seed: u64,
) -> Result<(MlpParams, Vec<StepOutcome>)> {
    let mut agent = DqnAgent::with_params(params, hyper.clone(), seed)?;
    let mut trajectory = Vec::with_capacity(steps);
    {
        let mut driver = OnlineLoop::new(&mut agent, env)?;
        for _ in 0..steps {
            trajectory.push(driver.step_once(false)?.outcome);
        }
    }
    Ok((agent.params, trajectory))
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    r: usize,
    layer_dims: [usize; 4],
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hyperparams: AgentHyperparams,
}

/// Writes parameters, hyperparameters, and the pipeline knob count to a JSON
/// checkpoint. Roundtrips bit-exactly through [`load_checkpoint`].
pub fn save_checkpoint(
    path: &Path,
    params: &MlpParams,
    hyper: &AgentHyperparams,
    r: usize,
) -> Result<()> {
    if params.output_dim() != action_space_size(r) as usize {
        return Err(Error::Checkpoint(format!(
            "output width {} does not match 5^{r}",
            params.output_dim()
        )));
    }
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        r,
        layer_dims: params.dims,
        weights: params.weights.to_vec(),
        biases: params.biases.to_vec(),
        hyperparams: hyper.clone(),
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a checkpoint, validating version and dimensional consistency.
pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, AgentHyperparams, usize)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    if file.layer_dims[3] != action_space_size(file.r) as usize
        || file.layer_dims[0] != 6 + file.r
    {
        return Err(Error::Checkpoint(format!(
            "layer_dims {:?} inconsistent with r = {}",
            file.layer_dims, file.r
        )));
    }
    let weights: [Vec<f64>; 3] = file
        .weights
        .try_into()
        .map_err(|_| Error::Checkpoint("expected exactly 3 weight matrices".into()))?;
    let biases: [Vec<f64>; 3] = file
        .biases
        .try_into()
        .map_err(|_| Error::Checkpoint("expected exactly 3 bias vectors".into()))?;
    let params = MlpParams {
        dims: file.layer_dims,
        weights,
        biases,
    };
    params.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((params, file.hyperparams, file.r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_transition(dims: &[usize; 4], action: usize, reward: f64, done: bool) -> Transition {
        Transition {
            state: (0..dims[0]).map(|i| 0.1 * i as f64).collect(),
            action,
            reward,
            next_state: (0..dims[0]).map(|i| 0.05 * i as f64 + 0.2).collect(),
            done,
            next_mask: vec![true; dims[3]],
        }
    }

    #[test]
    fn buffer_fifo_eviction() {
        let mut buf = ReplayBuffer::new(3);
        let dims = [2, 2, 2, 2];
        for r in 0..5 {
            buf.push(toy_transition(&dims, 0, r as f64, false));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.storage.iter().map(|t| t.reward).collect();
        assert!(rewards.contains(&2.0) && rewards.contains(&3.0) && rewards.contains(&4.0));
    }

    #[test]
    fn buffer_samples_without_replacement() {
        let mut buf = ReplayBuffer::new(16);
        let dims = [2, 2, 2, 2];
        for r in 0..16 {
            buf.push(toy_transition(&dims, 0, r as f64, false));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = buf.sample(16, &mut rng);
        let mut rewards: Vec<i64> = batch.iter().map(|t| t.reward as i64).collect();
        rewards.sort_unstable();
        assert_eq!(rewards, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn select_action_respects_mask_and_tie_break() {
        let mut params = MlpParams::new([2, 4, 4, 4], 3);
        // Zero the net: all q equal, tie broken by lowest feasible index.
        for layer in 0..3 {
            params.weights[layer].iter_mut().for_each(|w| *w = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = vec![false, true, true, false];
        let a = select_action(&params, &[0.0, 0.0], &mask, 0.0, &mut rng).unwrap();
        assert_eq!(a, 1);

        params.biases[2] = vec![0.0, 1.0, 5.0, 9.0];
        let a = select_action(&params, &[0.0, 0.0], &mask, 0.0, &mut rng).unwrap();
        assert_eq!(a, 2, "argmax restricted to feasible actions");

        assert!(select_action(&params, &[0.0, 0.0], &[false; 4], 0.0, &mut rng).is_err());
    }

    #[test]
    fn select_action_uniform_under_full_exploration() {
        let params = MlpParams::new([2, 4, 4, 4], 3);
        let mask = vec![true, false, true, true];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 4];
        let draws = 9_000;
        for _ in 0..draws {
            let a = select_action(&params, &[0.1, 0.2], &mask, 1.0, &mut rng).unwrap();
            counts[a] += 1;
        }
        assert_eq!(counts[1], 0);
        // chi-square against uniform over the 3 feasible actions,
        // 2 dof, alpha = 0.001 -> critical value 13.82
        let expected = draws as f64 / 3.0;
        let chi2: f64 = [0, 2, 3]
            .iter()
            .map(|&i| {
                let d = counts[i] as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 13.82, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn td_targets_myopic_and_terminal() {
        let dims = [3, 4, 4, 5];
        let params = MlpParams::new(dims, 11);
        let target = MlpParams::new(dims, 12);

        // gamma = 0: y = r exactly, so the loss is (q_sa - r)^2.
        let t = toy_transition(&dims, 2, 0.7, false);
        let q_sa = params.forward(&t.state).unwrap()[2];
        let loss = td_loss(&params, &target, &[&t], 0.0).unwrap();
        assert!((loss - (q_sa - 0.7).powi(2)).abs() < 1e-12);

        // done: next state irrelevant even with gamma > 0.
        let t = toy_transition(&dims, 1, 0.3, true);
        let q_sa = params.forward(&t.state).unwrap()[1];
        let loss = td_loss(&params, &target, &[&t], 0.9).unwrap();
        assert!((loss - (q_sa - 0.3).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn gradcheck_small_net() {
        let dims = [3, 5, 5, 4];
        let mut params = MlpParams::new(dims, 21);
        let target = MlpParams::new(dims, 22);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let batch_owned: Vec<Transition> = (0..6)
            .map(|i| {
                let mut t = toy_transition(&dims, i % 4, rng.random_range(0.0..1.0), i % 3 == 0);
                t.state.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
                t.next_state
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-1.0..1.0));
                t
            })
            .collect();
        let batch: Vec<&Transition> = batch_owned.iter().collect();
        let (_, grads) = td_loss_and_grads(&params, &target, &batch, 0.9).unwrap();

        let h = 1e-5;
        for idx in 0..params.num_params() {
            let orig = params.get_flat(idx);
            params.set_flat(idx, orig + h);
            let up = td_loss(&params, &target, &batch, 0.9).unwrap();
            params.set_flat(idx, orig - h);
            let down = td_loss(&params, &target, &batch, 0.9).unwrap();
            params.set_flat(idx, orig);
            let numeric = (up - down) / (2.0 * h);
            let analytic = MlpParams::grad_flat(&grads, idx);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                ((analytic - numeric) / denom).abs() < 1e-4,
                "param {idx}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn myopic_bandit_convergence() {
        // Single state, 3 actions with fixed rewards; gamma = 0. Q-values
        // must converge to the immediate rewards.
        let dims = [2, 8, 8, 3];
        let rewards = [0.2, 0.9, 0.5];
        let hyper = AgentHyperparams {
            gamma: 0.0,
            learning_rate: 0.05,
            minibatch_size: 16,
            replay_capacity: 64,
            target_sync_period: 50,
            ..AgentHyperparams::default()
        };
        let mut agent = DqnAgent::new(dims, hyper, 5).unwrap();
        let state = vec![1.0, -1.0];
        for step in 0..3_000u64 {
            let a = (step % 3) as usize;
            agent
                .observe(Transition {
                    state: state.clone(),
                    action: a,
                    reward: rewards[a],
                    next_state: state.clone(),
                    done: false,
                    next_mask: vec![true; 3],
                })
                .unwrap();
        }
        let q = agent.params.forward(&state).unwrap();
        for (qa, ra) in q.iter().zip(rewards) {
            assert!((qa - ra).abs() < 0.01, "q {q:?} vs rewards {rewards:?}");
        }
    }

    #[test]
    fn target_sync_copies_exactly() {
        let dims = [3, 6, 6, 4];
        let mut agent = DqnAgent::new(dims, AgentHyperparams::default(), 8).unwrap();
        for i in 0..80 {
            agent
                .observe(toy_transition(&dims, i % 4, 0.3, false))
                .unwrap();
        }
        assert_ne!(agent.params, agent.target, "training moved the online net");
        agent.sync_target();
        let x = [0.3, -0.2, 0.8];
        assert_eq!(
            agent.params.forward(&x).unwrap(),
            agent.target_params().forward(&x).unwrap()
        );
    }

    #[test]
    fn checkpoint_roundtrip_and_validation() {
        let dir = std::env::temp_dir().join("pipetune-agent-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");

        let r = 2;
        let dims = [6 + r, 8, 8, 25];
        let params = MlpParams::new(dims, 77);
        let hyper = AgentHyperparams::default();
        save_checkpoint(&path, &params, &hyper, r).unwrap();
        let (loaded, loaded_hyper, loaded_r) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params, "bit-exact parameter roundtrip");
        assert_eq!(loaded_hyper, hyper);
        assert_eq!(loaded_r, r);

        // Truncated file.
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // r inconsistent with the output width.
        assert!(save_checkpoint(&path, &params, &hyper, 3).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pretrain_zero_steps_returns_initial_params() {
        use crate::env::EnvConfig;
        use crate::model::{MachineSpec, PipelineSpec, StageKind, StageSpec, WorkloadSpec};
        let pipeline = PipelineSpec {
            stages: vec![
                StageSpec {
                    name: "a".into(),
                    kind: StageKind::DiskLoad,
                    cost_per_item_cpu_s: 1.0,
                    mem_fixed_mb: 0.0,
                    mem_per_replica_mb: 0.0,
                    scalable: true,
                    noise_cv: 0.0,
                },
                StageSpec {
                    name: "b".into(),
                    kind: StageKind::Batch,
                    cost_per_item_cpu_s: 2.0,
                    mem_fixed_mb: 0.0,
                    mem_per_replica_mb: 0.0,
                    scalable: true,
                    noise_cv: 0.0,
                },
            ],
            sample_size_mb: 1.0,
            overlap_jitter_max: 0.3,
            overlap_u_half: 4.0,
            prefetch_quantum_mb: 64.0,
            prefetch_batch_normalizer_mb: 1024.0,
        };
        let machine = MachineSpec {
            total_cpus: 6,
            cpu_ghz: 1.0,
            total_mem_mb: 1e5,
            dram_bandwidth_mbps: 25_600.0,
            io_bandwidth_mbps: 1e9,
        };
        let env = Env::new(pipeline, machine, WorkloadSpec::new(5, 1.0), EnvConfig::default())
            .unwrap();
        let mut sampler = FixedEnvSampler::new(env);
        let (params, curve) = pretrain_offline(
            &mut sampler,
            (8, 8),
            &AgentHyperparams::default(),
            0,
            100,
            9,
        )
        .unwrap();
        assert_eq!(params, MlpParams::new([8, 8, 8, 25], mix_seed(mix_seed(9, 0x0FF), 0x1_717)));
        assert!(curve.is_empty());
    }
}
