//! DQN machinery: replay buffer, target network, epsilon-greedy exploration
//! and minibatch TD updates.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neuralnet::{LayerSpec, QNetwork, Workspace};
use crate::rng::{substream, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
            cursor: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest-first iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchReduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_init: f64,
    pub epsilon_final: f64,
    pub epsilon_decay: f64,
    pub minibatch: usize,
    pub buffer_capacity: usize,
    pub target_update_every: u64,
    pub episodes: usize,
    pub train_steps_per_decision: usize,
    /// Updates are per-sample either way. `Sum` applies the full learning
    /// rate to every sample; `Mean` divides it by the minibatch size, which
    /// matches one step on the averaged minibatch loss. The reported loss is
    /// reduced the same way.
    pub batch_reduction: BatchReduction,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            learning_rate: 0.0005,
            epsilon_init: 1.0,
            epsilon_final: 0.1,
            epsilon_decay: 0.9997,
            minibatch: 64,
            buffer_capacity: 50_000,
            target_update_every: 1000,
            episodes: 20_000,
            train_steps_per_decision: 2,
            batch_reduction: BatchReduction::Mean,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_init)
            || !(0.0..=1.0).contains(&self.epsilon_final)
            || self.epsilon_final > self.epsilon_init
        {
            return bad("need 0 <= epsilon_final <= epsilon_init <= 1");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad("epsilon_decay must lie in (0, 1]");
        }
        if self.minibatch == 0 || self.buffer_capacity < self.minibatch {
            return bad("minibatch must be positive and fit in the buffer");
        }
        if self.target_update_every == 0 || self.episodes == 0 {
            return bad("target_update_every and episodes must be positive");
        }
        Ok(())
    }

    pub fn decay_epsilon(&self, epsilon: f64) -> f64 {
        (epsilon * self.epsilon_decay).max(self.epsilon_final)
    }
}

/// Default schedule: multiply by 0.9997 per episode, floor at 0.1.
pub fn decay_epsilon(epsilon: f64) -> f64 {
    AgentConfig::default().decay_epsilon(epsilon)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy choice. With `epsilon == 0` no random number is drawn.
pub fn select_action(
    net: &QNetwork,
    state: &[f64],
    epsilon: f64,
    rng: &mut impl Rng,
    ws: &mut Workspace,
) -> Result<usize> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..net.spec().output()));
    }
    Ok(argmax(net.forward_with(state, ws)?))
}

/// TD target of a single transition.
pub fn td_target(reward: f64, terminal: bool, gamma: f64, next_q: &[f64]) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Anything an agent can act in: a state vector, a step, and a done flag.
pub trait DecisionProcess {
    fn state(&self) -> Result<Vec<f64>>;
    /// Applies an action, returning the reward and whether the episode ended.
    fn act(&mut self, action: usize) -> Result<(f64, bool)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub reward: f64,
    pub decisions: usize,
    /// Epsilon in force during the episode.
    pub epsilon: f64,
    pub loss_sum: f64,
    pub loss_count: usize,
}

impl EpisodeSummary {
    pub fn loss_mean(&self) -> f64 {
        if self.loss_count == 0 {
            0.0
        } else {
            self.loss_sum / self.loss_count as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    online: QNetwork,
    target: QNetwork,
    buffer: ReplayBuffer,
    epsilon: f64,
    train_steps: u64,
    syncs: u64,
    episodes_done: usize,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    ws: Workspace,
    target_ws: Workspace,
}

impl Agent {
    /// Fresh agent; weights, exploration and replay sampling each draw from
    /// their own substream of `seed`.
    pub fn new(spec: &LayerSpec, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let online = QNetwork::init(spec, &mut substream(seed, Stream::Weights, 0))?;
        Ok(Self::from_network(online, config, seed))
    }

    /// Wraps an existing network; the target starts as an exact copy.
    pub fn from_network(online: QNetwork, config: AgentConfig, seed: u64) -> Self {
        let target = online.clone();
        Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            epsilon: config.epsilon_init,
            train_steps: 0,
            syncs: 0,
            episodes_done: 0,
            explore_rng: substream(seed, Stream::Exploration, 0),
            replay_rng: substream(seed, Stream::Replay, 0),
            ws: online.workspace(),
            target_ws: online.workspace(),
            online,
            target,
            config,
        }
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon;
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn into_network(self) -> QNetwork {
        self.online
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        let n = self.online.spec().input();
        if t.state.len() != n || t.next_state.len() != n {
            return Err(Error::Usage(format!("transition width differs from network input {n}")));
        }
        if t.action >= self.online.spec().output() {
            return Err(Error::Usage(format!("transition action {} out of range", t.action)));
        }
        self.buffer.push(t);
        Ok(())
    }

    pub fn act(&mut self, state: &[f64], epsilon: f64) -> Result<usize> {
        select_action(&self.online, state, epsilon, &mut self.explore_rng, &mut self.ws)
    }

    /// Greedy action, no exploration draw.
    pub fn greedy(&mut self, state: &[f64]) -> Result<usize> {
        Ok(argmax(self.online.forward_with(state, &mut self.ws)?))
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)?;
        self.syncs += 1;
        Ok(())
    }

    /// One minibatch update. Returns `None` while the buffer holds fewer
    /// transitions than a minibatch.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        let batch = self.config.minibatch;
        if self.buffer.len() < batch {
            return Ok(None);
        }
        let picks = index::sample(&mut self.replay_rng, self.buffer.len(), batch);
        let mut targets = Vec::with_capacity(batch);
        for i in picks.iter() {
            let t = &self.buffer.items[i];
            let y = if t.terminal {
                t.reward
            } else {
                let q = self.target.forward_with(&t.next_state, &mut self.target_ws)?;
                td_target(t.reward, false, self.config.gamma, q)
            };
            targets.push((i, y));
        }
        let lr = match self.config.batch_reduction {
            BatchReduction::Sum => self.config.learning_rate,
            BatchReduction::Mean => self.config.learning_rate / batch as f64,
        };
        let mut loss = 0.0;
        for (i, y) in targets {
            let t = &self.buffer.items[i];
            loss += self.online.sgd_step(&t.state, t.action, y, lr, &mut self.ws)?;
        }
        self.train_steps += 1;
        if self.train_steps % self.config.target_update_every == 0 {
            self.sync_target()?;
        }
        Ok(Some(match self.config.batch_reduction {
            BatchReduction::Sum => loss,
            BatchReduction::Mean => loss / batch as f64,
        }))
    }

    /// Plays one episode. Training mode explores, stores every transition,
    /// runs the configured number of updates after each push and decays
    /// epsilon at the end. Evaluation mode is greedy and writes nothing.
    pub fn run_episode(
        &mut self,
        process: &mut impl DecisionProcess,
        mode: Mode,
    ) -> Result<EpisodeSummary> {
        let epsilon = match mode {
            Mode::Train => self.epsilon,
            Mode::Eval => 0.0,
        };
        let mut summary = EpisodeSummary {
            reward: 0.0,
            decisions: 0,
            epsilon,
            loss_sum: 0.0,
            loss_count: 0,
        };
        let mut state = process.state()?;
        loop {
            let action = self.act(&state, epsilon)?;
            let (reward, done) = process.act(action)?;
            summary.reward += reward;
            summary.decisions += 1;
            let next_state = process.state()?;
            if mode == Mode::Train {
                self.remember(Transition {
                    state,
                    action,
                    reward,
                    next_state: next_state.clone(),
                    terminal: done,
                })?;
                for _ in 0..self.config.train_steps_per_decision {
                    if let Some(l) = self.train_step()? {
                        summary.loss_sum += l;
                        summary.loss_count += 1;
                    }
                }
            }
            if done {
                break;
            }
            state = next_state;
        }
        if mode == Mode::Train {
            self.epsilon = self.config.decay_epsilon(self.epsilon);
            self.episodes_done += 1;
        }
        Ok(summary)
    }
}
