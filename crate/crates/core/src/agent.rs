//! Epsilon-greedy deep Q-learning over an [`Environment`].
//!
//! The loop walks the episodes in order, replays each one `repetition`
//! times, and stores every transition in a ring-buffer memory. Once the
//! memory first fills (or holds `learn_start` transitions, when set), and
//! after every `train_every` further transitions, a training round runs
//! `updates_per_round` minibatch steps and decays epsilon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{encode_state, ActionSpace, CompositionEnv, Environment, Extents, Verdict};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Network, NetworkSpec, Optimizer, Reader};
use crate::oracle::{Choice, CompositionPlan, PlanStep, DUMMY_LABEL};
use crate::traj::UserTrajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    /// Multiplicative factor applied after each training round.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub memory_capacity: usize,
    /// Stored transitions needed before the first training round; `None`
    /// waits until the memory is full.
    pub learn_start: Option<usize>,
    pub batch_size: usize,
    /// New transitions between training rounds once training has started.
    pub train_every: usize,
    /// Minibatch steps per training round. `memory_capacity / batch_size`
    /// is one pass over the buffer.
    pub updates_per_round: usize,
    pub repetition: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    /// Rounds between target-network syncs; `None` bootstraps from the
    /// online network itself.
    pub target_sync: Option<usize>,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            memory_capacity: 1024,
            learn_start: None,
            batch_size: 32,
            train_every: 128,
            updates_per_round: 32,
            repetition: 10,
            lr: 0.001,
            hidden: vec![512, 512, 512],
            dropout: 0.5,
            target_sync: None,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Settings that learn the synthetic desk-scale scenario (200 services,
    /// 70 training users of 500 samples) within minutes on one core.
    ///
    /// Next states do not depend on the action, so the greedy policy is the
    /// same for every discount and `gamma = 0` only removes bootstrap noise.
    /// The memory holds every transition of a full run, and training starts
    /// long before it fills. A high exploration floor keeps rarely valid
    /// services sampled.
    pub fn desk_scale() -> Self {
        Self {
            gamma: 0.0,
            epsilon_decay: 0.999,
            epsilon_min: 0.6,
            memory_capacity: 700_000,
            learn_start: Some(4096),
            repetition: 20,
            hidden: vec![128, 128, 128],
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay < 1.0) {
            return bad("epsilon_decay must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_min) {
            return bad("epsilon_start and epsilon_min must lie in [0, 1]");
        }
        if self.batch_size < 1 || self.memory_capacity < self.batch_size {
            return bad("need memory_capacity >= batch_size >= 1");
        }
        if self.learn_start.is_some_and(|n| n < self.batch_size || n > self.memory_capacity) {
            return bad("learn_start must lie in [batch_size, memory_capacity]");
        }
        if self.repetition < 1 || self.train_every < 1 || self.updates_per_round < 1 {
            return bad("repetition, train_every and updates_per_round must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.target_sync == Some(0) {
            return bad("target_sync must be at least 1 when set");
        }
        Ok(())
    }

    pub fn network_spec(&self, state_dim: usize, actions: usize) -> Result<NetworkSpec> {
        NetworkSpec::new(state_dim, self.hidden.clone(), actions, self.dropout)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    buf: Vec<Experience>,
    capacity: usize,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay memory needs a positive capacity");
        Self { buf: Vec::with_capacity(capacity), capacity, next: 0 }
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, e: Experience) {
        if self.buf.len() < self.capacity {
            self.buf.push(e);
        } else {
            self.buf[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        let split = if self.is_full() { self.next } else { 0 };
        self.buf[split..].iter().chain(&self.buf[..split])
    }

    /// `n` entries drawn uniformly with replacement.
    pub fn sample<'a, R: Rng>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Experience> {
        (0..n).map(|_| &self.buf[rng.random_range(0..self.buf.len())]).collect()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Uniform random action with probability `epsilon`, else the greedy one.
/// The network is not consulted on exploration draws.
pub fn select_action<R: Rng>(net: &Network, state: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    let n = net.spec().output_dim;
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..n));
    }
    Ok(argmax(&net.predict(state)?))
}

/// Regression problem for one minibatch. Only the taken action's slot is
/// trained; `mask` is 1 there and 0 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct QTargets {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub mask: Matrix,
}

/// Bellman targets `r + gamma * max_a' Q(s', a')`, or `r` on terminal
/// transitions. Bootstraps from `target` when given, else from `net`.
pub fn q_targets(net: &Network, target: Option<&Network>, batch: &[&Experience], gamma: f64) -> Result<QTargets> {
    if batch.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    let spec = net.spec();
    let (rows, cols) = (batch.len(), spec.output_dim);
    let mut inputs = Matrix::zeros(rows, spec.input_dim);
    let mut targets = Matrix::zeros(rows, cols);
    let mut mask = Matrix::zeros(rows, cols);

    let live: Vec<usize> = (0..rows).filter(|&i| !batch[i].done).collect();
    let mut bootstrap = vec![0.0; rows];
    if !live.is_empty() && gamma != 0.0 {
        let next = Matrix::from_rows(&live.iter().map(|&i| batch[i].next_state.clone()).collect::<Vec<_>>())?;
        let q_next = target.unwrap_or(net).predict_batch(&next)?;
        for (r, &i) in live.iter().enumerate() {
            bootstrap[i] = q_next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    for (i, e) in batch.iter().enumerate() {
        if e.state.len() != spec.input_dim {
            return Err(Error::Shape { expected: spec.input_dim, got: e.state.len() });
        }
        if e.action >= cols {
            return Err(Error::invalid(format!("action {} outside {cols} outputs", e.action)));
        }
        inputs.row_mut(i).copy_from_slice(&e.state);
        targets.row_mut(i)[e.action] = e.reward + gamma * bootstrap[i];
        mask.row_mut(i)[e.action] = 1.0;
    }
    Ok(QTargets { inputs, targets, mask })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// 1-based count of episodes played, repetitions included.
    pub episode: usize,
    pub cum_reward: f64,
    /// Epsilon at the end of the episode.
    pub epsilon: f64,
    /// Mean minibatch loss of the rounds run during the episode.
    pub loss: Option<f64>,
}

pub fn write_log_csv<W: std::io::Write>(writer: W, rows: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainedNetwork {
    pub network: Network,
    pub log: Vec<LogRow>,
    pub rounds: usize,
    pub epsilon: f64,
}

/// Runs the Q-learning loop over `episodes` (indices into `env`), each
/// played `config.repetition` times in a row.
pub fn train_network<E: Environment>(env: &mut E, episodes: &[usize], config: &AgentConfig) -> Result<TrainedNetwork> {
    config.validate()?;
    if episodes.is_empty() {
        return Err(Error::invalid("no training episodes"));
    }
    let spec = config.network_spec(env.state_dim(), env.action_count())?;
    let mut net = Network::new(spec, Optimizer::adam(), config.seed)?;
    let mut target = config.target_sync.map(|_| net.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_a6e7);
    let mut memory = ReplayMemory::new(config.memory_capacity);
    let mut epsilon = config.epsilon_start;
    let mut since_round = 0usize;
    let mut rounds = 0usize;
    let mut log = Vec::with_capacity(episodes.len() * config.repetition);
    let learn_start = config.learn_start.unwrap_or(config.memory_capacity);

    for &ep in episodes {
        for _ in 0..config.repetition {
            let mut state = env.reset(ep)?;
            let mut cum_reward = 0.0;
            let mut losses = Vec::new();
            loop {
                let action = select_action(&net, &state, epsilon, &mut rng)?;
                let out = env.step(action)?;
                cum_reward += out.reward;
                let done = out.done;
                let next = out.next_state;
                memory.push(Experience { state, action, reward: out.reward, next_state: next.clone(), done });
                state = next;
                since_round += 1;
                if memory.len() >= learn_start && (rounds == 0 || since_round >= config.train_every) {
                    let mut total = 0.0;
                    for _ in 0..config.updates_per_round {
                        let batch = memory.sample(config.batch_size, &mut rng);
                        let q = q_targets(&net, target.as_ref(), &batch, config.gamma)?;
                        total += net.train_batch_masked(&q.inputs, &q.targets, &q.mask, config.lr).map_err(|e| {
                            Error::Divergence(format!(
                                "{e}; episode {}, round {}, epsilon {epsilon:.4}",
                                log.len() + 1,
                                rounds + 1
                            ))
                        })?;
                    }
                    losses.push(total / config.updates_per_round as f64);
                    rounds += 1;
                    since_round = 0;
                    epsilon = (epsilon * config.epsilon_decay).max(config.epsilon_min);
                    if let (Some(every), Some(t)) = (config.target_sync, target.as_mut()) {
                        if rounds.is_multiple_of(every) {
                            *t = net.clone();
                        }
                    }
                }
                if done {
                    break;
                }
            }
            let loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
            log.push(LogRow { episode: log.len() + 1, cum_reward, epsilon, loss });
        }
    }
    Ok(TrainedNetwork { network: net, log, rounds, epsilon })
}

/// A trained network together with what is needed to use it on new users:
/// the action labels and the state normalisation extents.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub network: Network,
    pub actions: Vec<Choice>,
    pub extents: Extents,
}

const POLICY_MAGIC: &[u8; 4] = b"CMQP";
const POLICY_VERSION: u32 = 1;

impl PolicyModel {
    pub fn new(network: Network, actions: Vec<Choice>, extents: Extents) -> Result<Self> {
        if network.spec().output_dim != actions.len() {
            return Err(Error::Shape { expected: actions.len(), got: network.spec().output_dim });
        }
        ActionSpace::from_labels(actions.clone())?;
        Ok(Self { network, actions, extents })
    }

    pub fn save(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(POLICY_MAGIC);
        out.extend_from_slice(&POLICY_VERSION.to_le_bytes());
        let e = &self.extents;
        for v in [e.t_min, e.t_max, e.x_min, e.x_max, e.y_min, e.y_max] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.actions.len() as u32).to_le_bytes());
        for a in &self.actions {
            let label = a.service_id().unwrap_or(DUMMY_LABEL).as_bytes();
            out.extend_from_slice(&(label.len() as u32).to_le_bytes());
            out.extend_from_slice(label);
        }
        out.extend_from_slice(&self.network.save());
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != POLICY_MAGIC {
            return Err(Error::Checkpoint("not a policy checkpoint".into()));
        }
        let version = r.u32()?;
        if version != POLICY_VERSION {
            return Err(Error::Checkpoint(format!("unsupported policy format version {version}")));
        }
        let mut ext = [0.0; 6];
        for v in &mut ext {
            *v = r.f64()?;
        }
        let extents = Extents { t_min: ext[0], t_max: ext[1], x_min: ext[2], x_max: ext[3], y_min: ext[4], y_max: ext[5] };
        let n = r.u32()? as usize;
        if n > bytes.len() {
            return Err(Error::Checkpoint(format!("implausible action count {n}")));
        }
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let len = r.u32()? as usize;
            let label = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint(format!("action label {i} is not UTF-8")))?;
            actions.push(if i == 0 && label == DUMMY_LABEL { Choice::Dummy } else { Choice::Service(label.to_string()) });
        }
        let network = Network::load(&bytes[r.pos..])?;
        Self::new(network, actions, extents).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Trains on every user of `env`, in order.
pub fn train(env: &mut CompositionEnv, config: &AgentConfig) -> Result<(PolicyModel, Vec<LogRow>)> {
    let episodes: Vec<usize> = (0..env.episode_count()).collect();
    let trained = train_network(env, &episodes, config)?;
    let model = PolicyModel::new(trained.network, env.actions().labels().to_vec(), *env.extents())?;
    Ok((model, trained.log))
}

/// Greedy action index for every sample of `user`.
///
/// The next state does not depend on the action taken, so all states are
/// scored in a single batched forward pass.
pub fn select_greedy(model: &PolicyModel, user: &UserTrajectory) -> Result<Vec<usize>> {
    let states: Vec<Vec<f64>> = user.trajectory.points().iter().map(|p| encode_state(p, &model.extents)).collect();
    let q = model.network.predict_batch(&Matrix::from_rows(&states)?)?;
    Ok((0..states.len()).map(|i| argmax(q.row(i))).collect())
}

/// Greedy plan for episode `episode` of `env`, with rewards and capacities
/// as the environment scores them.
pub fn compose(model: &PolicyModel, env: &mut CompositionEnv, episode: usize) -> Result<CompositionPlan> {
    if model.actions != env.actions().labels() {
        return Err(Error::Config(format!(
            "model has {} actions, environment has {}; the service universe differs",
            model.actions.len(),
            env.action_count()
        )));
    }
    if model.extents != *env.extents() {
        return Err(Error::Config("environment normalisation differs from the model's".into()));
    }
    let user = env.users().get(episode).ok_or_else(|| Error::invalid(format!("episode {episode} out of range")))?;
    let user_id = user.id.clone();
    let actions = select_greedy(model, user)?;

    env.reset(episode)?;
    let mut steps = Vec::with_capacity(actions.len());
    for action in actions {
        let timestep = env.current_timestep().expect("episode in progress");
        let out = env.step(action)?;
        let capacity = match out.verdict {
            Verdict::Valid { capacity } => capacity,
            _ => 0.0,
        };
        steps.push(PlanStep { timestep, chosen: model.actions[action].clone(), reward: out.reward, capacity });
    }
    Ok(CompositionPlan { user_id, steps })
}
