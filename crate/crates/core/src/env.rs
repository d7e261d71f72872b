//! The composition environment: states are the samples of one user
//! trajectory, actions are the service universe plus a dummy service.
//!
//! Rewards: a validated candidate covering the current timestep earns its
//! capacity normalised into (0, 1]; the dummy earns `-1`; anything else is an
//! invalid selection and earns `-10`. Validity is decided by the same
//! discovery pipeline the ground truth uses.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{self, Choice, DiscoveryParams, DUMMY_LABEL};
use crate::traj::{MovingService, Timestep, TrajectoryPoint, UserTrajectory};

/// Anything an agent can be trained against.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Number of distinct episodes (e.g. user trajectories) available.
    fn episode_count(&self) -> usize;
    /// Starts episode `episode` and returns its initial state.
    fn reset(&mut self, episode: usize) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Valid { capacity: f64 },
    Dummy,
    Invalid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardScheme {
    pub dummy: f64,
    pub invalid: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        Self { dummy: -1.0, invalid: -10.0 }
    }
}

/// Bounding box and time span used for min-max state normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extents {
    pub t_min: f64,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extents {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a TrajectoryPoint>) -> Option<Self> {
        let mut it = points.into_iter();
        let p = it.next()?;
        let mut e = Extents { t_min: p.t as f64, t_max: p.t as f64, x_min: p.x, x_max: p.x, y_min: p.y, y_max: p.y };
        for p in it {
            e.t_min = e.t_min.min(p.t as f64);
            e.t_max = e.t_max.max(p.t as f64);
            e.x_min = e.x_min.min(p.x);
            e.x_max = e.x_max.max(p.x);
            e.y_min = e.y_min.min(p.y);
            e.y_max = e.y_max.max(p.y);
        }
        Some(e)
    }

    /// Extents over a service universe and a set of users.
    pub fn of(services: &[MovingService], users: &[UserTrajectory]) -> Option<Self> {
        Self::from_points(
            services
                .iter()
                .flat_map(|s| s.trajectory.points())
                .chain(users.iter().flat_map(|u| u.trajectory.points())),
        )
    }
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// `[t, x, y]` min-max normalised against `extents`.
pub fn encode_state(sample: &TrajectoryPoint, extents: &Extents) -> Vec<f64> {
    vec![
        unit(sample.t as f64, extents.t_min, extents.t_max),
        unit(sample.x, extents.x_min, extents.x_max),
        unit(sample.y, extents.y_min, extents.y_max),
    ]
}

pub const STATE_DIM: usize = 3;

/// Fixed mapping between action indices and choices. Index 0 is the dummy;
/// services follow in universe order.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpace {
    labels: Vec<Choice>,
    index: HashMap<String, usize>,
}

impl ActionSpace {
    pub fn new(services: &[MovingService]) -> Result<Self> {
        Self::from_labels(
            std::iter::once(Choice::Dummy)
                .chain(services.iter().map(|s| Choice::Service(s.id.clone())))
                .collect(),
        )
    }

    pub fn from_labels(labels: Vec<Choice>) -> Result<Self> {
        if labels.first() != Some(&Choice::Dummy) || labels[1..].iter().any(Choice::is_dummy) {
            return Err(Error::Config("action space must start with the single dummy action".into()));
        }
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate().skip(1) {
            let id = l.service_id().unwrap_or(DUMMY_LABEL).to_string();
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate service id {id}")));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> &[Choice] {
        &self.labels
    }

    pub fn label(&self, action: usize) -> Option<&Choice> {
        self.labels.get(action)
    }

    pub fn index_of(&self, service_id: &str) -> Option<usize> {
        self.index.get(service_id).copied()
    }
}

/// Validated candidates of one user: per sample, `(action, capacity)`.
type StepLookup = Vec<Vec<(usize, f64)>>;

/// Environment over a fixed service universe and a list of users, one
/// episode per user.
pub struct CompositionEnv {
    services: Arc<[MovingService]>,
    actions: ActionSpace,
    users: Vec<UserTrajectory>,
    params: DiscoveryParams,
    rewards: RewardScheme,
    reward_scale: f64,
    extents: Extents,
    workers: usize,
    lookups: Vec<Option<Arc<StepLookup>>>,
    current: Option<(usize, Arc<StepLookup>)>,
    cursor: usize,
}

impl CompositionEnv {
    pub fn new(
        services: Arc<[MovingService]>,
        users: Vec<UserTrajectory>,
        params: DiscoveryParams,
        rewards: RewardScheme,
        extents: Extents,
    ) -> Result<Self> {
        let actions = ActionSpace::new(&services)?;
        let reward_scale = oracle::reward_scale(&services);
        let lookups = vec![None; users.len()];
        Ok(Self {
            services,
            actions,
            users,
            params,
            rewards,
            reward_scale,
            extents,
            workers: 1,
            lookups,
            current: None,
            cursor: 0,
        })
    }

    /// Threads used when discovering a user's candidates on first reset.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn extents(&self) -> &Extents {
        &self.extents
    }

    pub fn users(&self) -> &[UserTrajectory] {
        &self.users
    }

    pub fn services(&self) -> &Arc<[MovingService]> {
        &self.services
    }

    pub fn params(&self) -> &DiscoveryParams {
        &self.params
    }

    pub fn rewards(&self) -> &RewardScheme {
        &self.rewards
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    /// Timestep of the sample the environment is currently positioned on.
    pub fn current_timestep(&self) -> Option<Timestep> {
        let (u, _) = self.current.as_ref()?;
        self.users[*u].trajectory.points().get(self.cursor).map(|p| p.t)
    }

    fn lookup_for(&mut self, user: usize) -> Result<Arc<StepLookup>> {
        if let Some(l) = &self.lookups[user] {
            return Ok(Arc::clone(l));
        }
        let u = &self.users[user];
        let table = oracle::discover_parallel(&self.services, u, &self.params, self.workers)?;
        let lookup: StepLookup = u
            .trajectory
            .points()
            .iter()
            .map(|p| {
                table
                    .candidates_at(p.t)
                    .iter()
                    .filter_map(|c| self.actions.index_of(&c.service_id).map(|a| (a, c.qos.capacity)))
                    .collect()
            })
            .collect();
        let lookup = Arc::new(lookup);
        self.lookups[user] = Some(Arc::clone(&lookup));
        Ok(lookup)
    }

    fn encode_cursor(&self, user: usize) -> Vec<f64> {
        let pts = self.users[user].trajectory.points();
        encode_state(&pts[self.cursor.min(pts.len() - 1)], &self.extents)
    }
}

impl Environment for CompositionEnv {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_count(&self) -> usize {
        self.actions.len()
    }

    fn episode_count(&self) -> usize {
        self.users.len()
    }

    fn reset(&mut self, episode: usize) -> Result<Vec<f64>> {
        if episode >= self.users.len() {
            return Err(Error::invalid(format!("episode {episode} out of {} users", self.users.len())));
        }
        let lookup = self.lookup_for(episode)?;
        self.current = Some((episode, lookup));
        self.cursor = 0;
        Ok(self.encode_cursor(episode))
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let (user, lookup) = self
            .current
            .as_ref()
            .map(|(u, l)| (*u, Arc::clone(l)))
            .ok_or_else(|| Error::Protocol("step called before reset".into()))?;
        let len = self.users[user].trajectory.len();
        if self.cursor >= len {
            return Err(Error::Protocol("step called after the episode finished".into()));
        }
        if action >= self.actions.len() {
            return Err(Error::invalid(format!("action {action} outside action space of {}", self.actions.len())));
        }
        let (reward, verdict) = if action == 0 {
            (self.rewards.dummy, Verdict::Dummy)
        } else {
            match lookup[self.cursor].iter().find(|(a, _)| *a == action) {
                Some(&(_, capacity)) => (capacity / self.reward_scale, Verdict::Valid { capacity }),
                None => (self.rewards.invalid, Verdict::Invalid),
            }
        };
        self.cursor += 1;
        let done = self.cursor >= len;
        Ok(StepOutcome { reward, next_state: self.encode_cursor(user), done, verdict })
    }
}
