//! Evaluation protocol: held-out accuracy against the ground truth,
//! timing of discovery, training and selection, and convergence of the
//! training reward.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentConfig, LogRow, PolicyModel};
use crate::env::{CompositionEnv, Extents, RewardScheme};
use crate::error::{Error, Result};
use crate::oracle::{self, CompositionPlan, DiscoveryParams};
use crate::scenario::{Scenario, SplitConfig};
use crate::traj::{MovingService, UserTrajectory};

/// Relative tolerance under which two capacities count as a tie.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAccuracy {
    pub user_id: String,
    pub correct_selections: usize,
    pub valid_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// `cs`: timesteps where the agent picked an optimal validated service.
    pub correct_selections: usize,
    /// `ns`: timesteps where the ground truth picked a service.
    pub valid_samples: usize,
    /// `cs / ns`; 1 when `ns` is 0.
    pub accuracy: f64,
    pub error: f64,
    pub lenient: bool,
    pub per_trajectory: Vec<TrajectoryAccuracy>,
}

impl AccuracyReport {
    fn from_parts(per_trajectory: Vec<TrajectoryAccuracy>, lenient: bool) -> Self {
        let cs = per_trajectory.iter().map(|t| t.correct_selections).sum();
        let ns = per_trajectory.iter().map(|t| t.valid_samples).sum();
        let accuracy = if ns == 0 { 1.0 } else { cs as f64 / ns as f64 };
        Self { correct_selections: cs, valid_samples: ns, accuracy, error: 1.0 - accuracy, lenient, per_trajectory }
    }

    /// Pools several reports; accuracy is recomputed from the summed counts.
    pub fn pooled(reports: impl IntoIterator<Item = AccuracyReport>) -> Self {
        let mut parts = Vec::new();
        let mut lenient = false;
        for r in reports {
            lenient |= r.lenient;
            parts.extend(r.per_trajectory);
        }
        Self::from_parts(parts, lenient)
    }
}

/// Scores `agent_plan` against `oracle_plan` step by step.
///
/// A step counts when the ground truth chose a service. It is correct when
/// the agent's choice delivered capacity equal to the ground truth's (ties
/// included) or, with `lenient`, when the agent's choice was merely a valid
/// service.
pub fn accuracy(agent_plan: &CompositionPlan, oracle_plan: &CompositionPlan, lenient: bool) -> Result<AccuracyReport> {
    if agent_plan.steps.len() != oracle_plan.steps.len()
        || agent_plan.steps.iter().zip(&oracle_plan.steps).any(|(a, o)| a.timestep != o.timestep)
    {
        return Err(Error::Protocol(format!(
            "plans for {} and {} cover different timesteps",
            agent_plan.user_id, oracle_plan.user_id
        )));
    }
    let mut cs = 0;
    let mut ns = 0;
    for (a, o) in agent_plan.steps.iter().zip(&oracle_plan.steps) {
        if o.chosen.is_dummy() {
            continue;
        }
        ns += 1;
        let hit = a.is_valid_service()
            && (lenient || (a.capacity - o.capacity).abs() <= TIE_TOLERANCE * o.capacity.abs().max(f64::MIN_POSITIVE));
        cs += usize::from(hit);
    }
    let part = TrajectoryAccuracy { user_id: oracle_plan.user_id.clone(), correct_selections: cs, valid_samples: ns };
    Ok(AccuracyReport::from_parts(vec![part], lenient))
}

/// Everything an evaluation run needs: the universe, all users, discovery
/// and reward settings, agent hyperparameters and the split.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub services: Arc<[MovingService]>,
    pub users: Vec<UserTrajectory>,
    pub params: DiscoveryParams,
    pub rewards: RewardScheme,
    pub agent: AgentConfig,
    pub split: SplitConfig,
    /// Threads for discovery and for independent sweep points.
    pub workers: usize,
}

impl Experiment {
    pub fn from_scenario(s: &Scenario, workers: usize) -> Result<Self> {
        Ok(Self {
            services: Arc::clone(&s.services),
            users: s.users.clone(),
            params: s.params()?,
            rewards: s.config.rewards(),
            agent: s.config.agent.clone(),
            split: s.config.split,
            workers: workers.max(1),
        })
    }

    /// Seeded shuffle of the users, then the first `train_fraction` of them
    /// for training and the rest held out.
    pub fn split_users(&self) -> (Vec<UserTrajectory>, Vec<UserTrajectory>) {
        let mut users = self.users.clone();
        users.shuffle(&mut ChaCha8Rng::seed_from_u64(self.split.seed));
        let n_train = ((users.len() as f64 * self.split.train_fraction).round() as usize).clamp(1, users.len());
        let test = users.split_off(n_train);
        (users, test)
    }

    /// The same experiment restricted to the first `n` services.
    pub fn with_service_count(&self, n: usize) -> Self {
        Self { services: self.services[..n.min(self.services.len())].to_vec().into(), ..self.clone() }
    }

    /// Environment over `users`, normalised by `extents`.
    pub fn env(&self, users: Vec<UserTrajectory>, extents: Extents) -> Result<CompositionEnv> {
        Ok(CompositionEnv::new(Arc::clone(&self.services), users, self.params, self.rewards, extents)?
            .with_workers(self.workers))
    }

    /// Trains on `train`; normalisation extents cover the services and the
    /// training users only.
    pub fn train(&self, train: &[UserTrajectory]) -> Result<(PolicyModel, Vec<LogRow>)> {
        let extents = Extents::of(&self.services, train).ok_or_else(|| Error::invalid("no training users"))?;
        let mut env = self.env(train.to_vec(), extents)?;
        agent::train(&mut env, &self.agent)
    }

    pub fn oracle_plan(&self, user: &UserTrajectory) -> Result<CompositionPlan> {
        let table = oracle::discover_parallel(&self.services, user, &self.params, self.workers)?;
        Ok(oracle::optimal_plan(&table, user, oracle::reward_scale(&self.services), self.rewards.dummy))
    }

    /// Agent plans for `users`, in order.
    pub fn compose_all(&self, model: &PolicyModel, users: &[UserTrajectory]) -> Result<Vec<CompositionPlan>> {
        let mut env = self.env(users.to_vec(), model.extents)?;
        (0..users.len()).map(|i| agent::compose(model, &mut env, i)).collect()
    }

    /// Pooled accuracy of `model` on `users`.
    pub fn evaluate(&self, model: &PolicyModel, users: &[UserTrajectory], lenient: bool) -> Result<AccuracyReport> {
        let plans = self.compose_all(model, users)?;
        let reports = users
            .iter()
            .zip(&plans)
            .map(|(u, p)| accuracy(p, &self.oracle_plan(u)?, lenient))
            .collect::<Result<Vec<_>>>()?;
        Ok(AccuracyReport::pooled(reports))
    }
}

/// Runs `jobs` on up to `workers` scoped threads and returns results in
/// input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(job).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&job).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Number of training trajectories.
    pub train_count: usize,
    pub test_count: usize,
    pub report: AccuracyReport,
}

/// One model per count, trained on the first `count` trajectories of the
/// training split and scored on the whole held-out split, which is the same
/// for every point.
pub fn run_accuracy_sweep(exp: &Experiment, counts: &[usize], lenient: bool) -> Result<Vec<SweepPoint>> {
    let (train, test) = exp.split_users();
    if let Some(&c) = counts.iter().find(|&&c| c == 0 || c > train.len()) {
        return Err(Error::invalid(format!("sweep count {c} outside 1..={}", train.len())));
    }
    // sweep points run side by side; each keeps discovery single-threaded
    let inner = Experiment { workers: 1, ..exp.clone() };
    parallel_map(counts, exp.workers, |&count| {
        let (model, _) = inner.train(&train[..count])?;
        let report = inner.evaluate(&model, &test, lenient)?;
        Ok(SweepPoint { train_count: count, test_count: test.len(), report })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    OracleDiscovery,
    ModelTraining,
    AgentSelection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub phase: Phase,
    /// Median of `samples`.
    pub wall_seconds: f64,
    pub samples: Vec<f64>,
    pub n_services: usize,
    pub n_users: usize,
    pub n_timesteps: usize,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn time_repeated(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    (0..repeats.max(1))
        .map(|_| {
            let start = Instant::now();
            f()?;
            Ok(start.elapsed().as_secs_f64())
        })
        .collect()
}

/// Times, for the user `probe`: ground-truth discovery plus plan
/// construction, and greedy selection of a full plan by `model`. Model
/// loading is outside the timed region.
pub fn time_selection(
    exp: &Experiment,
    model: &PolicyModel,
    probe: &UserTrajectory,
    repeats: usize,
) -> Result<(TimingReport, TimingReport)> {
    let describe = |phase, samples: Vec<f64>| TimingReport {
        phase,
        wall_seconds: median(&samples),
        samples,
        n_services: exp.services.len(),
        n_users: 1,
        n_timesteps: probe.trajectory.len(),
    };
    let oracle = time_repeated(repeats, || exp.oracle_plan(probe).map(drop))?;
    let selection = time_repeated(repeats, || agent::select_greedy(model, probe).map(drop))?;
    Ok((describe(Phase::OracleDiscovery, oracle), describe(Phase::AgentSelection, selection)))
}

/// For each service count: training time on the training split, then
/// median discovery and selection times on the first held-out user.
pub fn run_timing(exp: &Experiment, service_counts: &[usize], repeats: usize) -> Result<Vec<TimingReport>> {
    let mut out = Vec::new();
    for &n in service_counts {
        let sub = exp.with_service_count(n);
        let (train, test) = sub.split_users();
        let probe = test.first().or(train.first()).ok_or_else(|| Error::invalid("no users"))?.clone();
        let start = Instant::now();
        let (model, _) = sub.train(&train)?;
        let secs = start.elapsed().as_secs_f64();
        out.push(TimingReport {
            phase: Phase::ModelTraining,
            wall_seconds: secs,
            samples: vec![secs],
            n_services: sub.services.len(),
            n_users: train.len(),
            n_timesteps: train.iter().map(|u| u.trajectory.len()).sum(),
        });
        let (oracle, selection) = time_selection(&sub, &model, &probe, repeats)?;
        out.push(oracle);
        out.push(selection);
    }
    Ok(out)
}

/// Moving-average window, in episodes.
pub const CONVERGENCE_WINDOW: usize = 20;
/// Episodes averaged for the reference final value.
pub const CONVERGENCE_TAIL: usize = 50;
/// Relative half-width of the band around the final value.
pub const CONVERGENCE_BAND: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub episode: usize,
    pub moving_average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_services: usize,
    pub series: Vec<ConvergencePoint>,
    /// First episode from which the moving average stays inside the band.
    pub convergence_round: Option<usize>,
    /// Mean cumulative reward of the last episodes.
    pub final_mean: f64,
    /// Mean cumulative reward the ground-truth plans earn on the same
    /// episodes.
    pub oracle_mean_reward: f64,
    pub train_seconds: f64,
}

/// Moving average of `rewards` and the episode (1-based) from which it
/// stays within `band * |final|` of the mean of the last `tail` values.
pub fn detect_convergence(rewards: &[f64], window: usize, tail: usize, band: f64) -> (Vec<ConvergencePoint>, Option<usize>, f64) {
    if rewards.is_empty() || window == 0 {
        return (Vec::new(), None, 0.0);
    }
    let w = window.min(rewards.len());
    let mut series = Vec::with_capacity(rewards.len() + 1 - w);
    let mut sum: f64 = rewards[..w].iter().sum();
    series.push(ConvergencePoint { episode: w, moving_average: sum / w as f64 });
    for i in w..rewards.len() {
        sum += rewards[i] - rewards[i - w];
        series.push(ConvergencePoint { episode: i + 1, moving_average: sum / w as f64 });
    }
    let t = tail.clamp(1, rewards.len());
    let final_mean = rewards[rewards.len() - t..].iter().sum::<f64>() / t as f64;
    let tol = band * final_mean.abs();
    let mut round = None;
    for p in series.iter().rev() {
        if (p.moving_average - final_mean).abs() <= tol {
            round = Some(p.episode);
        } else {
            break;
        }
    }
    (series, round, final_mean)
}

/// Trains one model per service count and reports how quickly the
/// training reward settles.
pub fn run_convergence(exp: &Experiment, service_counts: &[usize]) -> Result<Vec<ConvergenceReport>> {
    let inner = Experiment { workers: 1, ..exp.clone() };
    parallel_map(service_counts, exp.workers, |&n| {
        let sub = inner.with_service_count(n);
        let (train, _) = sub.split_users();
        let start = Instant::now();
        let (_, log) = sub.train(&train)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let rewards: Vec<f64> = log.iter().map(|r| r.cum_reward).collect();
        let (series, convergence_round, final_mean) =
            detect_convergence(&rewards, CONVERGENCE_WINDOW, CONVERGENCE_TAIL, CONVERGENCE_BAND);
        let per_user = train.iter().map(|u| Ok(sub.oracle_plan(u)?.total_reward())).collect::<Result<Vec<f64>>>()?;
        let oracle_mean_reward = per_user.iter().sum::<f64>() / per_user.len() as f64;
        Ok(ConvergenceReport { n_services: sub.services.len(), series, convergence_round, final_mean, oracle_mean_reward, train_seconds })
    })
    .into_iter()
    .collect()
}
