//! Ground-truth discovery of co-moving services.
//!
//! A scan-based map-reduce with no spatial index:
//!
//! 1. temporal map: left outer join of the user's timesteps with every
//!    service sample carrying the same timestep;
//! 2. spatial map: keep pairs strictly inside the search disk and score them;
//! 3. reduce: group by timestep, keep services paired over at least `w`
//!    consecutive timesteps.
//!
//! The map phases run over contiguous chunks of user timesteps on scoped
//! threads. Validation runs once after the merge because runs cross chunk
//! boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qos::{self, QosParams, QosValue};
use crate::traj::{distance, DistanceMode, MovingService, Timestep, TrajectoryPoint, UserTrajectory};

/// Reserved label of the dummy service in plans and on the wire.
pub const DUMMY_LABEL: &str = "DUMMY";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryParams {
    pub qos: QosParams,
    pub mode: DistanceMode,
    /// Minimum number of consecutive paired timesteps.
    pub min_run: usize,
}

impl DiscoveryParams {
    pub fn search_radius(&self) -> f64 {
        self.qos.sensing_radius_rs
    }
}

/// A service sample matched to a user timestep by the temporal join.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JoinedSample {
    /// Index into the service universe.
    pub service: usize,
    pub point: TrajectoryPoint,
}

pub type TemporalJoin = BTreeMap<Timestep, Vec<JoinedSample>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialCandidatePair {
    pub user_timestep: Timestep,
    pub service_id: String,
    pub distance: f64,
    pub qos: QosValue,
}

/// Inclusive range of consecutive timesteps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: Timestep,
    pub end: Timestep,
}

impl Run {
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: Timestep) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateTable {
    /// Surviving pairs per timestep, sorted by service id.
    pub per_timestep: BTreeMap<Timestep, Vec<SpatialCandidatePair>>,
    /// Maximal consecutive runs per service, each at least `w` long.
    pub validated: BTreeMap<String, Vec<Run>>,
}

impl CandidateTable {
    pub fn candidates_at(&self, t: Timestep) -> &[SpatialCandidatePair] {
        self.per_timestep.get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn pair_count(&self) -> usize {
        self.per_timestep.values().map(Vec::len).sum()
    }

    /// Candidate with the highest capacity at `t`; ties go to the smallest id.
    pub fn best_at(&self, t: Timestep) -> Option<&SpatialCandidatePair> {
        let mut best: Option<&SpatialCandidatePair> = None;
        for c in self.candidates_at(t) {
            if best.is_none_or(|b| c.qos.capacity > b.qos.capacity) {
                best = Some(c);
            }
        }
        best
    }
}

/// A selected action in a plan.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Choice {
    Service(String),
    Dummy,
}

impl Choice {
    pub fn service_id(&self) -> Option<&str> {
        match self {
            Choice::Service(id) => Some(id),
            Choice::Dummy => None,
        }
    }

    pub fn is_dummy(&self) -> bool {
        matches!(self, Choice::Dummy)
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.service_id().unwrap_or(DUMMY_LABEL))
    }
}

impl Serialize for Choice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Choice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == DUMMY_LABEL { Choice::Dummy } else { Choice::Service(s) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub timestep: Timestep,
    pub chosen: Choice,
    pub reward: f64,
    /// Bits per second; zero for dummy and invalid selections.
    pub capacity: f64,
}

impl PlanStep {
    /// True when the chosen service actually delivered capacity here.
    pub fn is_valid_service(&self) -> bool {
        !self.chosen.is_dummy() && self.capacity > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionPlan {
    pub user_id: String,
    pub steps: Vec<PlanStep>,
}

impl CompositionPlan {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn total_capacity(&self) -> f64 {
        self.steps.iter().map(|s| s.capacity).sum()
    }

    /// Mean capacity over valid service steps.
    pub fn composite_qos(&self) -> Result<f64> {
        let caps: Vec<f64> = self.steps.iter().filter(|s| s.is_valid_service()).map(|s| s.capacity).collect();
        qos::composite_qos(&caps)
    }
}

/// Largest `B / K` in the universe; dividing a capacity by it maps rewards
/// into (0, 1] since `log2(1 + strength) <= 1`.
pub fn reward_scale(services: &[MovingService]) -> f64 {
    services
        .iter()
        .map(MovingService::bandwidth_share)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
}

/// Temporal map over the whole user trajectory.
pub fn temporal_map(services: &[MovingService], user: &UserTrajectory) -> TemporalJoin {
    temporal_map_chunk(services, user.trajectory.points())
}

/// Sort-merge join of each service's samples against a slice of user
/// samples; timesteps with no service sample map to an empty list.
fn temporal_map_chunk(services: &[MovingService], user_pts: &[TrajectoryPoint]) -> TemporalJoin {
    let mut out: TemporalJoin = user_pts.iter().map(|p| (p.t, Vec::new())).collect();
    let (Some(lo), Some(hi)) = (user_pts.first().map(|p| p.t), user_pts.last().map(|p| p.t)) else {
        return out;
    };
    for (idx, svc) in services.iter().enumerate() {
        let pts = svc.trajectory.points();
        let (s_lo, s_hi) = svc.trajectory.span();
        if s_hi < lo || s_lo > hi {
            continue;
        }
        let mut i = pts.partition_point(|p| p.t < lo);
        let mut j = user_pts.partition_point(|p| p.t < pts[i].t);
        while i < pts.len() && j < user_pts.len() {
            let (st, ut) = (pts[i].t, user_pts[j].t);
            if st == ut {
                if let Some(v) = out.get_mut(&ut) {
                    v.push(JoinedSample { service: idx, point: pts[i] });
                }
                i += 1;
                j += 1;
            } else if st < ut {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    out
}

/// Keeps joined samples strictly inside the search disk and attaches QoS.
pub fn spatial_map(
    joined: &TemporalJoin,
    user: &UserTrajectory,
    services: &[MovingService],
    params: &DiscoveryParams,
) -> Result<Vec<SpatialCandidatePair>> {
    let r_s = params.search_radius();
    let mut pairs = Vec::new();
    for (&t, samples) in joined {
        let user_pt = user
            .trajectory
            .sample_at(t)
            .ok_or_else(|| Error::OutOfRange(format!("joined timestep {t} not in user trajectory")))?;
        for s in samples {
            let d = distance(user_pt.coord(), s.point.coord(), params.mode)?;
            if d < r_s {
                let svc = &services[s.service];
                let pdis = qos::perpendicular_distance(s.point.coord(), &user.trajectory, t, params.mode)?;
                let strength = qos::strength(pdis, &params.qos)?;
                debug_assert!(strength > 0.0 && strength <= 1.0);
                let capacity = qos::capacity(strength, svc.bandwidth_b, svc.max_concurrent_k);
                pairs.push(SpatialCandidatePair {
                    user_timestep: t,
                    service_id: svc.id.clone(),
                    distance: d,
                    qos: QosValue { strength, capacity },
                });
            }
        }
    }
    Ok(pairs)
}

/// Groups pairs by timestep and keeps only services paired over at least
/// `w` consecutive timesteps.
pub fn reduce_validate(pairs: Vec<SpatialCandidatePair>, w: usize) -> Result<CandidateTable> {
    if w < 1 {
        return Err(Error::invalid("minimum run length w must be at least 1"));
    }
    let mut by_service: BTreeMap<String, Vec<SpatialCandidatePair>> = BTreeMap::new();
    for p in pairs {
        by_service.entry(p.service_id.clone()).or_default().push(p);
    }
    let mut table = CandidateTable::default();
    for (id, mut ps) in by_service {
        ps.sort_by_key(|p| p.user_timestep);
        let mut runs = Vec::new();
        let mut start = 0usize;
        for i in 1..=ps.len() {
            let breaks = i == ps.len() || ps[i].user_timestep != ps[i - 1].user_timestep + 1;
            if breaks {
                if i - start >= w {
                    runs.push(Run { start: ps[start].user_timestep, end: ps[i - 1].user_timestep });
                    for p in &ps[start..i] {
                        table.per_timestep.entry(p.user_timestep).or_default().push(p.clone());
                    }
                }
                start = i;
            }
        }
        if !runs.is_empty() {
            table.validated.insert(id, runs);
        }
    }
    // ids were visited in sorted order, so each timestep list is already sorted
    Ok(table)
}

/// Per-timestep argmax over validated candidates; dummy where none exists.
pub fn optimal_plan(
    table: &CandidateTable,
    user: &UserTrajectory,
    reward_scale: f64,
    dummy_reward: f64,
) -> CompositionPlan {
    let steps = user
        .trajectory
        .points()
        .iter()
        .map(|p| match table.best_at(p.t) {
            Some(best) => PlanStep {
                timestep: p.t,
                chosen: Choice::Service(best.service_id.clone()),
                reward: best.qos.capacity / reward_scale,
                capacity: best.qos.capacity,
            },
            None => PlanStep { timestep: p.t, chosen: Choice::Dummy, reward: dummy_reward, capacity: 0.0 },
        })
        .collect();
    CompositionPlan { user_id: user.id.clone(), steps }
}

/// Full discovery with the map phase spread over `workers` threads.
/// The result does not depend on `workers`.
pub fn discover_parallel(
    services: &[MovingService],
    user: &UserTrajectory,
    params: &DiscoveryParams,
    workers: usize,
) -> Result<CandidateTable> {
    if workers < 1 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    let pts = user.trajectory.points();
    let chunk = pts.len().div_ceil(workers).max(1);
    let pairs = if workers == 1 || pts.len() <= 1 {
        spatial_map(&temporal_map_chunk(services, pts), user, services, params)?
    } else {
        let parts: Vec<Result<Vec<SpatialCandidatePair>>> = thread::scope(|scope| {
            let handles: Vec<_> = pts
                .chunks(chunk)
                .map(|c| scope.spawn(move || spatial_map(&temporal_map_chunk(services, c), user, services, params)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("discovery worker panicked")).collect()
        });
        let mut merged = Vec::new();
        for part in parts {
            merged.extend(part?);
        }
        merged
    };
    reduce_validate(pairs, params.min_run)
}

pub fn discover(services: &[MovingService], user: &UserTrajectory, params: &DiscoveryParams) -> Result<CandidateTable> {
    discover_parallel(services, user, params, 1)
}

/// One line of the discovery JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub timestep: Timestep,
    pub candidates: Vec<CandidateRecord>,
    pub chosen: Choice,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub service_id: String,
    pub distance_m: f64,
    pub strength: f64,
    pub capacity_bps: f64,
}

pub fn step_records(table: &CandidateTable, plan: &CompositionPlan) -> Vec<StepRecord> {
    plan.steps
        .iter()
        .map(|s| StepRecord {
            timestep: s.timestep,
            candidates: table
                .candidates_at(s.timestep)
                .iter()
                .map(|c| CandidateRecord {
                    service_id: c.service_id.clone(),
                    distance_m: c.distance,
                    strength: c.qos.strength,
                    capacity_bps: c.qos.capacity,
                })
                .collect(),
            chosen: s.chosen.clone(),
        })
        .collect()
}
