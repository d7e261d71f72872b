//! Independent reference implementations shared by the integration and
//! acceptance suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use comove::env::{StepOutcome, Verdict};
use comove::oracle::{CandidateTable, DiscoveryParams};
use comove::qos::QosParams;
use comove::traj::{DistanceMode, MovingService, Trajectory, TrajectoryPoint, UserTrajectory};
use comove::{Environment, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub services: Vec<MovingService>,
    pub user: UserTrajectory,
    pub params: DiscoveryParams,
}

fn random_path(rng: &mut ChaCha8Rng, t0: u64, t1: u64, side: f64, gap_prob: f64) -> Trajectory {
    let (mut x, mut y) = (rng.random_range(0.0..side), rng.random_range(0.0..side));
    let mut pts = Vec::new();
    for t in t0..=t1 {
        x = (x + rng.random_range(-3.0..3.0)).clamp(0.0, side);
        y = (y + rng.random_range(-3.0..3.0)).clamp(0.0, side);
        if pts.is_empty() || t == t1 || !rng.random_bool(gap_prob) {
            pts.push(TrajectoryPoint::new(t, x, y));
        }
    }
    Trajectory::new(pts).expect("ascending timesteps")
}

/// At most 20 services and 50 timesteps in a small square so that
/// candidates are common; trajectories have occasional gaps.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_end = rng.random_range(2..=50u64);
    let side = rng.random_range(20.0..80.0);
    let user = UserTrajectory::new("user:0", random_path(&mut rng, 1, t_end, side, 0.1));
    let n = rng.random_range(1..=20usize);
    let services = (0..n)
        .map(|i| {
            let a = rng.random_range(1..=t_end);
            let b = rng.random_range(a..=t_end);
            let tr = random_path(&mut rng, a, b, side, 0.15);
            let bw = rng.random_range(1.0e6..2.0e7);
            let k = rng.random_range(1..=4u32);
            MovingService::new(format!("s{i:02}"), tr, 10.0, bw, k).expect("valid service")
        })
        .collect();
    let r_s = rng.random_range(5.0..25.0);
    let params = DiscoveryParams {
        qos: QosParams::with_defaults(r_s).expect("positive radius"),
        mode: DistanceMode::PlanarEuclidean,
        min_run: rng.random_range(1..=4usize),
    };
    Instance { services, user, params }
}

/// Per `(timestep, service id)`: `(distance, strength, capacity)`.
pub type PairMap = BTreeMap<(u64, String), (f64, f64, f64)>;
pub type Runs = BTreeMap<String, Vec<(u64, u64)>>;

fn planar_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    let s = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    (p.0 - a.0 - s * dx).hypot(p.1 - a.1 - s * dy)
}

/// Scan of every (user sample, service sample) combination, planar only.
pub fn brute_force(inst: &Instance) -> (PairMap, Runs) {
    let q = &inst.params.qos;
    let r_s = q.sensing_radius_rs;
    let upts = inst.user.trajectory.points();
    let mut raw: BTreeMap<String, Vec<(u64, f64, f64, f64)>> = BTreeMap::new();
    for (ui, up) in upts.iter().enumerate() {
        for svc in &inst.services {
            for sp in svc.trajectory.points() {
                if sp.t != up.t {
                    continue;
                }
                let d = (sp.x - up.x).hypot(sp.y - up.y);
                if d >= r_s {
                    continue;
                }
                let pdis = match upts.get(ui + 1) {
                    Some(next) => planar_segment_distance((sp.x, sp.y), (up.x, up.y), (next.x, next.y)).min(d),
                    None => d,
                };
                let strength = if pdis <= q.confident_radius_rc {
                    1.0
                } else {
                    (-q.decay_k * (pdis - q.confident_radius_rc)).exp()
                };
                let cap = svc.bandwidth_b / f64::from(svc.max_concurrent_k) * (1.0 + strength).log2();
                raw.entry(svc.id.clone()).or_default().push((up.t, d, strength, cap));
            }
        }
    }
    let mut pairs = PairMap::new();
    let mut runs = Runs::new();
    for (id, mut hits) in raw {
        hits.sort_by_key(|h| h.0);
        let mut i = 0;
        while i < hits.len() {
            let mut j = i;
            while j + 1 < hits.len() && hits[j + 1].0 == hits[j].0 + 1 {
                j += 1;
            }
            if j - i + 1 >= inst.params.min_run {
                runs.entry(id.clone()).or_default().push((hits[i].0, hits[j].0));
                for h in &hits[i..=j] {
                    pairs.insert((h.0, id.clone()), (h.1, h.2, h.3));
                }
            }
            i = j + 1;
        }
    }
    (pairs, runs)
}

pub fn table_pairs(table: &CandidateTable) -> PairMap {
    table
        .per_timestep
        .iter()
        .flat_map(|(&t, v)| {
            v.iter().map(move |p| ((t, p.service_id.clone()), (p.distance, p.qos.strength, p.qos.capacity)))
        })
        .collect()
}

pub fn table_runs(table: &CandidateTable) -> Runs {
    table.validated.iter().map(|(id, rs)| (id.clone(), rs.iter().map(|r| (r.start, r.end)).collect())).collect()
}

/// Exact key equality and values within `tol` relative.
pub fn compare_pairs(got: &PairMap, want: &PairMap, tol: f64) -> std::result::Result<(), String> {
    let gk: BTreeSet<_> = got.keys().collect();
    let wk: BTreeSet<_> = want.keys().collect();
    if gk != wk {
        let missing: Vec<_> = wk.difference(&gk).take(3).collect();
        let extra: Vec<_> = gk.difference(&wk).take(3).collect();
        return Err(format!("pair sets differ: missing {missing:?}, extra {extra:?}"));
    }
    for (k, g) in got {
        let w = &want[k];
        for (a, b) in [(g.0, w.0), (g.1, w.1), (g.2, w.2)] {
            if (a - b).abs() > tol * b.abs().max(1.0) {
                return Err(format!("value mismatch at {k:?}: {g:?} vs {w:?}"));
            }
        }
    }
    Ok(())
}

/// Five-state deterministic episodic MDP. Every action either advances to
/// a higher-numbered state or exits, so episodes last at most five steps.
/// Episode `e` starts in state `e % 5`; states are one-hot encoded.
pub struct FiveState {
    cursor: Option<usize>,
}

/// `(next state or None for exit, reward)` per state and action.
pub const FIVE_STATE_TABLE: [[(Option<usize>, f64); 3]; 5] = [
    [(None, 1.0), (Some(1), 0.0), (Some(2), -1.0)],
    [(None, 0.0), (Some(2), 1.0), (Some(3), 0.0)],
    [(None, 4.0), (Some(3), -1.0), (Some(4), 0.0)],
    [(None, 0.0), (Some(4), 2.0), (None, 1.0)],
    [(None, 3.0), (None, 1.0), (None, 0.0)],
];

impl FiveState {
    pub fn new() -> Self {
        Self { cursor: None }
    }

    pub fn encode(s: usize) -> Vec<f64> {
        let mut v = vec![0.0; 5];
        v[s] = 1.0;
        v
    }
}

impl Environment for FiveState {
    fn state_dim(&self) -> usize {
        5
    }
    fn action_count(&self) -> usize {
        3
    }
    fn episode_count(&self) -> usize {
        5
    }
    fn reset(&mut self, episode: usize) -> Result<Vec<f64>> {
        self.cursor = Some(episode % 5);
        Ok(Self::encode(episode % 5))
    }
    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let s = self.cursor.ok_or_else(|| comove::Error::Protocol("step before reset".into()))?;
        let (next, reward) = FIVE_STATE_TABLE[s][action];
        self.cursor = next;
        Ok(StepOutcome {
            reward,
            next_state: next.map_or_else(|| vec![0.0; 5], Self::encode),
            done: next.is_none(),
            verdict: Verdict::Dummy,
        })
    }
}

/// Greedy policy from value iteration to a fixed point.
pub fn value_iteration(table: &[[(Option<usize>, f64); 3]; 5], gamma: f64) -> (Vec<f64>, Vec<usize>) {
    let q = |v: &[f64], s: usize, a: usize| {
        let (next, r) = table[s][a];
        r + gamma * next.map_or(0.0, |n| v[n])
    };
    let mut v = vec![0.0; 5];
    loop {
        let nv: Vec<f64> = (0..5).map(|s| (0..3).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max)).collect();
        let delta = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = nv;
        if delta < 1e-12 {
            break;
        }
    }
    let policy = (0..5)
        .map(|s| (0..3).fold(0, |best, a| if q(&v, s, a) > q(&v, s, best) { a } else { best }))
        .collect();
    (v, policy)
}
