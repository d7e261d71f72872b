//! Synthetic scenarios and ingestion of raw trajectory datasets into the
//! canonical `id,t,x,y` form.

use std::collections::HashMap;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{
    resample, DistanceMode, MovingService, TimedSample, Timestep, Trajectory, TrajectoryPoint, UserTrajectory,
    USER_ID_PREFIX,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityModel {
    RandomWaypoint,
    /// Users walk in small groups along random routes; a share of the
    /// services rides along with a group for a stretch of time.
    CorridorFlow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_services: usize,
    pub n_users: usize,
    pub area: Area,
    pub timestep_count: u64,
    /// Metres per timestep, `[min, max]`.
    pub speed_range: [f64; 2],
    pub seed: u64,
    pub mobility_model: MobilityModel,
    pub coverage_radius: f64,
    /// Bits per second, `[min, max]`.
    pub bandwidth_range: [f64; 2],
    /// Inclusive range of `K`.
    pub max_concurrent_range: [u32; 2],
    /// Users per group (corridor flow). User `i` joins group
    /// `i mod ceil(n_users / group_size)`.
    pub group_size: usize,
    /// Share of services that ride along with a user group (corridor flow).
    pub co_route_fraction: f64,
    /// Largest distance between any two members of a group, services
    /// included (corridor flow).
    pub jitter: f64,
    /// Confine each group's route to its own cell of a near-square grid
    /// over the area (corridor flow).
    pub partition_routes: bool,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_services: 200,
            n_users: 100,
            area: Area { x_min: 0.0, x_max: 1000.0, y_min: 0.0, y_max: 1000.0 },
            timestep_count: 500,
            speed_range: [0.8, 1.5],
            seed: 7,
            mobility_model: MobilityModel::CorridorFlow,
            coverage_radius: 20.0,
            bandwidth_range: [1.0e6, 2.0e7],
            max_concurrent_range: [1, 8],
            group_size: 5,
            co_route_fraction: 0.1,
            jitter: 4.0,
            partition_routes: true,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let a = &self.area;
        let ok = self.n_users > 0
            && self.timestep_count > 0
            && a.x_max >= a.x_min
            && a.y_max >= a.y_min
            && self.speed_range[0] >= 0.0
            && self.speed_range[1] >= self.speed_range[0]
            && self.coverage_radius > 0.0
            && self.bandwidth_range[0] > 0.0
            && self.bandwidth_range[1] >= self.bandwidth_range[0]
            && self.max_concurrent_range[0] >= 1
            && self.max_concurrent_range[1] >= self.max_concurrent_range[0]
            && self.group_size >= 1
            && (0.0..=1.0).contains(&self.co_route_fraction)
            && self.jitter >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("scenario spec has an empty or inverted range"))
        }
    }
}

/// Piecewise-straight motion between random waypoints at random speeds,
/// sampled on `t_start..=t_end`.
fn random_waypoint(rng: &mut ChaCha8Rng, area: &Area, speed: [f64; 2], t_start: u64, t_end: u64) -> Vec<(f64, f64)> {
    let point = |rng: &mut ChaCha8Rng| (uniform(rng, area.x_min, area.x_max), uniform(rng, area.y_min, area.y_max));
    let mut pos = point(rng);
    let mut goal = point(rng);
    let mut v = uniform(rng, speed[0], speed[1]);
    let mut out = Vec::with_capacity((t_end - t_start + 1) as usize);
    for _ in t_start..=t_end {
        out.push(pos);
        let mut budget = v;
        while budget > 0.0 {
            let (dx, dy) = (goal.0 - pos.0, goal.1 - pos.1);
            let d = dx.hypot(dy);
            if d > budget {
                pos = (pos.0 + dx / d * budget, pos.1 + dy / d * budget);
                break;
            }
            pos = goal;
            budget -= d;
            goal = point(rng);
            v = uniform(rng, speed[0], speed[1]);
        }
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// A point uniformly distributed in the disk of radius `r`.
fn disk_offset(rng: &mut ChaCha8Rng, r: f64) -> (f64, f64) {
    if r <= 0.0 {
        return (0.0, 0.0);
    }
    let rho = r * rng.random::<f64>().sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    (rho * phi.cos(), rho * phi.sin())
}

fn to_trajectory(t_start: u64, xy: &[(f64, f64)]) -> Result<Trajectory> {
    Trajectory::new(xy.iter().enumerate().map(|(i, &(x, y))| TrajectoryPoint::new(t_start + i as u64, x, y)).collect())
}

fn service_id(i: usize) -> String {
    format!("s{i:04}")
}

fn user_id(i: usize) -> String {
    format!("{USER_ID_PREFIX}{i:04}")
}

fn qos_draw(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> (f64, u32) {
    let b = uniform(rng, spec.bandwidth_range[0], spec.bandwidth_range[1]);
    let k = rng.random_range(spec.max_concurrent_range[0]..=spec.max_concurrent_range[1]);
    (b, k)
}

/// Seeded scenario on the timestep grid `1..=timestep_count`.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<MovingService>, Vec<UserTrajectory>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let t_end = spec.timestep_count;
    match spec.mobility_model {
        MobilityModel::RandomWaypoint => {
            let mut users = Vec::with_capacity(spec.n_users);
            for i in 0..spec.n_users {
                let xy = random_waypoint(&mut rng, &spec.area, spec.speed_range, 1, t_end);
                users.push(UserTrajectory::new(user_id(i), to_trajectory(1, &xy)?));
            }
            let mut services = Vec::with_capacity(spec.n_services);
            for i in 0..spec.n_services {
                let xy = random_waypoint(&mut rng, &spec.area, spec.speed_range, 1, t_end);
                let (b, k) = qos_draw(&mut rng, spec);
                services.push(MovingService::new(service_id(i), to_trajectory(1, &xy)?, spec.coverage_radius, b, k)?);
            }
            Ok((services, users))
        }
        MobilityModel::CorridorFlow => corridor_flow(spec, &mut rng),
    }
}

fn corridor_flow(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<MovingService>, Vec<UserTrajectory>)> {
    let t_end = spec.timestep_count;
    let n_groups = spec.n_users.div_ceil(spec.group_size);
    // Group centres keep clear of the border by half the jitter so that
    // members stay inside the area.
    let h = spec.jitter / 2.0;
    let inner = Area {
        x_min: spec.area.x_min + h.min((spec.area.x_max - spec.area.x_min) / 2.0),
        x_max: spec.area.x_max - h.min((spec.area.x_max - spec.area.x_min) / 2.0),
        y_min: spec.area.y_min + h.min((spec.area.y_max - spec.area.y_min) / 2.0),
        y_max: spec.area.y_max - h.min((spec.area.y_max - spec.area.y_min) / 2.0),
    };
    let routes: Vec<Vec<(f64, f64)>> = (0..n_groups)
        .map(|g| {
            let cell = if spec.partition_routes { grid_cell(&inner, n_groups, g) } else { inner };
            random_waypoint(rng, &cell, spec.speed_range, 1, t_end)
        })
        .collect();

    let mut users = Vec::with_capacity(spec.n_users);
    for i in 0..spec.n_users {
        let route = &routes[i % n_groups];
        let (ox, oy) = disk_offset(rng, h);
        let xy: Vec<(f64, f64)> = route.iter().map(|&(x, y)| (x + ox, y + oy)).collect();
        users.push(UserTrajectory::new(user_id(i), to_trajectory(1, &xy)?));
    }

    let n_co = (spec.co_route_fraction * spec.n_services as f64).round() as usize;
    let mut per_group = vec![0usize; n_groups];
    for i in 0..n_co {
        per_group[i % n_groups] += 1;
    }
    let mut slot = vec![0usize; n_groups];
    let mut services = Vec::with_capacity(spec.n_services);
    for i in 0..spec.n_services {
        let (b, k) = qos_draw(rng, spec);
        let (t0, xy) = if i < n_co {
            let g = i % n_groups;
            let (t0, t1) = window(t_end, per_group[g], slot[g]);
            slot[g] += 1;
            let (ox, oy) = disk_offset(rng, h);
            let xy = routes[g][(t0 - 1) as usize..t1 as usize].iter().map(|&(x, y)| (x + ox, y + oy)).collect();
            (t0, xy)
        } else {
            (1, random_waypoint(rng, &spec.area, spec.speed_range, 1, t_end))
        };
        services.push(MovingService::new(service_id(i), to_trajectory(t0, &xy)?, spec.coverage_radius, b, k)?);
    }
    Ok((services, users))
}

/// Cell `index` of a grid of `count` cells, `ceil(sqrt(count))` columns wide,
/// filled row by row.
fn grid_cell(area: &Area, count: usize, index: usize) -> Area {
    let cols = (count as f64).sqrt().ceil().max(1.0) as usize;
    let rows = count.div_ceil(cols);
    let (w, h) = ((area.x_max - area.x_min) / cols as f64, (area.y_max - area.y_min) / rows as f64);
    let (c, r) = ((index % cols) as f64, (index / cols) as f64);
    Area { x_min: area.x_min + c * w, x_max: area.x_min + (c + 1.0) * w, y_min: area.y_min + r * h, y_max: area.y_min + (r + 1.0) * h }
}

/// Time window of the `slot`-th of `count` services riding with one group.
/// Windows tile `1..=t_end` and each overlaps its neighbours by half a tile.
fn window(t_end: u64, count: usize, slot: usize) -> (u64, u64) {
    let len = t_end as f64 / count as f64;
    let start = (slot as f64 * len - len / 2.0).floor().max(0.0) as u64 + 1;
    let end = (((slot + 1) as f64 * len + len / 2.0).ceil() as u64).min(t_end);
    (start, end.max(start))
}

/// Summary written next to canonical CSV outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub distance_mode: DistanceMode,
    pub extents: crate::env::Extents,
    pub n_services: usize,
    pub n_users: usize,
    pub n_samples: usize,
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn describe(
        services: &[MovingService],
        users: &[UserTrajectory],
        mode: DistanceMode,
        seed: Option<u64>,
    ) -> Result<Self> {
        let extents = crate::env::Extents::of(services, users)
            .ok_or_else(|| Error::invalid("no trajectories to describe"))?;
        let n_samples = services.iter().map(|s| s.trajectory.len()).sum::<usize>()
            + users.iter().map(|u| u.trajectory.len()).sum::<usize>();
        Ok(Self { distance_mode: mode, extents, n_services: services.len(), n_users: users.len(), n_samples, seed })
    }
}

/// Trajectories read from a raw dataset, before the user/service split.
#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub trajectories: Vec<(String, Trajectory)>,
    pub mode: DistanceMode,
    /// Rows that could not be parsed.
    pub skipped_rows: usize,
    /// Trajectories dropped, with the reason.
    pub rejected: Vec<(String, String)>,
}

/// `(id, time, x, y)` as read, before grouping.
type RawRow = (String, f64, f64, f64);
/// Samples of one id in file order.
type RawGroup = (String, Vec<(f64, f64, f64)>);

fn raw_rows<R: Read>(reader: R) -> Result<(Vec<RawRow>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    let mut skipped = 0;
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            skipped += 1;
            continue;
        };
        let parsed = (|| {
            let id = rec.get(0)?.to_string();
            let t = rec.get(1)?.parse::<f64>().ok()?;
            let x = rec.get(2)?.parse::<f64>().ok()?;
            let y = rec.get(3)?.parse::<f64>().ok()?;
            (!id.is_empty() && t.is_finite() && x.is_finite() && y.is_finite()).then_some((id, t, x, y))
        })();
        match parsed {
            Some(r) => rows.push(r),
            None => skipped += 1,
        }
    }
    Ok((rows, skipped))
}

fn group_in_order(rows: Vec<RawRow>) -> Vec<RawGroup> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<RawGroup> = Vec::new();
    for (id, t, x, y) in rows {
        let i = *index.entry(id.clone()).or_insert_with(|| {
            groups.push((id, Vec::new()));
            groups.len() - 1
        });
        groups[i].1.push((t, x, y));
    }
    groups
}

/// Indoor tracking rows `person_id,wall_clock_seconds,x,y` (planar metres).
///
/// Every person is resampled at `rate` seconds onto one grid anchored at the
/// earliest timestamp in the file, so timestep 1 is the same instant for
/// everybody. Rows of one person may appear in any order; gaps are filled by
/// linear interpolation.
pub fn ingest_indoor<R: Read>(reader: R, rate: f64) -> Result<Ingested> {
    if !(rate > 0.0) {
        return Err(Error::invalid(format!("sampling rate must be positive, got {rate}")));
    }
    let (rows, skipped_rows) = raw_rows(reader)?;
    if rows.is_empty() {
        return Err(Error::invalid("no parseable rows in indoor file"));
    }
    let origin = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let mut trajectories = Vec::new();
    let mut rejected = Vec::new();
    for (id, mut pts) in group_in_order(rows) {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|b, a| a.0 == b.0);
        let samples: Vec<TimedSample> = pts.iter().map(|&(time, x, y)| TimedSample { time, x, y }).collect();
        match resample(&samples, rate, origin) {
            Ok(tr) => trajectories.push((id, tr)),
            Err(e) => rejected.push((id, e.to_string())),
        }
    }
    Ok(Ingested { trajectories, mode: DistanceMode::PlanarEuclidean, skipped_rows, rejected })
}

/// GPS rows `trip_id,epoch_seconds,lon,lat` sampled once per second.
///
/// Timesteps are `epoch - earliest_epoch_in_file + 1`, so trips recorded at
/// the same instant share timesteps. A trip whose timestamps are not strictly
/// increasing in file order, are fractional, or whose coordinates are out of
/// range is rejected.
pub fn ingest_gps<R: Read>(reader: R) -> Result<Ingested> {
    let (rows, skipped_rows) = raw_rows(reader)?;
    if rows.is_empty() {
        return Err(Error::invalid("no parseable rows in GPS file"));
    }
    let origin = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let mut trajectories = Vec::new();
    let mut rejected = Vec::new();
    for (id, pts) in group_in_order(rows) {
        let check = || -> std::result::Result<Trajectory, String> {
            let mut out = Vec::with_capacity(pts.len());
            let mut prev: Option<f64> = None;
            for &(t, lon, lat) in &pts {
                if prev.is_some_and(|p| t <= p) {
                    return Err(format!("timestamp {t} does not increase after {}", prev.unwrap_or_default()));
                }
                if t.fract() != 0.0 {
                    return Err(format!("timestamp {t} is not a whole second"));
                }
                if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
                    return Err(format!("coordinate ({lon}, {lat}) out of range"));
                }
                prev = Some(t);
                out.push(TrajectoryPoint::new((t - origin) as Timestep + 1, lon, lat));
            }
            Trajectory::new(out).map_err(|e| e.to_string())
        };
        match check() {
            Ok(tr) => trajectories.push((id, tr)),
            Err(e) => rejected.push((id, e)),
        }
    }
    Ok(Ingested { trajectories, mode: DistanceMode::Haversine, skipped_rows, rejected })
}

/// Stable hash of an id: FNV-1a followed by the splitmix64 finaliser,
/// independent of platform and of std's per-process hasher seed.
fn stable_hash(id: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in id.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic user/service assignment of a raw id: true means user.
pub fn is_user_id(id: &str, user_fraction: f64) -> bool {
    (stable_hash(id) >> 11) as f64 / (1u64 << 53) as f64 <= user_fraction
}

/// Static service attributes applied to ingested trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceDefaults {
    pub coverage_radius: f64,
    pub bandwidth_b: f64,
    pub max_concurrent_k: u32,
}

/// Splits ingested trajectories into users (ids gain the `user:` prefix)
/// and services by [`is_user_id`].
pub fn split_ingested(
    ingested: &Ingested,
    user_fraction: f64,
    defaults: ServiceDefaults,
) -> Result<(Vec<MovingService>, Vec<UserTrajectory>)> {
    let mut services = Vec::new();
    let mut users = Vec::new();
    for (id, tr) in &ingested.trajectories {
        if is_user_id(id, user_fraction) {
            users.push(UserTrajectory::new(format!("{USER_ID_PREFIX}{id}"), tr.clone()));
        } else {
            services.push(MovingService::new(
                id.clone(),
                tr.clone(),
                defaults.coverage_radius,
                defaults.bandwidth_b,
                defaults.max_concurrent_k,
            )?);
        }
    }
    Ok((services, users))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{self, DiscoveryParams};
    use crate::qos::QosParams;
    use crate::traj::write_trajectories_csv;

    fn small(model: MobilityModel) -> ScenarioSpec {
        ScenarioSpec { n_services: 30, n_users: 12, timestep_count: 80, mobility_model: model, ..ScenarioSpec::default() }
    }

    fn csv_bytes(services: &[MovingService], users: &[UserTrajectory]) -> Vec<u8> {
        let mut out = Vec::new();
        write_trajectories_csv(
            &mut out,
            services.iter().map(|s| (s.id.as_str(), &s.trajectory)).chain(users.iter().map(|u| (u.id.as_str(), &u.trajectory))),
        )
        .unwrap();
        out
    }

    #[test]
    fn same_seed_same_bytes() {
        for m in [MobilityModel::RandomWaypoint, MobilityModel::CorridorFlow] {
            let (s1, u1) = generate(&small(m)).unwrap();
            let (s2, u2) = generate(&small(m)).unwrap();
            assert_eq!(csv_bytes(&s1, &u1), csv_bytes(&s2, &u2));
            let (s3, u3) = generate(&ScenarioSpec { seed: 8, ..small(m) }).unwrap();
            assert_ne!(csv_bytes(&s1, &u1), csv_bytes(&s3, &u3));
        }
    }

    #[test]
    fn zero_speed_is_stationary() {
        for m in [MobilityModel::RandomWaypoint, MobilityModel::CorridorFlow] {
            let (services, users) = generate(&ScenarioSpec { speed_range: [0.0, 0.0], ..small(m) }).unwrap();
            for tr in services.iter().map(|s| &s.trajectory).chain(users.iter().map(|u| &u.trajectory)) {
                assert!(tr.points().iter().all(|p| p.x == tr.first().x && p.y == tr.first().y));
            }
        }
    }

    #[test]
    fn speeds_and_area_respected() {
        let spec = small(MobilityModel::RandomWaypoint);
        let (services, users) = generate(&spec).unwrap();
        for tr in services.iter().map(|s| &s.trajectory).chain(users.iter().map(|u| &u.trajectory)) {
            for w in tr.points().windows(2) {
                let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
                assert!(d <= spec.speed_range[1] + 1e-9, "{d}");
            }
            assert!(tr.points().iter().all(|p| p.x >= 0.0 && p.x <= 1000.0 && p.y >= 0.0 && p.y <= 1000.0));
            assert_eq!(tr.span(), (1, 80));
        }
    }

    #[test]
    fn windows_tile_the_horizon() {
        for count in 1..12 {
            let mut covered = vec![0u32; 501];
            for slot in 0..count {
                let (a, b) = window(500, count, slot);
                assert!(a >= 1 && b <= 500 && a <= b);
                for t in a..=b {
                    covered[t as usize] += 1;
                }
            }
            assert!(covered[1..].iter().all(|&c| c >= 1), "count {count}");
        }
    }

    #[test]
    fn full_co_routing_covers_every_user_timestep() {
        let spec = ScenarioSpec { co_route_fraction: 1.0, ..small(MobilityModel::CorridorFlow) };
        let (services, users) = generate(&spec).unwrap();
        let params = DiscoveryParams {
            qos: QosParams::with_defaults(20.0).unwrap(),
            mode: DistanceMode::PlanarEuclidean,
            min_run: 2,
        };
        for u in &users {
            let join = oracle::temporal_map(&services, u);
            let pairs = oracle::spatial_map(&join, u, &services, &params).unwrap();
            for p in u.trajectory.points() {
                assert!(pairs.iter().any(|c| c.user_timestep == p.t), "{} has no candidate at {}", u.id, p.t);
            }
            let table = oracle::reduce_validate(pairs, 2).unwrap();
            assert!(u.trajectory.points().iter().all(|p| table.best_at(p.t).is_some()));
        }
    }

    #[test]
    fn indoor_hand_resampling() {
        // rows out of order; person a has a gap between 0.04 and 0.16
        let raw = "person_id,time,x,y\n\
                   a,0.16,4.0,8.0\n\
                   a,0.00,0.0,0.0\n\
                   b,0.04,1.0,1.0\n\
                   a,0.04,1.0,2.0\n\
                   b,0.12,3.0,1.0\n\
                   junk,row\n";
        let ing = ingest_indoor(raw.as_bytes(), 0.04).unwrap();
        assert_eq!(ing.skipped_rows, 1);
        let a = &ing.trajectories[0];
        assert_eq!(a.0, "a");
        let got: Vec<(u64, f64, f64)> = a.1.points().iter().map(|p| (p.t, p.x, p.y)).collect();
        let want = [(1, 0.0, 0.0), (2, 1.0, 2.0), (3, 2.0, 4.0), (4, 3.0, 6.0), (5, 4.0, 8.0)];
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert_eq!(g.0, w.0);
            assert!((g.1 - w.1).abs() < 1e-9 && (g.2 - w.2).abs() < 1e-9, "{g:?} vs {w:?}");
        }
        // b starts one tick after the global origin
        let b = &ing.trajectories[1].1;
        assert_eq!(b.span(), (2, 4));
        assert!((b.points()[1].x - 2.0).abs() < 1e-9);
    }

    #[test]
    fn indoor_synchronised_people_share_grid() {
        let raw = "p,t,x,y\na,10.0,0,0\nb,10.0,5,5\na,10.2,1,0\nb,10.2,6,5\n";
        let ing = ingest_indoor(raw.as_bytes(), 0.04).unwrap();
        let ts = |i: usize| ing.trajectories[i].1.points().iter().map(|p| p.t).collect::<Vec<_>>();
        assert_eq!(ts(0), ts(1));
        assert!(ingest_indoor("p,t,x,y\n".as_bytes(), 0.04).is_err());
        assert!(ingest_indoor(raw.as_bytes(), 0.0).is_err());
    }

    #[test]
    fn gps_renumbering_and_grouping() {
        let raw = "trip,epoch,lon,lat\n\
                   t1,1000,-88.20,40.10\n\
                   t2,1001,-88.30,40.20\n\
                   t1,1001,-88.21,40.11\n\
                   t1,1002,-88.22,40.12\n\
                   t2,1002,-88.31,40.21\n";
        let ing = ingest_gps(raw.as_bytes()).unwrap();
        assert_eq!(ing.mode, DistanceMode::Haversine);
        assert_eq!(ing.trajectories.len(), 2);
        let t1 = &ing.trajectories[0].1;
        assert_eq!(t1.points().iter().map(|p| (p.t, p.x, p.y)).collect::<Vec<_>>(), vec![
            (1, -88.20, 40.10),
            (2, -88.21, 40.11),
            (3, -88.22, 40.12)
        ]);
        assert_eq!(ing.trajectories[1].1.span(), (2, 3));
    }

    #[test]
    fn gps_rejects_non_monotone_trip() {
        let raw = "trip,epoch,lon,lat\nok,5,1,1\nbad,7,1,1\nbad,6,1,1\nok,6,1,1\n";
        let ing = ingest_gps(raw.as_bytes()).unwrap();
        assert_eq!(ing.trajectories.len(), 1);
        assert_eq!(ing.rejected.len(), 1);
        assert_eq!(ing.rejected[0].0, "bad");
    }

    #[test]
    fn canonical_reingest_is_identity() {
        let (services, users) = generate(&small(MobilityModel::CorridorFlow)).unwrap();
        let bytes = csv_bytes(&services, &users);
        let back = crate::traj::read_trajectories_csv(bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_trajectories_csv(&mut again, back.iter().map(|(id, tr)| (id.as_str(), tr))).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn hash_split_is_stable() {
        let ids: Vec<String> = (0..1000).map(|i| format!("trip{i}")).collect();
        let users = ids.iter().filter(|id| is_user_id(id, 0.3)).count();
        assert!((250..350).contains(&users), "{users}");
        assert_eq!(is_user_id("trip17", 0.3), is_user_id("trip17", 0.3));
        assert!(ids.iter().all(|id| is_user_id(id, 1.0)));
    }
}
