//! Trajectory data model: timestamped samples, constant-speed interpolation,
//! fixed-rate resampling and the two distance metrics.
//!
//! After ingestion every trajectory lives on a shared global grid of integer
//! timesteps, so "consecutive" simply means `t` and `t + 1`.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global integer timestep. Starts at 1 for ingested data.
pub type Timestep = u64;

/// Mean Earth radius used by the haversine metric.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Id prefix reserved for user trajectories in the canonical CSV.
pub const USER_ID_PREFIX: &str = "user:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Coordinates are metres on a plane.
    #[default]
    PlanarEuclidean,
    /// `x` is longitude and `y` latitude, both in degrees.
    Haversine,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Coord {
    pub x: f64,
    pub y: f64,
}

impl Coord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn lerp(self, other: Coord, frac: f64) -> Coord {
        Coord {
            x: self.x + (other.x - self.x) * frac,
            y: self.y + (other.y - self.y) * frac,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: Timestep,
    pub x: f64,
    pub y: f64,
}

impl TrajectoryPoint {
    pub const fn new(t: Timestep, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }

    pub const fn coord(&self) -> Coord {
        Coord { x: self.x, y: self.y }
    }
}

/// A raw sample with a real-valued wall-clock time, before resampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedSample {
    pub time: f64,
    pub x: f64,
    pub y: f64,
}

fn check_gps(c: Coord) -> Result<()> {
    if !(-180.0..=180.0).contains(&c.x) || !(-90.0..=90.0).contains(&c.y) {
        return Err(Error::invalid(format!(
            "GPS coordinate out of range: lon {}, lat {}",
            c.x, c.y
        )));
    }
    Ok(())
}

/// Distance in metres between two coordinates under `mode`.
pub fn distance(a: Coord, b: Coord, mode: DistanceMode) -> Result<f64> {
    match mode {
        DistanceMode::PlanarEuclidean => Ok((a.x - b.x).hypot(a.y - b.y)),
        DistanceMode::Haversine => {
            check_gps(a)?;
            check_gps(b)?;
            Ok(haversine(a, b))
        }
    }
}

fn haversine(a: Coord, b: Coord) -> f64 {
    let (lat1, lat2) = (a.y.to_radians(), b.y.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.x - a.x).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Projects `p` into a local metric frame centred on `origin`.
///
/// Planar coordinates pass through unchanged; GPS coordinates use an
/// equirectangular projection, which is accurate at hotspot-range scales.
pub(crate) fn to_local_metres(origin: Coord, p: Coord, mode: DistanceMode) -> Coord {
    match mode {
        DistanceMode::PlanarEuclidean => Coord::new(p.x - origin.x, p.y - origin.y),
        DistanceMode::Haversine => {
            let lat0 = origin.y.to_radians();
            Coord::new(
                (p.x - origin.x).to_radians() * lat0.cos() * EARTH_RADIUS_M,
                (p.y - origin.y).to_radians() * EARTH_RADIUS_M,
            )
        }
    }
}

/// Ordered, non-empty sequence of samples with strictly ascending timesteps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TrajectoryPoint>", into = "Vec<TrajectoryPoint>")]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

impl TryFrom<Vec<TrajectoryPoint>> for Trajectory {
    type Error = Error;

    fn try_from(points: Vec<TrajectoryPoint>) -> Result<Self> {
        Trajectory::new(points)
    }
}

impl From<Trajectory> for Vec<TrajectoryPoint> {
    fn from(t: Trajectory) -> Self {
        t.points
    }
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("trajectory must contain at least one sample"));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid(format!(
                "trajectory timesteps must be strictly ascending (found {} then {})",
                w[0].t, w[1].t
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate at t={}", p.t)));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &TrajectoryPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrajectoryPoint {
        &self.points[self.points.len() - 1]
    }

    pub fn span(&self) -> (Timestep, Timestep) {
        (self.first().t, self.last().t)
    }

    /// Index of the sample stored at timestep `t`, if any.
    pub fn index_of(&self, t: Timestep) -> Option<usize> {
        self.points.binary_search_by_key(&t, |p| p.t).ok()
    }

    pub fn sample_at(&self, t: Timestep) -> Option<&TrajectoryPoint> {
        self.index_of(t).map(|i| &self.points[i])
    }

    /// Position at a real-valued time, moving at constant speed between
    /// bracketing samples. No extrapolation outside the recorded span.
    pub fn position_at(&self, t_query: f64) -> Result<Coord> {
        let (lo, hi) = self.span();
        if !(t_query >= lo as f64 && t_query <= hi as f64) {
            return Err(Error::OutOfRange(format!(
                "t={t_query} outside trajectory span [{lo}, {hi}]"
            )));
        }
        // first sample with t >= t_query
        let idx = self.points.partition_point(|p| (p.t as f64) < t_query);
        let right = self.points[idx];
        if right.t as f64 == t_query || idx == 0 {
            return Ok(right.coord());
        }
        let left = self.points[idx - 1];
        let frac = (t_query - left.t as f64) / (right.t - left.t) as f64;
        Ok(left.coord().lerp(right.coord(), frac))
    }
}

/// Resamples raw wall-clock samples onto the grid `origin + k * rate`.
///
/// Grid points inside the recorded span are kept and numbered `t = k + 1`,
/// so a trajectory starting at `origin` gets timesteps 1, 2, ...; missing
/// points are filled by linear interpolation.
pub fn resample(samples: &[TimedSample], rate: f64, origin: f64) -> Result<Trajectory> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid(format!("resampling rate must be positive, got {rate}")));
    }
    if samples.is_empty() {
        return Err(Error::invalid("cannot resample an empty trajectory"));
    }
    if samples.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(Error::invalid("sample times must be strictly ascending"));
    }
    let first = samples[0].time;
    let last = samples[samples.len() - 1].time;
    // relative tolerance for grid arithmetic on decimal rates such as 0.04
    let eps = 1e-9;
    if last - first < rate * (1.0 - eps) {
        return Err(Error::invalid(format!(
            "trajectory spans {}s, shorter than one {rate}s interval",
            last - first
        )));
    }
    let k_start = ((first - origin) / rate - eps).ceil().max(0.0) as u64;
    let k_end = ((last - origin) / rate + eps).floor();
    if k_end < k_start as f64 {
        return Err(Error::invalid("no grid point falls inside the trajectory span"));
    }
    let k_end = k_end as u64;

    let mut points = Vec::with_capacity((k_end - k_start + 1) as usize);
    let mut seg = 0usize;
    for k in k_start..=k_end {
        let time = (origin + k as f64 * rate).clamp(first, last);
        while seg + 2 < samples.len() && samples[seg + 1].time < time {
            seg += 1;
        }
        let (a, b) = if samples.len() == 1 {
            (samples[0], samples[0])
        } else {
            (samples[seg], samples[seg + 1])
        };
        let c = if b.time == a.time {
            Coord::new(a.x, a.y)
        } else {
            let frac = ((time - a.time) / (b.time - a.time)).clamp(0.0, 1.0);
            Coord::new(a.x, a.y).lerp(Coord::new(b.x, b.y), frac)
        };
        points.push(TrajectoryPoint::new(k + 1, c.x, c.y));
    }
    Trajectory::new(points)
}

/// A crowdsourced service whose coverage disk travels along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingService {
    pub id: String,
    pub trajectory: Trajectory,
    /// Radius of the coverage region, metres.
    pub coverage_radius: f64,
    /// Channel bandwidth B, bits per second.
    pub bandwidth_b: f64,
    /// Maximum number of concurrent requests K.
    pub max_concurrent_k: u32,
}

impl MovingService {
    pub fn new(
        id: impl Into<String>,
        trajectory: Trajectory,
        coverage_radius: f64,
        bandwidth_b: f64,
        max_concurrent_k: u32,
    ) -> Result<Self> {
        let id = id.into();
        if !(coverage_radius > 0.0) || !(bandwidth_b > 0.0) || max_concurrent_k < 1 {
            return Err(Error::invalid(format!(
                "service {id}: need coverage_radius > 0, bandwidth_b > 0, max_concurrent_k >= 1"
            )));
        }
        Ok(Self { id, trajectory, coverage_radius, bandwidth_b, max_concurrent_k })
    }

    /// `B / K`, the per-request share of the channel.
    pub fn bandwidth_share(&self) -> f64 {
        self.bandwidth_b / f64::from(self.max_concurrent_k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserTrajectory {
    pub id: String,
    pub trajectory: Trajectory,
}

impl UserTrajectory {
    pub fn new(id: impl Into<String>, trajectory: Trajectory) -> Self {
        Self { id: id.into(), trajectory }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    id: String,
    t: Timestep,
    x: f64,
    y: f64,
}

/// Reads canonical `id,t,x,y` CSV. Trajectories come back in order of first
/// appearance; rows of one id may be interleaved with others.
pub fn read_trajectories_csv<R: Read>(reader: R) -> Result<Vec<(String, Trajectory)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<TrajectoryPoint>> = HashMap::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        let pts = rows.entry(row.id.clone()).or_insert_with(|| {
            order.push(row.id.clone());
            Vec::new()
        });
        pts.push(TrajectoryPoint::new(row.t, row.x, row.y));
    }
    order
        .into_iter()
        .map(|id| {
            let mut pts = rows.remove(&id).unwrap_or_default();
            pts.sort_by_key(|p| p.t);
            let traj = Trajectory::new(pts).map_err(|e| Error::invalid(format!("{id}: {e}")))?;
            Ok((id, traj))
        })
        .collect()
}

pub fn write_trajectories_csv<'a, W, I>(writer: W, trajectories: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Trajectory)>,
{
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "t", "x", "y"])?;
    for (id, traj) in trajectories {
        for p in traj.points() {
            wtr.write_record([id.to_string(), p.t.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
