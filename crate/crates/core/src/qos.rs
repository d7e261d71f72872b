//! Signal strength and capacity between a user sample and a moving service.
//!
//! Strength follows an exponential attenuation coverage model: full signal
//! inside the confident radius `R_c`, then `exp(-k (pdis - R_c))` out to the
//! sensing radius `R_s`. Capacity is the Shannon-style rate
//! `(B / K) * log2(1 + strength)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{distance, to_local_metres, Coord, DistanceMode, Timestep, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosParams {
    /// `R_c`, metres.
    pub confident_radius_rc: f64,
    /// `k`, per metre.
    pub decay_k: f64,
    /// `R_s`, metres. Doubles as the discovery search radius.
    pub sensing_radius_rs: f64,
}

impl QosParams {
    pub fn new(confident_radius_rc: f64, decay_k: f64, sensing_radius_rs: f64) -> Result<Self> {
        let p = Self { confident_radius_rc, decay_k, sensing_radius_rs };
        p.validate()?;
        Ok(p)
    }

    /// Defaults for a bare sensing radius: `R_c = R_s / 4` and a decay that
    /// brings strength down to 0.01 at the sensing edge.
    pub fn with_defaults(sensing_radius_rs: f64) -> Result<Self> {
        let rc = 0.25 * sensing_radius_rs;
        let k = 100f64.ln() / (sensing_radius_rs - rc);
        Self::new(rc, k, sensing_radius_rs)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.confident_radius_rc > 0.0
            && self.confident_radius_rc <= self.sensing_radius_rs
            && self.sensing_radius_rs.is_finite()
            && self.decay_k >= 0.0
            && self.decay_k.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "QoS parameters need 0 < R_c <= R_s and k >= 0 (got R_c={}, R_s={}, k={})",
                self.confident_radius_rc, self.sensing_radius_rs, self.decay_k
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosValue {
    /// Dimensionless, in (0, 1].
    pub strength: f64,
    /// Bits per second.
    pub capacity: f64,
}

/// Distance from `service_pt` to the user's path segment starting at
/// timestep `t`, with the foot of the perpendicular clamped to the segment.
/// At the final user sample there is no segment and the point distance is
/// returned.
pub fn perpendicular_distance(
    service_pt: Coord,
    user: &Trajectory,
    t: Timestep,
    mode: DistanceMode,
) -> Result<f64> {
    let idx = user
        .index_of(t)
        .ok_or_else(|| Error::OutOfRange(format!("timestep {t} not in user trajectory")))?;
    let start = user.points()[idx].coord();
    let point_dist = distance(service_pt, start, mode)?;
    let Some(next) = user.points().get(idx + 1) else {
        return Ok(point_dist);
    };
    let end = to_local_metres(start, next.coord(), mode);
    let p = to_local_metres(start, service_pt, mode);
    let len2 = end.x * end.x + end.y * end.y;
    if len2 == 0.0 {
        return Ok(point_dist);
    }
    let s = ((p.x * end.x + p.y * end.y) / len2).clamp(0.0, 1.0);
    let seg = (p.x - s * end.x).hypot(p.y - s * end.y);
    // the projection is approximate in GPS mode; never exceed the exact
    // distance to the segment start
    Ok(seg.min(point_dist))
}

/// Signal strength at perpendicular distance `pdis`.
pub fn strength(pdis: f64, params: &QosParams) -> Result<f64> {
    if !(pdis >= 0.0) {
        return Err(Error::ContractViolation(format!("negative distance {pdis}")));
    }
    if pdis > params.sensing_radius_rs {
        return Err(Error::ContractViolation(format!(
            "pdis {pdis} beyond sensing radius {}; only candidates may be scored",
            params.sensing_radius_rs
        )));
    }
    if pdis <= params.confident_radius_rc {
        Ok(1.0)
    } else {
        // floored so that extreme decays cannot underflow to zero
        Ok((-params.decay_k * (pdis - params.confident_radius_rc)).exp().max(f64::MIN_POSITIVE))
    }
}

/// `(B / K) * log2(1 + strength)`.
pub fn capacity(strength: f64, bandwidth_b: f64, max_concurrent_k: u32) -> f64 {
    debug_assert!(bandwidth_b > 0.0 && max_concurrent_k >= 1);
    // ln_1p keeps tiny strengths distinguishable
    bandwidth_b / f64::from(max_concurrent_k) * strength.ln_1p() / std::f64::consts::LN_2
}

/// QoS of a composite service: mean capacity over its non-dummy steps.
pub fn composite_qos(plan_capacities: &[f64]) -> Result<f64> {
    if plan_capacities.is_empty() {
        return Err(Error::EmptyComposite);
    }
    Ok(plan_capacities.iter().sum::<f64>() / plan_capacities.len() as f64)
}
