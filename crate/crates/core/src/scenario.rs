//! Scenario files: JSON describing where the trajectories live and how
//! discovery, rewards and training are configured.
//!
//! Trajectory CSVs carry geometry only, so static service attributes come
//! from `service_defaults`, optionally overridden per id in `service_qos`.
//! Relative paths resolve against the scenario file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::RewardScheme;
use crate::error::{Error, Result};
use crate::oracle::{DiscoveryParams, DUMMY_LABEL};
use crate::qos::QosParams;
use crate::traj::{read_trajectories_csv, DistanceMode, MovingService, UserTrajectory, USER_ID_PREFIX};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceQos {
    pub bandwidth_bps: f64,
    pub max_concurrent: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of users used for training; the rest are held out.
    pub train_fraction: f64,
    /// Seed of the shuffle that precedes the split.
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.7, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub services_csv: PathBuf,
    pub users_csv: PathBuf,
    #[serde(default = "default_mode")]
    pub distance_mode: DistanceMode,
    pub r_s_meters: f64,
    #[serde(default = "default_w")]
    pub w: usize,
    /// Defaults to a quarter of `r_s_meters`.
    #[serde(default)]
    pub r_c_meters: Option<f64>,
    /// Defaults to the decay that leaves strength 0.01 at `r_s_meters`.
    #[serde(default)]
    pub decay_k: Option<f64>,
    #[serde(default = "default_dummy")]
    pub reward_dummy: f64,
    #[serde(default = "default_invalid")]
    pub reward_invalid: f64,
    /// Coverage radius given to every service; defaults to `r_s_meters`.
    #[serde(default)]
    pub coverage_radius_m: Option<f64>,
    #[serde(default = "default_service_qos")]
    pub service_defaults: ServiceQos,
    #[serde(default)]
    pub service_qos: BTreeMap<String, ServiceQos>,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub split: SplitConfig,
}

fn default_mode() -> DistanceMode {
    DistanceMode::PlanarEuclidean
}

fn default_w() -> usize {
    2
}

fn default_dummy() -> f64 {
    RewardScheme::default().dummy
}

fn default_invalid() -> f64 {
    RewardScheme::default().invalid
}

fn default_service_qos() -> ServiceQos {
    ServiceQos { bandwidth_bps: 1.0e7, max_concurrent: 1 }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.discovery_params()?;
        cfg.agent.validate()?;
        if !(cfg.split.train_fraction > 0.0 && cfg.split.train_fraction <= 1.0) {
            return Err(Error::Config("split.train_fraction must lie in (0, 1]".into()));
        }
        Ok(cfg)
    }

    pub fn discovery_params(&self) -> Result<DiscoveryParams> {
        let r_s = self.r_s_meters;
        let defaults = QosParams::with_defaults(r_s).map_err(|e| Error::Config(e.to_string()))?;
        let rc = self.r_c_meters.unwrap_or(defaults.confident_radius_rc);
        let k = match (self.decay_k, self.r_c_meters) {
            (Some(k), _) => k,
            (None, Some(rc)) if r_s > rc => 100f64.ln() / (r_s - rc),
            (None, Some(_)) => 0.0,
            (None, None) => defaults.decay_k,
        };
        let qos = QosParams::new(rc, k, r_s).map_err(|e| Error::Config(e.to_string()))?;
        if self.w < 1 {
            return Err(Error::Config("w must be at least 1".into()));
        }
        Ok(DiscoveryParams { qos, mode: self.distance_mode, min_run: self.w })
    }

    pub fn rewards(&self) -> RewardScheme {
        RewardScheme { dummy: self.reward_dummy, invalid: self.reward_invalid }
    }

    fn qos_for(&self, id: &str) -> ServiceQos {
        self.service_qos.get(id).copied().unwrap_or(self.service_defaults)
    }
}

/// A scenario with its trajectories read and validated.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub services: Arc<[MovingService]>,
    pub users: Vec<UserTrajectory>,
    /// Files the scenario was read from, scenario file first.
    pub inputs: Vec<PathBuf>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        let config = ScenarioConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let services_path = base.join(&config.services_csv);
        let users_path = base.join(&config.users_csv);
        let services = read_services(&services_path, &config)?;
        let users = read_users(&users_path)?;
        Ok(Self { config, services: services.into(), users, inputs: vec![path.to_path_buf(), services_path, users_path] })
    }

    pub fn params(&self) -> Result<DiscoveryParams> {
        self.config.discovery_params()
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))
}

pub fn read_services(path: &Path, config: &ScenarioConfig) -> Result<Vec<MovingService>> {
    let radius = config.coverage_radius_m.unwrap_or(config.r_s_meters);
    read_trajectories_csv(open(path)?)?
        .into_iter()
        .map(|(id, tr)| {
            if id == DUMMY_LABEL {
                return Err(Error::invalid(format!("service id {DUMMY_LABEL} is reserved")));
            }
            if id.starts_with(USER_ID_PREFIX) {
                return Err(Error::invalid(format!("service id {id} uses the user prefix")));
            }
            let q = config.qos_for(&id);
            MovingService::new(id, tr, radius, q.bandwidth_bps, q.max_concurrent)
        })
        .collect()
}

pub fn read_users(path: &Path) -> Result<Vec<UserTrajectory>> {
    read_trajectories_csv(open(path)?)?
        .into_iter()
        .map(|(id, tr)| {
            if !id.starts_with(USER_ID_PREFIX) {
                return Err(Error::invalid(format!("user id {id} lacks the {USER_ID_PREFIX} prefix")));
            }
            Ok(UserTrajectory::new(id, tr))
        })
        .collect()
}
