pub mod agent;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracle;
pub mod qos;
pub mod scenario;
pub mod traj;

pub use agent::{AgentConfig, PolicyModel};
pub use env::{CompositionEnv, Environment, Extents, RewardScheme};
pub use error::{Error, Result};
pub use nn::{Network, NetworkSpec};
pub use oracle::{CandidateTable, Choice, CompositionPlan, DiscoveryParams, PlanStep};
pub use qos::QosParams;
pub use traj::{DistanceMode, MovingService, Timestep, Trajectory, TrajectoryPoint, UserTrajectory};
