//! Experiment environments.

pub mod random;
pub mod splittable;
pub mod timeseries;
pub mod wind;

pub use random::{build_random_mdp, RewardLaw};
pub use splittable::{compose_splittable, SplittableMdp};
pub use timeseries::{generate_synthetic, ingest_timeseries, write_timeseries, IngestFormat, TimeSeriesDataset};
pub use wind::{discretize_and_fit, soc_transition, wind_reward, WindModel, WindStorageConfig};
