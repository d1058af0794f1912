pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod network;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod rundir;
pub mod sampling;

pub use config::ExperimentConfig;
pub use corpus::{Corpus, Split, SyntheticSpec, CATEGORIES, NUM_ATTRIBUTES, NUM_CLASSES};
pub use ensemble::{MetaConfig, MetaParams, PosteriorSet};
pub use error::{Error, Result};
pub use network::{DeepSerConfig, DeepSerParams, Parameters};
pub use objective::Metrics;
pub use pipeline::{Dataset, ModelCheckpoint, StageConfig};
