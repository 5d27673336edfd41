//! Federated training on desk-scale models: datasets and partitioning,
//! local SGD on each client, channel aggregation and the global update.

mod client;
mod data;
mod partition;
mod simulation;
mod task;

pub use client::{evaluate, global_step, local_update, BatchSampler, Client};
pub use data::{
    load_csv, load_idx, parse_idx, synthetic_classification, synthetic_regression,
    ClassificationSpec, Dataset, RegressionSpec, Targets,
};
pub use partition::{dirichlet_partition, MAX_PARTITION_RETRIES};
pub use simulation::{build_clients, run_experiment, Round0, RoundMetrics, Simulation, TrainingSettings};
pub use task::{argmax, Task, TaskKind};
