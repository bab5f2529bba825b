//! Policy-gradient training of the selection network.

mod dprl;
mod reward;
mod sgd;

pub use dprl::{
    dprl_train, random_selection, read_convergence_log, selection_digest, write_convergence_log,
    EpochRecord, LayerWeights, PolicyCheckpoint, TrainConfig, TrainOutcome,
};
pub use reward::{
    reward_atr, reward_bcr, reward_ier, BenchmarkTable, RewardConfig, RewardStrategy, DEFAULT_EPSILON,
};
pub use sgd::{sgd_step, SgdConfig, SgdState};
