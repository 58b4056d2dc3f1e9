//! Zeroth-order actor-critic (ZOAC) with an evolution-strategies baseline.
//!
//! Policies are perturbed in parameter space once per rollout segment, a
//! critic is fitted to lambda-returns, and the actor follows the
//! advantage-weighted sum of the sampled noise directions.

pub mod analysis;
pub mod baselines;
pub mod envs;
pub mod error;
pub mod evaluation;
pub mod improvement;
pub mod noise;
pub mod numkit;
pub mod policies;
pub mod sampler;
pub mod trainer;

pub use analysis::{
    es_variance_bound, estimator_variance, value_gap, value_gap_from_episodes, zoac_variance_bound, BoundParams,
    EstimatorKind, GradientStudy, ValueGap, VarianceReport,
};
pub use baselines::{centered_rank, discounted_return, es_gradient, EsDirection};
pub use envs::{
    lqr_value_oracle, DoneReason, Env, EnvSpec, Environment, LqrSpec, MountainCarSpec, QuadraticValue,
};
pub use error::{Error, Result};
pub use evaluation::{
    compute_value_targets, critic_update, segment_values, ConstantValue, CriticNet, ValueFunction,
    ValueTargetSet, ZeroValue,
};
pub use improvement::{
    compute_segment_advantages, masked_advantage, normalize_advantages, sift_top_directions, zoac_gradient,
    ActorState, BetaSchedule, DirectionAdvantage,
};
pub use noise::{NoiseIndex, NoiseTable, DEFAULT_TABLE_SIZE};
pub use numkit::{AdamState, RngStream, RunningStat};
pub use policies::{policy_act, ParamVector, PolicyKind, PolicySpec};
pub use sampler::{run_episode, Episode, IterationBatch, RolloutParams, Sampler, Segment};
pub use trainer::{
    evaluate_policy, run_training, Algo, Checkpoint, EvalReport, MetricsRecord, RunPaths, RunSummary, Trainer,
    TrainerConfig,
};
