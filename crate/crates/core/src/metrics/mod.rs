//! The NMSE training objective, the NRMSE reporting metric and
//! autoregressive rollout evaluation.

mod loss;
mod rollout;

pub use loss::{nmse, nmse_grad, nmse_sample, nrmse, nrmse_fields, LossConfig, EPS_LOSS};
pub use rollout::{
    evaluate_suite, rollout, rollout_report, EvalOptions, NullModel, Persistence, Predictor, RolloutOutput, RolloutReport,
    SpectralOracle,
};
