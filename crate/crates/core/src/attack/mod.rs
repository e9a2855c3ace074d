//! Quantile-regression membership inference: pinball loss, the weak
//! attacker, bagging, and the marginal baseline.

mod bag;
mod marginal;
mod pinball;
mod regressor;

pub use bag::{
    attack_single, bootstrap_indices, load_bundle, majority, member_seed, save_bundle, AttackerBag, BagTrainer,
    BundleManifest, Decision, Verdict, VerdictCube, BUNDLE_VERSION,
};
pub use marginal::{marginal_threshold, MarginalBaseline};
pub use pinball::pinball;
pub(crate) use pinball::pinball_unchecked;
pub use regressor::{train_quantile, QuantileRegressor, RegressorConfig, RegressorRecord, ScoreTransform};
