//! Attack evaluation: ROC curves and TPR at fixed FPR, score histograms,
//! bagging sweeps, verdict-variance CDFs, test statistics, and SVG plots.

mod hist;
mod plot;
mod roc;
mod stats;
mod sweep;
mod variance;

pub use hist::{score_histograms, write_histograms_csv, Histogram};
pub use plot::{LinePlot, Series};
pub use roc::{
    alpha_grid, roc_from_cubes, roc_from_scores, roc_from_verdicts, tpr_at_fpr, RocCurve, TprAtFprTable,
    STANDARD_FPR_TARGETS,
};
pub use stats::{binomial_interval, mann_whitney, mean_std, MannWhitney};
pub use sweep::{bagging_sweep, BagRun, SweepRow};
pub use variance::{variance_cdf, verdict_variances, VarianceCdf};
