//! Procedural datasets, the member/public/holdout protocol, and score caches.

mod generate;
mod scores;
mod split;

pub use generate::{flatten_batch, generate, DatasetKind, Dims, Example, MAX_COMPONENTS};
pub use scores::{ScoreCache, ScoreRecord, SCORE_HEADER};
pub use split::{split, split_sizes, split_sizes_with, split_with, DatasetSplit};
