//! Posterior collection, voting baselines, the linear meta-classifier and
//! model soup.

mod meta;
mod posteriors;
mod report;
mod vote;

pub use meta::{meta_predict, soup, train_meta, MetaConfig, MetaInit, MetaOutcome, MetaParams};
pub use posteriors::{
    collect_posteriors, load_posterior_set, save_posterior_set, ManifestMember, ManifestRecord,
    MemberPosteriors, PosteriorManifest, PosteriorSet, POSTERIOR_MAGIC, POSTERIOR_VERSION,
};
pub use report::{
    compare, ComparisonRow, EnsembleComparison, MAJORITY, META_SINGLE, META_SOUP, SOFT,
};
pub use vote::{hard_vote, soft_vote};
