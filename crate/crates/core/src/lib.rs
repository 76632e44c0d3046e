//! Topic modeling of coded medical conditions.
//!
//! Patients are treated as bags of diagnosis codes. The crate builds a
//! frequency-truncated vocabulary and count matrix from flat event records,
//! fits LDA with a seeded collapsed Gibbs sampler, picks the number of topics
//! by data log-likelihood, and scores topics for tightness (top-codes,
//! entropy) and distinctiveness (Jensen-Shannon divergence, occurrence
//! splits). Synthetic corpora with planted topics and an exhaustive posterior
//! oracle are provided for validation.

#[cfg(feature = "cli")]
pub mod cli;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod recommend;
pub mod sampler;
pub mod selection;
pub mod synth;

pub use corpus::{
    build_matrix, build_vocabulary, corpus_stats, parse_records, CorpusMatrix, CorpusStats,
    RecordSet, Vocabulary, Weighting,
};
pub use error::{Error, Result};
pub use metrics::{
    jsd, jsd_matrix, occurrence_split, top_codes, topic_entropy, JsdSummary, TopCodes,
};
pub use model::TopicModel;
pub use recommend::{recommend, RankingMode, Recommendation};
pub use sampler::{run_chain, ChainConfig, GibbsState, Hyperparams, PriorTemplate};
pub use selection::{select_k, sweep_k, KSweepResult};
pub use synth::{exact_posterior, generate_corpus, match_topics, GroundTruth, SynthConfig};
