//! Evaluation harness for prompt inversion: corpora, tokenizer, metrics,
//! probes and experiment orchestration behind the `pia` binary.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod probe;
pub mod report;
pub mod tokenizer;

pub use corpus::{Corpus, Document, Keyword, Prompt};
pub use error::EvalError;
pub use experiment::{
    run_experiment, write_outputs, Aggregate, CandidateCounts, CandidateRates, ExperimentConfig, ExperimentOutput,
    InversionResult, ModelSource, Report, Summary, Variant, VictimAdapters,
};
pub use metrics::{bleu, keyword_recall, token_accuracy};
pub use probe::{mean_nonlinearity, nonlinearity_probe, ProbeCell};
pub use tokenizer::{Tokenizer, BOS_ID, UNK_ID};

/// Directory holding the bundled corpora.
pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}
