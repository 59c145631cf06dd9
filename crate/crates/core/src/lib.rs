//! Recurrent language models trained with sampled output layers.
//!
//! The crate covers the whole pipeline: vocabulary and batching
//! ([`corpus`]), the alias-table proposal sampler ([`sampler`]), the Elman
//! network with truncated backpropagation ([`rnn`]), four output heads
//! ([`heads`]), RMSProp with lazy row updates ([`optim`]), the training loop
//! ([`trainer`]), exact perplexity ([`eval`]) and binary checkpoints
//! ([`checkpoint`]). [`lab`] holds Monte-Carlo checks of the estimators and
//! [`synthetic`] generates deterministic corpora.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod heads;
pub mod lab;
pub mod optim;
pub mod rnn;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

pub use checkpoint::{Checkpoint, TrainerState};
pub use corpus::{build_vocab, BatchConfig, BpttBlock, Sentence, Specials, Vocabulary};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use heads::{Diagnostics, HeadKind, NceConfig, ScoreSlate};
pub use optim::{OptimConfig, OptimMode, OptimizerState};
pub use rnn::{HiddenPolicy, ModelParams, Real};
pub use sampler::{ProposalDistribution, SampleSet};
pub use trainer::{train, MetricsRecord, TrainConfig, TrainOutcome, Trainer};
