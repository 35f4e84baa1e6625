//! Audio-free multi-grained prompt tuning for contrastive language-audio
//! classification.
//!
//! The pipeline learns coarse- and fine-grained prompt tokens from labeled
//! captions alone: a frozen, seed-deterministic text encoder produces
//! sentence- and word-level features, match scores against class prompt
//! features drive a cross-entropy (single-label) or pairwise ranking
//! (multi-label) objective, and only the prompt embeddings receive gradient
//! updates. Held-out captions stand in for audio at evaluation time;
//! precomputed clip/frame feature files are accepted as an alternative
//! input.
//!
//! Modules follow the data path:
//!
//! - [`corpus`]: tokenization, synonym-based caption collection, balancing,
//!   template fallback, JSONL I/O.
//! - [`encoder`]: the frozen text encoder, prompt banks, and analytic
//!   gradients with respect to prompt rows.
//! - [`scoring`]: cosine match scores, word-level score tensors,
//!   softmax-weighted aggregation, ensembling.
//! - [`losses`]: cross-entropy and ranking losses with gradients, and the
//!   combined two-grain training objective.
//! - [`trainer`]: prompt initialization, the Adam/SGD loop, checkpoints.
//! - [`evalkit`]: zero-shot and prompt-based inference, accuracy and mAP,
//!   transfer evaluation, prompt-length sweeps.
//! - [`synth`]: deterministic keyword corpora for experiments and tests.

pub mod corpus;
pub mod encoder;
pub mod evalkit;
mod hash;
pub mod losses;
pub mod scoring;
pub mod synth;
pub mod trainer;

pub use corpus::{LabeledCaption, LabeledCorpus, SynonymDict, TaskKind, TokenSeq};
pub use encoder::{EncodedText, EncoderWeights, Grain, PromptBank};
pub use evalkit::{EvalMode, EvalResult, FeatureSample, Metric};
pub use losses::{LossValue, TotalLoss};
pub use scoring::{ScoreKind, ScoreMatrix, WordScores};
pub use trainer::{Optimizer, TrainConfig, TrainReport};
