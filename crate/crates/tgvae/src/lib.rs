//! Topic-guided variational autoencoder for text generation and summarization.
//!
//! A neural topic model infers per-document topic usage from bag-of-words
//! counts; the topic-word distributions parameterize a Gaussian-mixture prior
//! over the latent code of a GRU sequence VAE. The approximate posterior is a
//! mixture refined by a volume-preserving Householder flow, and the mixture
//! KL term is replaced by its closed-form upper bound. A conditional variant
//! adds an attention decoder for abstractive summarization.

pub mod corpus;
pub mod diffcore;
pub mod eval;
pub mod latent;
pub mod nsm;
pub mod ntm;
pub mod rng;
pub mod cli;
pub mod summarizer;
pub mod training;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] diffcore::DiffError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
