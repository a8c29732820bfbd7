//! Quantitative evaluation: perplexity upper bound with averaged mixture KL,
//! test-BLEU and self-BLEU, NPMI topic coherence, and ROUGE.

mod bleu;
mod npmi;
mod rouge;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu_scores, self_bleu};
pub use npmi::npmi_coherence;
pub use rouge::{rouge_scores, Prf, RougeScores};

use crate::corpus::Item;
use crate::diffcore::ParamStore;
use crate::training::{compute_elbo, draw_batch_noise, ElboOpts, ModelDims};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty hypothesis set")]
    EmptyHypotheses,
    #[error("empty reference set")]
    EmptyReferences,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("evaluation failed: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// One reported metric: name, value, and the knobs that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub params: serde_json::Value,
}

/// Per-sentence evidence bound `b = seq_recon - u_kl` averaged over
/// `samples_per_item` draws; returns
/// `(exp(-sum b / sum token counts), mean u_kl)`.
pub fn perplexity_bound(
    store: &ParamStore,
    dims: &ModelDims,
    items: &[Item],
    samples_per_item: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if items.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let opts = ElboOpts::eval(0.0);
    let mut bound_sum = 0.0;
    let mut token_sum = 0.0;
    let mut ukl_sum = 0.0;
    for (i, item) in items.iter().enumerate() {
        let batch = single_item_batch(item);
        let mut b_acc = 0.0;
        let mut u_acc = 0.0;
        for s in 0..samples_per_item {
            let step = (i as u64).wrapping_mul(7919).wrapping_add(s as u64);
            let noise = draw_batch_noise(dims, seed, step, 1);
            let (tape, vars) = compute_elbo(store, dims, &batch, &noise, &opts)
                .map_err(|e| EvalError::Model(e.to_string()))?;
            let bd = vars.breakdown(&tape);
            b_acc += bd.seq_recon - bd.u_kl;
            u_acc += bd.u_kl;
        }
        let denom = samples_per_item as f64;
        bound_sum += b_acc / denom;
        ukl_sum += u_acc / denom;
        token_sum += item.sequence.target_len() as f64;
    }
    let ppl = (-bound_sum / token_sum).exp();
    Ok((ppl, ukl_sum / items.len() as f64))
}

fn single_item_batch(item: &Item) -> crate::corpus::Batch {
    let items = vec![item.clone()];
    crate::corpus::batch_iter(&items, 1, 0, false).remove(0)
}
