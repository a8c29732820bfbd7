//! Objective assembly and optimization.
//!
//! `compute_elbo` builds the full objective on one tape per batch:
//!
//! ```text
//! total = ntm_recon - ntm_kl + seq_recon - u_kl + lambda * R
//! ```
//!
//! with one `theta` sample and one `z0` sample per item. The optimizer
//! maximizes a KL-warmed variant (the reported breakdown always carries the
//! unscaled terms); gradients are clipped at a global norm of 5.

mod checkpoint;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest};

use crate::corpus::{Batch, Item, Vocab};
use crate::diffcore::{DiffError, ParamStore, Tape, Var};
use crate::latent::{self, FlowChain, GmmVars, PosteriorHead, PriorNetDims, PriorNets};
use crate::nsm::{self, Dropout, NsmDims, NsmParams};
use crate::ntm::{self, NtmDims, NtmParams};
use crate::rng;
use crate::summarizer::{self, SumParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite {term} in objective")]
    NonFiniteTerm { term: &'static str },
    #[error("non-finite gradient for parameter '{0}'")]
    NanGrad(String),
    #[error("non-finite value in parameter '{0}'")]
    NanParam(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Gradient clipping threshold (global norm).
pub const GRAD_CLIP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Generation,
    Summarization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    TopicGmm,
    StandardGaussian,
}

/// Run configuration. Defaults follow the full-scale setup (hidden 600 for
/// generation and 400 for summarization, dropout 0.4, lambda 0.1); desk-scale
/// runs override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Path to the JSON-lines corpus (or a prepared directory).
    pub corpus: String,
    #[serde(default = "defaults::mode")]
    pub mode: Mode,
    #[serde(default = "defaults::prior_mode")]
    pub prior_mode: PriorMode,
    /// Number of topics (mixture components).
    #[serde(default = "defaults::num_topics")]
    pub num_topics: usize,
    /// Householder flow depth K.
    #[serde(default = "defaults::flow_depth")]
    pub flow_depth: usize,
    #[serde(default = "defaults::latent_dim")]
    pub latent_dim: usize,
    /// GRU hidden size; `None` resolves by mode (600 generation, 400 summarization).
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default = "defaults::embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "defaults::ntm_hidden")]
    pub ntm_hidden: usize,
    #[serde(default = "defaults::prior_hidden")]
    pub prior_hidden: usize,
    /// Diversity regularizer weight.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default = "defaults::kl_warmup_steps")]
    pub kl_warmup_steps: u64,
    #[serde(default = "defaults::max_words")]
    pub max_words: usize,
    #[serde(default = "defaults::max_len")]
    pub max_len: usize,
    #[serde(default = "defaults::lm_min_count")]
    pub lm_min_count: u32,
    #[serde(default = "defaults::tm_min_docs")]
    pub tm_min_docs: u32,
    #[serde(default = "defaults::tm_top_frac")]
    pub tm_top_frac: f64,
    /// Optional stop word file; the built-in list is used when absent.
    #[serde(default)]
    pub stoplist: Option<String>,
    #[serde(default = "defaults::dev_fraction")]
    pub dev_fraction: f64,
    /// Monte-Carlo samples for the sequence reconstruction expectation.
    #[serde(default = "defaults::seq_samples")]
    pub seq_samples: usize,
    /// Draws averaged for mixed-topic generation.
    #[serde(default = "defaults::mix_draws")]
    pub mix_draws: usize,
}

mod defaults {
    use super::{Mode, PriorMode};

    pub fn mode() -> Mode {
        Mode::Generation
    }
    pub fn prior_mode() -> PriorMode {
        PriorMode::TopicGmm
    }
    pub fn num_topics() -> usize {
        10
    }
    pub fn flow_depth() -> usize {
        10
    }
    pub fn latent_dim() -> usize {
        32
    }
    pub fn embed_dim() -> usize {
        64
    }
    pub fn ntm_hidden() -> usize {
        256
    }
    pub fn prior_hidden() -> usize {
        64
    }
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn epochs() -> usize {
        10
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn dropout() -> f64 {
        0.4
    }
    pub fn kl_warmup_steps() -> u64 {
        2000
    }
    pub fn max_words() -> usize {
        300
    }
    pub fn max_len() -> usize {
        30
    }
    pub fn lm_min_count() -> u32 {
        10
    }
    pub fn tm_min_docs() -> u32 {
        100
    }
    pub fn tm_top_frac() -> f64 {
        0.001
    }
    pub fn dev_fraction() -> f64 {
        0.1
    }
    pub fn seq_samples() -> usize {
        1
    }
    pub fn mix_draws() -> usize {
        10
    }
}

impl TrainConfig {
    /// Minimal config with paper-scale defaults for everything else.
    pub fn with_corpus(corpus: impl Into<String>) -> Self {
        serde_json::from_value(serde_json::json!({ "corpus": corpus.into() }))
            .expect("defaults are valid")
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden.unwrap_or(match self.mode {
            Mode::Generation => 600,
            Mode::Summarization => 400,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.is_empty() {
            return Err(TrainError::Config("missing required key 'corpus'".into()));
        }
        if self.num_topics < 1 {
            return Err(TrainError::Config("num_topics must be >= 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::Config("lambda must be >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config("dropout must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(TrainError::Config("dev_fraction must lie in [0, 1)".into()));
        }
        if self.max_len < 1 || self.max_words < 1 {
            return Err(TrainError::Config("max_len and max_words must be >= 1".into()));
        }
        if self.seq_samples < 1 {
            return Err(TrainError::Config("seq_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild the computation graph: config hyperparameters
/// resolved against the vocabulary sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub lm_vocab: usize,
    pub tm_vocab: usize,
    pub num_topics: usize,
    pub flow_depth: usize,
    pub latent: usize,
    pub hidden: usize,
    pub embed: usize,
    pub ntm_hidden: usize,
    pub prior_hidden: usize,
    pub mode: Mode,
    pub prior_mode: PriorMode,
}

impl ModelDims {
    pub fn from_config(config: &TrainConfig, lm_vocab: usize, tm_vocab: usize) -> Self {
        ModelDims {
            lm_vocab,
            tm_vocab,
            num_topics: config.num_topics,
            flow_depth: config.flow_depth,
            latent: config.latent_dim,
            hidden: config.hidden_size(),
            embed: config.embed_dim,
            ntm_hidden: config.ntm_hidden,
            prior_hidden: config.prior_hidden,
            mode: config.mode,
            prior_mode: config.prior_mode,
        }
    }

    pub fn nsm(&self) -> NsmDims {
        NsmDims {
            lm_vocab: self.lm_vocab,
            embed: self.embed,
            hidden: self.hidden,
            latent: self.latent,
        }
    }

    pub fn ntm(&self) -> NtmDims {
        NtmDims {
            topic_vocab: self.tm_vocab,
            num_topics: self.num_topics,
            hidden: self.ntm_hidden,
        }
    }
}

/// Weight initialization scale for linear and recurrent maps.
pub const INIT_SCALE: f64 = 0.05;

/// Initialize every trainable array for the given dimensions, deterministic
/// from the seed. Biases and topic-word logits start at zero.
pub fn init_params(dims: &ModelDims, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut rng = rng::stream(seed, "init", 0);
    NtmParams::init(&mut store, dims.ntm(), &mut rng, INIT_SCALE);
    if dims.prior_mode == PriorMode::TopicGmm {
        PriorNets::init(
            &mut store,
            PriorNetDims {
                topic_vocab: dims.tm_vocab,
                hidden: dims.prior_hidden,
                latent: dims.latent,
            },
            &mut rng,
            INIT_SCALE,
        );
    }
    let nsm_dims = dims.nsm();
    let enc_dim = nsm_dims.encoding_dim();
    PosteriorHead::init(&mut store, enc_dim, dims.num_topics, dims.latent, &mut rng, INIT_SCALE);
    FlowChain::init(&mut store, dims.flow_depth, enc_dim, dims.latent, &mut rng, INIT_SCALE);
    match dims.mode {
        Mode::Generation => NsmParams::init(&mut store, nsm_dims, true, &mut rng, INIT_SCALE),
        Mode::Summarization => {
            NsmParams::init(&mut store, nsm_dims, false, &mut rng, INIT_SCALE);
            SumParams::init(&mut store, nsm_dims, &mut rng, INIT_SCALE);
        }
    }
    store
}

/// Per-batch values of every objective term, batch-mean reduced.
///
/// `total_objective` always satisfies
/// `ntm_recon - ntm_kl + seq_recon - u_kl + lambda * diversity_r` regardless
/// of the KL warm-up weight applied to the optimized loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub ntm_recon: f64,
    pub ntm_kl: f64,
    pub seq_recon: f64,
    pub u_kl: f64,
    pub cat_kl: f64,
    pub component_kl: f64,
    pub diversity_r: f64,
    pub lambda: f64,
    pub total_objective: f64,
}

/// Frozen noise for one batch item; drawing it up front keeps every
/// evaluation of the objective (including finite-difference probes) on the
/// same function.
#[derive(Debug, Clone)]
pub struct ItemNoise {
    pub theta_eps: Vec<f64>,
    pub z_u: f64,
    pub z_eps: Vec<f64>,
    pub dropout_seed: u64,
    /// When set, overrides the inverse-CDF component choice.
    pub pinned_component: Option<usize>,
}

/// Draw the noise bundle for every item of a batch.
pub fn draw_batch_noise(dims: &ModelDims, seed: u64, step: u64, batch_len: usize) -> Vec<ItemNoise> {
    (0..batch_len)
        .map(|i| {
            let label = step.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut r = rng::stream(seed, "elbo_noise", label);
            ItemNoise {
                theta_eps: rng::normal_vec(&mut r, dims.num_topics),
                z_u: rng::uniform(&mut r),
                z_eps: rng::normal_vec(&mut r, dims.latent),
                dropout_seed: seed ^ label.rotate_left(17),
                pinned_component: None,
            }
        })
        .collect()
}

/// Tape handles for the objective terms.
pub struct ElboVars {
    pub total: Var,
    pub optimized: Var,
    pub ntm_recon: Var,
    pub ntm_kl: Var,
    pub seq_recon: Var,
    pub u_kl: Var,
    pub cat_kl: Var,
    pub component_kl: Var,
    pub diversity_r: Var,
    pub lambda: f64,
}

impl ElboVars {
    pub fn breakdown(&self, tape: &Tape) -> ElboBreakdown {
        ElboBreakdown {
            ntm_recon: tape.value(self.ntm_recon).item(),
            ntm_kl: tape.value(self.ntm_kl).item(),
            seq_recon: tape.value(self.seq_recon).item(),
            u_kl: tape.value(self.u_kl).item(),
            cat_kl: tape.value(self.cat_kl).item(),
            component_kl: tape.value(self.component_kl).item(),
            diversity_r: tape.value(self.diversity_r).item(),
            lambda: self.lambda,
            total_objective: tape.value(self.total).item(),
        }
    }
}

/// Evaluation-vs-training switches for one objective build.
#[derive(Debug, Clone, Copy)]
pub struct ElboOpts {
    pub lambda: f64,
    /// Warm-up weight in `[0, 1]` applied to both KL terms in the optimized loss.
    pub kl_weight: f64,
    /// Dropout rate; zero disables masking entirely.
    pub dropout: f64,
}

impl ElboOpts {
    pub fn eval(lambda: f64) -> Self {
        ElboOpts { lambda, kl_weight: 1.0, dropout: 0.0 }
    }
}

fn mean_of(tape: &mut Tape, parts: &[Var]) -> crate::diffcore::Result<Var> {
    let total = tape.sum_scalars(parts)?;
    tape.scale(total, 1.0 / parts.len().max(1) as f64)
}

/// Build the full objective for a batch on a fresh tape.
///
/// One `theta` sample and one `z0` sample per item (per the single-sample
/// approximation); the prior mixture reuses the item's `theta` sample through
/// `t = g(theta)`. In summarization mode the posterior reads the source
/// sequence and the decoder attends over it.
pub fn compute_elbo<'p>(
    store: &'p ParamStore,
    dims: &ModelDims,
    batch: &Batch,
    noise: &[ItemNoise],
    opts: &ElboOpts,
) -> Result<(Tape<'p>, ElboVars)> {
    if batch.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    assert_eq!(batch.len(), noise.len(), "one noise bundle per item");
    let mut tape = Tape::new(store);
    let beta = ntm::beta_rows(&mut tape, dims.num_topics)?;

    let mut ntm_recons = Vec::with_capacity(batch.len());
    let mut ntm_kls = Vec::with_capacity(batch.len());
    let mut seq_recons = Vec::with_capacity(batch.len());
    let mut u_totals = Vec::with_capacity(batch.len());
    let mut u_cats = Vec::with_capacity(batch.len());
    let mut u_comps = Vec::with_capacity(batch.len());

    for (item_idx, item) in batch.items.iter().enumerate() {
        let n = &noise[item_idx];
        let q_theta = ntm::encode_doc(&mut tape, &item.bow.as_f64())?;
        let theta = latent::sample_gaussian_on_tape(&mut tape, q_theta, &n.theta_eps)?;
        let t = ntm::topic_embed(&mut tape, theta)?;
        ntm_recons.push(ntm::doc_log_likelihood(&mut tape, &item.bow.as_f64(), t, &beta)?);
        ntm_kls.push(ntm::ntm_kl(&mut tape, q_theta)?);

        let prior = match dims.prior_mode {
            PriorMode::TopicGmm => latent::prior_gmm(&mut tape, &beta, t)?,
            PriorMode::StandardGaussian => {
                latent::standard_prior_gmm(&mut tape, dims.num_topics, dims.latent, t)?
            }
        };

        let mut dropout_rng = rng::stream(n.dropout_seed, "dropout", 0);
        let mut dropout = if opts.dropout > 0.0 {
            Some(Dropout { rate: opts.dropout, rng: &mut dropout_rng })
        } else {
            None
        };

        let encoder_input = match dims.mode {
            Mode::Generation => &item.sequence.ids,
            Mode::Summarization => {
                &item
                    .source
                    .as_ref()
                    .ok_or_else(|| {
                        TrainError::Config("summarization batch item lacks a source".into())
                    })?
                    .ids
            }
        };
        let (h, annotations) =
            nsm::encode_sequence(&mut tape, encoder_input, dims.nsm(), &mut dropout)?;

        let q0 = latent::posterior_gmm(&mut tape, h, dims.num_topics, dims.latent)?;
        let z0 = sample_posterior(&mut tape, &q0, n)?;
        let (zk, _) = latent::apply_flow(&mut tape, z0, h, dims.flow_depth)?;

        let seq_recon = match dims.mode {
            Mode::Generation => {
                nsm::decode_log_likelihood(&mut tape, &item.sequence.ids, zk, &mut dropout)?
            }
            Mode::Summarization => {
                summarizer::attn_decode_log_likelihood(
                    &mut tape,
                    &item.sequence.ids,
                    &annotations,
                    h,
                    zk,
                    &mut dropout,
                    false,
                )?
                .log_likelihood
            }
        };
        seq_recons.push(seq_recon);

        let ukl = latent::gmm_kl_upper_bound_on_tape(&mut tape, &q0, &prior)?;
        u_totals.push(ukl.total);
        u_cats.push(ukl.cat);
        u_comps.push(ukl.component);
    }

    let ntm_recon = mean_of(&mut tape, &ntm_recons)?;
    let ntm_kl = mean_of(&mut tape, &ntm_kls)?;
    let seq_recon = mean_of(&mut tape, &seq_recons)?;
    let u_kl = mean_of(&mut tape, &u_totals)?;
    let cat_kl = mean_of(&mut tape, &u_cats)?;
    let component_kl = mean_of(&mut tape, &u_comps)?;
    let diversity_r = ntm::diversity_regularizer_on_tape(&mut tape, &beta)?;

    let build_total = |tape: &mut Tape, kl_w: f64| -> crate::diffcore::Result<Var> {
        let nk = tape.scale(ntm_kl, kl_w)?;
        let uk = tape.scale(u_kl, kl_w)?;
        let a = tape.sub(ntm_recon, nk)?;
        let b = tape.add(a, seq_recon)?;
        let c = tape.sub(b, uk)?;
        let r = tape.scale(diversity_r, opts.lambda)?;
        tape.add(c, r)
    };
    let total = build_total(&mut tape, 1.0)?;
    let optimized =
        if (opts.kl_weight - 1.0).abs() < f64::EPSILON { total } else { build_total(&mut tape, opts.kl_weight)? };

    let vars = ElboVars {
        total,
        optimized,
        ntm_recon,
        ntm_kl,
        seq_recon,
        u_kl,
        cat_kl,
        component_kl,
        diversity_r,
        lambda: opts.lambda,
    };
    check_finite(&tape, &vars)?;
    Ok((tape, vars))
}

fn sample_posterior(
    tape: &mut Tape,
    q0: &GmmVars,
    noise: &ItemNoise,
) -> crate::diffcore::Result<Var> {
    match noise.pinned_component {
        Some(idx) => latent::sample_gaussian_on_tape(tape, q0.components[idx], &noise.z_eps),
        None => {
            let (z0, _) = latent::sample_gmm_on_tape(tape, q0, noise.z_u, &noise.z_eps)?;
            Ok(z0)
        }
    }
}

fn check_finite(tape: &Tape, vars: &ElboVars) -> Result<()> {
    let checks = [
        ("ntm_recon", vars.ntm_recon),
        ("ntm_kl", vars.ntm_kl),
        ("seq_recon", vars.seq_recon),
        ("u_kl", vars.u_kl),
        ("diversity_r", vars.diversity_r),
        ("total", vars.total),
    ];
    for (term, var) in checks {
        if !tape.value(var).item().is_finite() {
            return Err(TrainError::NonFiniteTerm { term });
        }
    }
    Ok(())
}

/// Component indices the current parameters would select for each item; used
/// to pin the discrete choice during gradient checks.
pub fn chosen_components(
    store: &ParamStore,
    dims: &ModelDims,
    batch: &Batch,
    noise: &[ItemNoise],
) -> Result<Vec<usize>> {
    let mut tape = Tape::new(store);
    let mut picks = Vec::with_capacity(batch.len());
    for (item, n) in batch.items.iter().zip(noise) {
        let ids = match dims.mode {
            Mode::Generation => &item.sequence.ids,
            Mode::Summarization => &item.source.as_ref().expect("source").ids,
        };
        let (h, _) = nsm::encode_sequence(&mut tape, ids, dims.nsm(), &mut None)?;
        let q0 = latent::posterior_gmm(&mut tape, h, dims.num_topics, dims.latent)?;
        let weights = tape.value(q0.weights).data();
        let mut acc = 0.0;
        let mut idx = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if n.z_u < acc {
                idx = i;
                break;
            }
        }
        picks.push(idx);
    }
    Ok(picks)
}

// ── Optimizer ────────────────────────────────────────────────────────

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update minimizing the given loss gradients.
    pub fn update(
        &mut self,
        store: &mut ParamStore,
        grads: &BTreeMap<String, crate::diffcore::Tensor>,
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, grad) in grads {
            let g = grad.data();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let param = store.get_mut(name)?.data_mut();
            for i in 0..g.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

fn clip_gradients(grads: &mut BTreeMap<String, crate::diffcore::Tensor>, max_norm: f64) {
    let total: f64 = grads.values().flat_map(|t| t.data()).map(|g| g * g).sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.values_mut() {
            for g in t.data_mut() {
                *g *= scale;
            }
        }
    }
}

/// One optimizer step maximizing the (KL-warmed) objective. Returns the
/// breakdown at the pre-update parameters.
pub fn train_step(
    store: &mut ParamStore,
    dims: &ModelDims,
    batch: &Batch,
    noise: &[ItemNoise],
    opts: &ElboOpts,
    adam: &mut AdamState,
    lr: f64,
) -> Result<ElboBreakdown> {
    for (name, tensor) in store.iter() {
        if !tensor.all_finite() {
            return Err(TrainError::NanParam(name.to_string()));
        }
    }
    let (breakdown, mut grads) = {
        let (mut tape, vars) = compute_elbo(store, dims, batch, noise, opts)?;
        let breakdown = vars.breakdown(&tape);
        let loss = tape.neg(vars.optimized)?;
        (breakdown, tape.backward(loss)?.into_params())
    };
    for (name, grad) in &grads {
        if !grad.all_finite() {
            return Err(TrainError::NanGrad(name.clone()));
        }
    }
    clip_gradients(&mut grads, GRAD_CLIP);
    adam.update(store, &grads, lr)?;
    Ok(breakdown)
}

/// KL warm-up weight at a global step.
pub fn kl_weight_at(step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        1.0
    } else {
        ((step as f64 + 1.0) / warmup_steps as f64).min(1.0)
    }
}

/// One metrics row per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ntm_recon: f64,
    pub ntm_kl: f64,
    pub seq_recon: f64,
    pub u_kl: f64,
    pub cat_kl: f64,
    pub component_kl: f64,
    pub diversity_r: f64,
    pub total_objective: f64,
    pub dev_ppl: f64,
    pub dev_ukl: f64,
}

/// Outcome of a fit: the best-dev parameters plus the per-epoch log.
pub struct FitOutcome {
    pub store: ParamStore,
    pub dims: ModelDims,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub steps: u64,
}

/// Deterministic dev split: seeded shuffle, first `frac` becomes dev.
pub fn split_dev(items: &[Item], frac: f64, seed: u64) -> (Vec<Item>, Vec<Item>) {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut r = rng::stream(seed, "dev_split", 0);
    order.shuffle(&mut r);
    let n_dev = ((items.len() as f64) * frac).floor() as usize;
    let dev = order[..n_dev].iter().map(|&i| items[i].clone()).collect();
    let train = order[n_dev..].iter().map(|&i| items[i].clone()).collect();
    (train, dev)
}

/// Full training loop: shuffled batches per epoch, KL warm-up, per-epoch dev
/// perplexity, best-dev parameters retained. With zero epochs the returned
/// parameters equal the initialization.
pub fn fit(
    config: &TrainConfig,
    lm: &Vocab,
    tm: &Vocab,
    train_items: &[Item],
    dev_items: &[Item],
) -> Result<FitOutcome> {
    config.validate()?;
    if train_items.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let dims = ModelDims::from_config(config, lm.len(), tm.len());
    let mut store = init_params(&dims, config.seed);
    let mut adam = AdamState::new();
    let mut logs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        let batches = crate::corpus::batch_iter(
            train_items,
            config.batch_size,
            config.seed.wrapping_add(epoch as u64),
            true,
        );
        let mut sums = [0.0f64; 8];
        let mut n_steps = 0usize;
        for batch in &batches {
            let noise = draw_batch_noise(&dims, config.seed, step, batch.len());
            let opts = ElboOpts {
                lambda: config.lambda,
                kl_weight: kl_weight_at(step, config.kl_warmup_steps),
                dropout: config.dropout,
            };
            let bd =
                train_step(&mut store, &dims, batch, &noise, &opts, &mut adam, config.learning_rate)?;
            sums[0] += bd.ntm_recon;
            sums[1] += bd.ntm_kl;
            sums[2] += bd.seq_recon;
            sums[3] += bd.u_kl;
            sums[4] += bd.cat_kl;
            sums[5] += bd.component_kl;
            sums[6] += bd.diversity_r;
            sums[7] += bd.total_objective;
            step += 1;
            n_steps += 1;
        }
        let denom = n_steps.max(1) as f64;
        let dev_eval = if dev_items.is_empty() { train_items } else { dev_items };
        let (dev_ppl, dev_ukl) = crate::eval::perplexity_bound(
            &store,
            &dims,
            dev_eval,
            1,
            config.seed.wrapping_add(0x5eed),
        )
        .map_err(|e| TrainError::Config(format!("dev evaluation failed: {e}")))?;
        logs.push(EpochLog {
            epoch,
            ntm_recon: sums[0] / denom,
            ntm_kl: sums[1] / denom,
            seq_recon: sums[2] / denom,
            u_kl: sums[3] / denom,
            cat_kl: sums[4] / denom,
            component_kl: sums[5] / denom,
            diversity_r: sums[6] / denom,
            total_objective: sums[7] / denom,
            dev_ppl,
            dev_ukl,
        });
        let is_better = best.as_ref().is_none_or(|(b, _, _)| dev_ppl < *b);
        if is_better {
            best = Some((dev_ppl, epoch, store.clone()));
        }
    }

    let (best_epoch, best_store) = match best {
        Some((_, e, s)) => (e, s),
        None => (0, store),
    };
    Ok(FitOutcome { store: best_store, dims, logs, best_epoch, steps: step })
}

// ── Generation-side latent draws ─────────────────────────────────────

/// How the latent code is drawn for unconditional generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TopicSpec {
    /// `theta ~ N(0, I)`, `t = g(theta)`, one mixture draw.
    Free,
    /// One-hot topic usage; the draw always lands in this component.
    Topic(usize),
    /// Uniform usage over the listed topics; the latent is the average of
    /// `mix_draws` mixture draws.
    Mix(Vec<usize>),
}

/// Draw a latent code from the (topic-guided) prior for generation.
/// Returns the code and a label: the selected component, or `None` for mixes.
pub fn generate_latent(
    store: &ParamStore,
    dims: &ModelDims,
    spec: &TopicSpec,
    mix_draws: usize,
    seed: u64,
    draw_index: u64,
) -> Result<(Vec<f64>, Option<usize>)> {
    let mut noise = rng::stream(seed, "gen_latent", draw_index);
    let mut tape = Tape::new(store);
    let beta = ntm::beta_rows(&mut tape, dims.num_topics)?;

    let t = match spec {
        TopicSpec::Free => {
            let theta = tape.constant_vector(rng::normal_vec(&mut noise, dims.num_topics))?;
            ntm::topic_embed(&mut tape, theta)?
        }
        TopicSpec::Topic(i) => {
            if *i >= dims.num_topics {
                return Err(TrainError::Config(format!(
                    "topic {i} out of range (T = {})",
                    dims.num_topics
                )));
            }
            let mut one_hot = vec![0.0; dims.num_topics];
            one_hot[*i] = 1.0;
            tape.constant_vector(one_hot)?
        }
        TopicSpec::Mix(ids) => {
            if ids.is_empty() {
                return Err(TrainError::Config("empty topic mix".into()));
            }
            let mut usage = vec![0.0; dims.num_topics];
            for &i in ids {
                if i >= dims.num_topics {
                    return Err(TrainError::Config(format!(
                        "topic {i} out of range (T = {})",
                        dims.num_topics
                    )));
                }
                usage[i] += 1.0 / ids.len() as f64;
            }
            tape.constant_vector(usage)?
        }
    };
    let prior = match dims.prior_mode {
        PriorMode::TopicGmm => latent::prior_gmm(&mut tape, &beta, t)?,
        PriorMode::StandardGaussian => {
            latent::standard_prior_gmm(&mut tape, dims.num_topics, dims.latent, t)?
        }
    };
    let plain = prior.to_plain(&tape);

    match spec {
        TopicSpec::Mix(_) => {
            let draws = mix_draws.max(1);
            let mut acc = vec![0.0; dims.latent];
            for _ in 0..draws {
                let u = rng::uniform(&mut noise);
                let eps = rng::normal_vec(&mut noise, dims.latent);
                let (z, _) = latent::sample_gmm(&plain, u, &eps);
                for (a, v) in acc.iter_mut().zip(&z) {
                    *a += v;
                }
            }
            for a in &mut acc {
                *a /= draws as f64;
            }
            Ok((acc, None))
        }
        _ => {
            let u = rng::uniform(&mut noise);
            let eps = rng::normal_vec(&mut noise, dims.latent);
            let (z, idx) = latent::sample_gmm(&plain, u, &eps);
            Ok((z, Some(idx)))
        }
    }
}

/// Stratified prior draws for the latent dump: `n` rows cycling through the
/// mixture components round robin.
pub fn sample_latent_rows(
    store: &ParamStore,
    dims: &ModelDims,
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::with_capacity(n);
    for draw in 0..n {
        let comp = draw % dims.num_topics;
        let (z, label) =
            generate_latent(store, dims, &TopicSpec::Topic(comp), 1, seed, draw as u64)?;
        rows.push((label.unwrap_or(comp), z));
    }
    Ok(rows)
}
