//! Conditional extension: attention-based decoder guided by the latent code,
//! with the posterior computed from the source article.
//!
//! The source is encoded with the shared bidirectional GRU; each decoding
//! step attends over the per-position annotations with additive scoring, and
//! the latent code is concatenated to the decoder input alongside the
//! context vector.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenSequence, BOS, EOS};
use crate::diffcore::{DiffError, ParamStore, Result, Tape, Tensor, Var};
use crate::latent::{self, init_matrix, GmmVars};
use crate::nsm::{self, DecodeStrategy, Dropout, GruCell, NsmDims};
use crate::rng;

/// Summarizer-specific parameter names (encoder and embeddings are shared
/// with the sequence model).
pub struct SumParams;

impl SumParams {
    pub const DEC: &'static str = "sum.dec";
    pub const DEC_INIT_W: &'static str = "sum.dec.init.w";
    pub const DEC_INIT_B: &'static str = "sum.dec.init.b";
    pub const ATT_W: &'static str = "sum.att.w";
    pub const ATT_U: &'static str = "sum.att.u";
    pub const ATT_B: &'static str = "sum.att.b";
    pub const ATT_V: &'static str = "sum.att.v";
    pub const OUT_W: &'static str = "sum.out.w";
    pub const OUT_B: &'static str = "sum.out.b";

    pub fn init(store: &mut ParamStore, dims: NsmDims, rng: &mut ChaCha8Rng, scale: f64) {
        let enc_dim = dims.encoding_dim();
        let att_hidden = dims.hidden;
        GruCell::init(
            store,
            Self::DEC,
            dims.embed + dims.latent + enc_dim,
            dims.hidden,
            rng,
            scale,
        );
        store.insert(Self::DEC_INIT_W, init_matrix(dims.hidden, enc_dim, rng, scale));
        store.insert(Self::DEC_INIT_B, Tensor::zeros(vec![dims.hidden]));
        store.insert(Self::ATT_W, init_matrix(att_hidden, dims.hidden, rng, scale));
        store.insert(Self::ATT_U, init_matrix(att_hidden, enc_dim, rng, scale));
        store.insert(Self::ATT_B, Tensor::zeros(vec![att_hidden]));
        store.insert(Self::ATT_V, init_matrix(1, att_hidden, rng, scale));
        store.insert(Self::OUT_W, init_matrix(dims.lm_vocab, dims.hidden, rng, scale));
        store.insert(Self::OUT_B, Tensor::zeros(vec![dims.lm_vocab]));
    }
}

/// Encode the source article; returns per-position annotations plus the
/// concatenated final states that parameterize `q(z|x)` and seed the flow.
pub fn encode_source(
    tape: &mut Tape,
    ids: &[usize],
    dims: NsmDims,
    dropout: &mut Option<Dropout>,
) -> Result<(Vec<Var>, Var)> {
    let (h, annotations) = nsm::encode_sequence(tape, ids, dims, dropout)?;
    Ok((annotations, h))
}

struct AttnVars {
    w: Var,
    u: Var,
    b: Var,
    v: Var,
}

fn bind_attention(tape: &mut Tape) -> Result<AttnVars> {
    Ok(AttnVars {
        w: tape.param(SumParams::ATT_W)?,
        u: tape.param(SumParams::ATT_U)?,
        b: tape.param(SumParams::ATT_B)?,
        v: tape.param(SumParams::ATT_V)?,
    })
}

/// Additive alignment: `score_j = v . tanh(W s + U a_j + b)`, softmaxed over
/// source positions; context is the weighted sum of annotations.
fn attend(
    tape: &mut Tape,
    att: &AttnVars,
    state: Var,
    annotations: &[Var],
    uniform: bool,
) -> Result<(Var, Var)> {
    let weights = if uniform {
        let n = annotations.len() as f64;
        tape.constant_vector(vec![1.0 / n; annotations.len()])?
    } else {
        let ws = tape.matvec(att.w, state)?;
        let mut scores = Vec::with_capacity(annotations.len());
        for &a in annotations {
            let ua = tape.matvec(att.u, a)?;
            let pre = tape.add(ws, ua)?;
            let pre = tape.add(pre, att.b)?;
            let act = tape.tanh(pre)?;
            let score = tape.matvec(att.v, act)?;
            scores.push(tape.pick(score, 0)?);
        }
        let stacked = tape.stack(&scores)?;
        tape.softmax(stacked)?
    };
    let mut context: Option<Var> = None;
    for (j, &a) in annotations.iter().enumerate() {
        let wj = tape.pick(weights, j)?;
        let part = tape.smul(wj, a)?;
        context = Some(match context {
            Some(prev) => tape.add(prev, part)?,
            None => part,
        });
    }
    Ok((context.expect("nonempty annotations"), weights))
}

/// Teacher-forced decode with per-step attention weights exposed for tests.
pub struct AttnDecode {
    pub log_likelihood: Var,
    pub attention: Vec<Var>,
}

pub fn attn_decode_log_likelihood(
    tape: &mut Tape,
    target_ids: &[usize],
    annotations: &[Var],
    source_h: Var,
    z: Var,
    dropout: &mut Option<Dropout>,
    uniform_attention: bool,
) -> Result<AttnDecode> {
    if target_ids.len() < 2 {
        return Err(DiffError::Degenerate {
            what: "attention decoder",
            detail: "target needs at least one token".into(),
        });
    }
    if annotations.is_empty() {
        return Err(DiffError::Degenerate {
            what: "attention decoder",
            detail: "empty source".into(),
        });
    }
    let dec = GruCell::bind(tape, SumParams::DEC)?;
    let att = bind_attention(tape)?;
    let init_w = tape.param(SumParams::DEC_INIT_W)?;
    let init_b = tape.param(SumParams::DEC_INIT_B)?;
    let out_w = tape.param(SumParams::OUT_W)?;
    let out_b = tape.param(SumParams::OUT_B)?;
    let embed = tape.param(nsm::NsmParams::EMBED)?;

    let mut h = tape.affine(init_w, source_h, init_b)?;
    let mut log_probs = Vec::with_capacity(target_ids.len() - 1);
    let mut attention = Vec::with_capacity(target_ids.len() - 1);
    for m in 0..target_ids.len() - 1 {
        let (context, weights) = attend(tape, &att, h, annotations, uniform_attention)?;
        attention.push(weights);
        let e = tape.row(embed, target_ids[m])?;
        let e = nsm::apply_dropout(tape, e, dropout)?;
        let ez = tape.concat(e, z)?;
        let x = tape.concat(ez, context)?;
        h = nsm::gru_step(tape, &dec, x, h)?;
        let logits = tape.affine(out_w, h, out_b)?;
        let probs = tape.softmax(logits)?;
        let p_true = tape.pick(probs, target_ids[m + 1])?;
        log_probs.push(tape.log(p_true)?);
    }
    let log_likelihood = tape.sum_scalars(&log_probs)?;
    Ok(AttnDecode { log_likelihood, attention })
}

/// How the summary latent is produced from the source posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentMode {
    /// Sample the mixture with the given seed, then apply the flow.
    Sampled,
    /// Deterministic `z0 = sum_i pi_i mu_i`, then apply the flow.
    PosteriorMean,
}

/// Options for [`summarize`].
#[derive(Debug, Clone, Copy)]
pub struct SummarizeOpts {
    pub strategy: DecodeStrategy,
    pub max_len: usize,
    pub seed: u64,
    pub latent_mode: LatentMode,
    pub flow_depth: usize,
    pub num_topics: usize,
    pub latent: usize,
}

fn posterior_latent(
    tape: &mut Tape,
    h: Var,
    opts: &SummarizeOpts,
) -> Result<Var> {
    let q0: GmmVars = latent::posterior_gmm(tape, h, opts.num_topics, opts.latent)?;
    let z0 = match opts.latent_mode {
        LatentMode::Sampled => {
            let mut noise = rng::stream(opts.seed, "summarize_latent", 0);
            let u = rng::uniform(&mut noise);
            let eps = rng::normal_vec(&mut noise, opts.latent);
            let (z0, _) = latent::sample_gmm_on_tape(tape, &q0, u, &eps)?;
            z0
        }
        LatentMode::PosteriorMean => {
            let mut acc: Option<Var> = None;
            for (i, comp) in q0.components.iter().enumerate() {
                let wi = tape.pick(q0.weights, i)?;
                let part = tape.smul(wi, comp.mean)?;
                acc = Some(match acc {
                    Some(prev) => tape.add(prev, part)?,
                    None => part,
                });
            }
            acc.expect("at least one component")
        }
    };
    let (zk, _) = latent::apply_flow(tape, z0, h, opts.flow_depth)?;
    Ok(zk)
}

/// Summarize one source sequence: encode, draw the latent from `q(z|x)`,
/// decode with attention. Deterministic given the seed.
pub fn summarize(
    store: &ParamStore,
    source_ids: &[usize],
    dims: NsmDims,
    opts: &SummarizeOpts,
) -> Result<TokenSequence> {
    if source_ids.is_empty() {
        return Err(DiffError::Degenerate { what: "summarizer", detail: "empty source".into() });
    }
    let mut tape = Tape::new(store);
    let (annotations, h) = encode_source(&mut tape, source_ids, dims, &mut None)?;
    let z = posterior_latent(&mut tape, h, opts)?;

    let dec = GruCell::bind(&mut tape, SumParams::DEC)?;
    let att = bind_attention(&mut tape)?;
    let init_w = tape.param(SumParams::DEC_INIT_W)?;
    let init_b = tape.param(SumParams::DEC_INIT_B)?;
    let out_w = tape.param(SumParams::OUT_W)?;
    let out_b = tape.param(SumParams::OUT_B)?;
    let embed = tape.param(nsm::NsmParams::EMBED)?;

    let mut rng_decode = rng::stream(opts.seed, "summarize_decode", 0);
    let mut h_dec = tape.affine(init_w, h, init_b)?;
    let mut ids = vec![BOS];
    let mut prev = BOS;
    for _ in 0..opts.max_len {
        let (context, _) = attend(&mut tape, &att, h_dec, &annotations, false)?;
        let e = tape.row(embed, prev)?;
        let ez = tape.concat(e, z)?;
        let x = tape.concat(ez, context)?;
        h_dec = nsm::gru_step(&mut tape, &dec, x, h_dec)?;
        let logits = tape.affine(out_w, h_dec, out_b)?;
        let scaled = match opts.strategy {
            DecodeStrategy::Temperature(temp) if temp > 0.0 => tape.scale(logits, 1.0 / temp)?,
            _ => logits,
        };
        let probs_var = tape.softmax(scaled)?;
        let probs = tape.value(probs_var).data().to_vec();
        let next = match opts.strategy {
            DecodeStrategy::Greedy => {
                let mut best = 0;
                for (i, &p) in probs.iter().enumerate() {
                    if p > probs[best] {
                        best = i;
                    }
                }
                best
            }
            DecodeStrategy::Temperature(_) => {
                let u = rng::uniform(&mut rng_decode);
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        if next == EOS {
            break;
        }
        ids.push(next);
        prev = next;
    }
    ids.push(EOS);
    Ok(TokenSequence { ids })
}
