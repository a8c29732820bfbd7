//! Neural sequence model: bidirectional GRU encoder, GRU decoder conditioned
//! on the latent code, and decoding strategies for generation.
//!
//! The latent code enters the decoder twice: a linear map of it initializes
//! the decoder state, and it is concatenated to the word embedding at every
//! step.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenSequence, BOS, EOS};
use crate::diffcore::{DiffError, ParamStore, Result, Tape, Tensor, Var};
use crate::latent::init_matrix;
use crate::rng;

/// Model dimensions for the sequence side.
#[derive(Debug, Clone, Copy)]
pub struct NsmDims {
    pub lm_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl NsmDims {
    /// Width of the bidirectional encoding (and of flow input `v0`).
    pub fn encoding_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// Update gate, reset gate, candidate: weights and biases of one GRU cell.
///
/// Recurrence: `zg = sig(Wz x + Uz h + bz)`, `r = sig(Wr x + Ur h + br)`,
/// `hc = tanh(Wh x + Uh (r*h) + bh)`, `h' = (1-zg)*hc + zg*h`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    wz: Var,
    uz: Var,
    bz: Var,
    wr: Var,
    ur: Var,
    br: Var,
    wh: Var,
    uh: Var,
    bh: Var,
}

pub struct GruCell;

impl GruCell {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
        scale: f64,
    ) {
        for gate in ["z", "r", "h"] {
            store.insert(format!("{prefix}.w{gate}"), init_matrix(hidden, input, rng, scale));
            store.insert(format!("{prefix}.u{gate}"), init_matrix(hidden, hidden, rng, scale));
            store.insert(format!("{prefix}.b{gate}"), Tensor::zeros(vec![hidden]));
        }
    }

    pub fn bind(tape: &mut Tape, prefix: &str) -> Result<GruVars> {
        Ok(GruVars {
            wz: tape.param(&format!("{prefix}.wz"))?,
            uz: tape.param(&format!("{prefix}.uz"))?,
            bz: tape.param(&format!("{prefix}.bz"))?,
            wr: tape.param(&format!("{prefix}.wr"))?,
            ur: tape.param(&format!("{prefix}.ur"))?,
            br: tape.param(&format!("{prefix}.br"))?,
            wh: tape.param(&format!("{prefix}.wh"))?,
            uh: tape.param(&format!("{prefix}.uh"))?,
            bh: tape.param(&format!("{prefix}.bh"))?,
        })
    }
}

pub fn gru_step(tape: &mut Tape, g: &GruVars, x: Var, h: Var) -> Result<Var> {
    let zx = tape.affine(g.wz, x, g.bz)?;
    let zh = tape.matvec(g.uz, h)?;
    let zg = tape.add(zx, zh)?;
    let zg = tape.sigmoid(zg)?;

    let rx = tape.affine(g.wr, x, g.br)?;
    let rh = tape.matvec(g.ur, h)?;
    let r = tape.add(rx, rh)?;
    let r = tape.sigmoid(r)?;

    let gated = tape.mul(r, h)?;
    let cx = tape.affine(g.wh, x, g.bh)?;
    let ch = tape.matvec(g.uh, gated)?;
    let cand = tape.add(cx, ch)?;
    let cand = tape.tanh(cand)?;

    let keep = tape.mul(zg, h)?;
    let gate_inv = tape.rsub_const(1.0, zg)?;
    let update = tape.mul(gate_inv, cand)?;
    tape.add(keep, update)
}

/// Inverted-scaling dropout mask; only used while training.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

pub fn apply_dropout(tape: &mut Tape, x: Var, dropout: &mut Option<Dropout>) -> Result<Var> {
    let Some(d) = dropout else { return Ok(x) };
    if d.rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - d.rate;
    let n = tape.value(x).numel();
    let mask: Vec<f64> =
        (0..n).map(|_| if rng::uniform(d.rng) < keep { 1.0 / keep } else { 0.0 }).collect();
    let mask = tape.constant_vector(mask)?;
    tape.mul(x, mask)
}

/// Sequence-model parameter names.
pub struct NsmParams;

impl NsmParams {
    pub const EMBED: &'static str = "nsm.embed";
    pub const ENC_FWD: &'static str = "nsm.enc.fwd";
    pub const ENC_BWD: &'static str = "nsm.enc.bwd";
    pub const DEC: &'static str = "nsm.dec";
    pub const DEC_INIT_W: &'static str = "nsm.dec.init.w";
    pub const DEC_INIT_B: &'static str = "nsm.dec.init.b";
    pub const OUT_W: &'static str = "nsm.out.w";
    pub const OUT_B: &'static str = "nsm.out.b";

    /// Initialize embeddings, the bidirectional encoder, and (when
    /// `with_decoder`) the latent-conditioned decoder and output projection.
    /// The summarizer reuses the embeddings and encoder but brings its own
    /// decoder.
    pub fn init(
        store: &mut ParamStore,
        dims: NsmDims,
        with_decoder: bool,
        rng: &mut ChaCha8Rng,
        scale: f64,
    ) {
        let NsmDims { lm_vocab, embed, hidden, latent } = dims;
        store.insert(Self::EMBED, init_matrix(lm_vocab, embed, rng, scale));
        GruCell::init(store, Self::ENC_FWD, embed, hidden, rng, scale);
        GruCell::init(store, Self::ENC_BWD, embed, hidden, rng, scale);
        if with_decoder {
            GruCell::init(store, Self::DEC, embed + latent, hidden, rng, scale);
            store.insert(Self::DEC_INIT_W, init_matrix(hidden, latent, rng, scale));
            store.insert(Self::DEC_INIT_B, Tensor::zeros(vec![hidden]));
            store.insert(Self::OUT_W, init_matrix(lm_vocab, hidden, rng, scale));
            store.insert(Self::OUT_B, Tensor::zeros(vec![lm_vocab]));
        }
    }
}

fn embed_token(tape: &mut Tape, id: usize) -> Result<Var> {
    let table = tape.param(NsmParams::EMBED)?;
    tape.row(table, id)
}

/// Bidirectional GRU encoding of a token sequence.
///
/// Returns the concatenation of the final forward and backward states plus
/// one per-position annotation (forward and backward state at that position).
pub fn encode_sequence(
    tape: &mut Tape,
    ids: &[usize],
    dims: NsmDims,
    dropout: &mut Option<Dropout>,
) -> Result<(Var, Vec<Var>)> {
    if ids.is_empty() {
        return Err(DiffError::Degenerate {
            what: "sequence encoder",
            detail: "empty sequence".into(),
        });
    }
    let fwd = GruCell::bind(tape, NsmParams::ENC_FWD)?;
    let bwd = GruCell::bind(tape, NsmParams::ENC_BWD)?;
    let zero = tape.constant(Tensor::zeros(vec![dims.hidden]))?;

    let mut embeds = Vec::with_capacity(ids.len());
    for &id in ids {
        let e = embed_token(tape, id)?;
        embeds.push(apply_dropout(tape, e, dropout)?);
    }

    let mut fwd_states = Vec::with_capacity(ids.len());
    let mut h = zero;
    for &e in &embeds {
        h = gru_step(tape, &fwd, e, h)?;
        fwd_states.push(h);
    }
    let mut bwd_states = vec![zero; ids.len()];
    let mut hb = zero;
    for (pos, &e) in embeds.iter().enumerate().rev() {
        hb = gru_step(tape, &bwd, e, hb)?;
        bwd_states[pos] = hb;
    }

    let h_final = tape.concat(*fwd_states.last().unwrap(), bwd_states[0])?;
    let mut annotations = Vec::with_capacity(ids.len());
    for (f, b) in fwd_states.into_iter().zip(bwd_states) {
        annotations.push(tape.concat(f, b)?);
    }
    Ok((h_final, annotations))
}

/// Teacher-forced log-likelihood `log p(y | z)`: sum over positions of the
/// log-probability of the true next token.
pub fn decode_log_likelihood(
    tape: &mut Tape,
    ids: &[usize],
    z: Var,
    dropout: &mut Option<Dropout>,
) -> Result<Var> {
    if ids.len() < 2 {
        return Err(DiffError::Degenerate {
            what: "decoder",
            detail: "sequence needs at least one target token".into(),
        });
    }
    let dec = GruCell::bind(tape, NsmParams::DEC)?;
    let init_w = tape.param(NsmParams::DEC_INIT_W)?;
    let init_b = tape.param(NsmParams::DEC_INIT_B)?;
    let out_w = tape.param(NsmParams::OUT_W)?;
    let out_b = tape.param(NsmParams::OUT_B)?;

    let mut h = tape.affine(init_w, z, init_b)?;
    let mut log_probs = Vec::with_capacity(ids.len() - 1);
    for m in 0..ids.len() - 1 {
        let e = embed_token(tape, ids[m])?;
        let e = apply_dropout(tape, e, dropout)?;
        let x = tape.concat(e, z)?;
        h = gru_step(tape, &dec, x, h)?;
        let logits = tape.affine(out_w, h, out_b)?;
        let probs = tape.softmax(logits)?;
        let p_true = tape.pick(probs, ids[m + 1])?;
        log_probs.push(tape.log(p_true)?);
    }
    tape.sum_scalars(&log_probs)
}

/// Decoding strategies for generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeStrategy {
    Greedy,
    Temperature(f64),
}

fn choose_token(probs: &[f64], strategy: DecodeStrategy, rng: &mut ChaCha8Rng) -> usize {
    match strategy {
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
            let u = rng::uniform(rng);
            let mut acc = 0.0;
            for (i, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.len() - 1
        }
    }
}

/// Temperature gets applied to logits before the softmax.
fn step_probs(
    tape: &mut Tape,
    logits: Var,
    strategy: DecodeStrategy,
) -> Result<Vec<f64>> {
    let scaled = match strategy {
        DecodeStrategy::Temperature(temp) if temp > 0.0 => tape.scale(logits, 1.0 / temp)?,
        _ => logits,
    };
    let probs = tape.softmax(scaled)?;
    Ok(tape.value(probs).data().to_vec())
}

/// Autoregressive generation from a latent code: BOS-seeded, stops at EOS or
/// after `max_len` tokens. Deterministic given `(z, strategy, seed)`.
pub fn generate(
    store: &ParamStore,
    z: &[f64],
    strategy: DecodeStrategy,
    max_len: usize,
    seed: u64,
) -> Result<TokenSequence> {
    let mut rng = rng::stream(seed, "generate", 0);
    let mut tape = Tape::new(store);
    let z = tape.constant_vector(z.to_vec())?;
    let dec = GruCell::bind(&mut tape, NsmParams::DEC)?;
    let init_w = tape.param(NsmParams::DEC_INIT_W)?;
    let init_b = tape.param(NsmParams::DEC_INIT_B)?;
    let out_w = tape.param(NsmParams::OUT_W)?;
    let out_b = tape.param(NsmParams::OUT_B)?;

    let mut h = tape.affine(init_w, z, init_b)?;
    let mut ids = vec![BOS];
    let mut prev = BOS;
    for _ in 0..max_len {
        let e = embed_token(&mut tape, prev)?;
        let x = tape.concat(e, z)?;
        h = gru_step(&mut tape, &dec, x, h)?;
        let logits = tape.affine(out_w, h, out_b)?;
        let probs = step_probs(&mut tape, logits, strategy)?;
        let next = choose_token(&probs, strategy, &mut rng);
        if next == EOS {
            break;
        }
        ids.push(next);
        prev = next;
    }
    ids.push(EOS);
    Ok(TokenSequence { ids })
}
