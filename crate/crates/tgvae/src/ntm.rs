//! Neural topic model.
//!
//! A two-layer ReLU encoder maps bag-of-words counts to a diagonal Gaussian
//! over the topic latent `theta`; an affine-plus-softmax map turns a sample
//! of `theta` into the topic usage `t`; row-wise softmax of a logit matrix
//! yields the topic-word distributions `beta`. The document likelihood
//! marginalizes per-word topic assignments, which collapses to the matrix
//! product `beta^T t`.

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{ParamStore, Result, Tape, Tensor, Var};
use crate::latent::{init_matrix, GaussVars};

/// Model dimensions for the topic side.
#[derive(Debug, Clone, Copy)]
pub struct NtmDims {
    pub topic_vocab: usize,
    pub num_topics: usize,
    pub hidden: usize,
}

/// Parameter names of the topic model.
pub struct NtmParams;

impl NtmParams {
    pub const ENC_L1_W: &'static str = "ntm.enc.l1.w";
    pub const ENC_L1_B: &'static str = "ntm.enc.l1.b";
    pub const ENC_L2_W: &'static str = "ntm.enc.l2.w";
    pub const ENC_L2_B: &'static str = "ntm.enc.l2.b";
    pub const ENC_MU_W: &'static str = "ntm.enc.mu.w";
    pub const ENC_MU_B: &'static str = "ntm.enc.mu.b";
    pub const ENC_LOGVAR_W: &'static str = "ntm.enc.logvar.w";
    pub const ENC_LOGVAR_B: &'static str = "ntm.enc.logvar.b";
    pub const TOPIC_W: &'static str = "ntm.topic.w";
    pub const TOPIC_B: &'static str = "ntm.topic.b";
    pub const BETA_LOGITS: &'static str = "ntm.beta_logits";

    pub fn init(store: &mut ParamStore, dims: NtmDims, rng: &mut ChaCha8Rng, scale: f64) {
        let NtmDims { topic_vocab, num_topics, hidden } = dims;
        store.insert(Self::ENC_L1_W, init_matrix(hidden, topic_vocab, rng, scale));
        store.insert(Self::ENC_L1_B, Tensor::zeros(vec![hidden]));
        store.insert(Self::ENC_L2_W, init_matrix(hidden, hidden, rng, scale));
        store.insert(Self::ENC_L2_B, Tensor::zeros(vec![hidden]));
        store.insert(Self::ENC_MU_W, init_matrix(num_topics, hidden, rng, scale));
        store.insert(Self::ENC_MU_B, Tensor::zeros(vec![num_topics]));
        store.insert(Self::ENC_LOGVAR_W, init_matrix(num_topics, hidden, rng, scale));
        store.insert(Self::ENC_LOGVAR_B, Tensor::zeros(vec![num_topics]));
        store.insert(Self::TOPIC_W, init_matrix(num_topics, num_topics, rng, scale));
        store.insert(Self::TOPIC_B, Tensor::zeros(vec![num_topics]));
        store.insert(Self::BETA_LOGITS, Tensor::zeros(vec![num_topics, topic_vocab]));
    }
}

/// Inference network `q(theta | d)`: shared two-layer trunk plus mean and
/// log-variance heads, all of dimension `num_topics`.
pub fn encode_doc(tape: &mut Tape, bow: &[f64]) -> Result<GaussVars> {
    let x = tape.constant_vector(bow.to_vec())?;
    let w1 = tape.param(NtmParams::ENC_L1_W)?;
    let b1 = tape.param(NtmParams::ENC_L1_B)?;
    let w2 = tape.param(NtmParams::ENC_L2_W)?;
    let b2 = tape.param(NtmParams::ENC_L2_B)?;
    let mu_w = tape.param(NtmParams::ENC_MU_W)?;
    let mu_b = tape.param(NtmParams::ENC_MU_B)?;
    let lv_w = tape.param(NtmParams::ENC_LOGVAR_W)?;
    let lv_b = tape.param(NtmParams::ENC_LOGVAR_B)?;

    let h1 = tape.affine(w1, x, b1)?;
    let h1 = tape.relu(h1)?;
    let h2 = tape.affine(w2, h1, b2)?;
    let h2 = tape.relu(h2)?;
    let mean = tape.affine(mu_w, h2, mu_b)?;
    let log_var = tape.affine(lv_w, h2, lv_b)?;
    Ok(GaussVars { mean, log_var })
}

/// Topic usage `t = softmax(W theta + b)`.
pub fn topic_embed(tape: &mut Tape, theta: Var) -> Result<Var> {
    let w = tape.param(NtmParams::TOPIC_W)?;
    let b = tape.param(NtmParams::TOPIC_B)?;
    let logits = tape.affine(w, theta, b)?;
    tape.softmax(logits)
}

/// Topic-word distributions: row-wise softmax of the logit matrix.
pub fn beta_rows(tape: &mut Tape, num_topics: usize) -> Result<Vec<Var>> {
    let logits = tape.param(NtmParams::BETA_LOGITS)?;
    let mut rows = Vec::with_capacity(num_topics);
    for i in 0..num_topics {
        let r = tape.row(logits, i)?;
        rows.push(tape.softmax(r)?);
    }
    Ok(rows)
}

/// Mixture word distribution `sum_i t_i beta_i`.
pub fn word_probs(tape: &mut Tape, t: Var, beta: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (i, &row) in beta.iter().enumerate() {
        let ti = tape.pick(t, i)?;
        let part = tape.smul(ti, row)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, part)?,
            None => part,
        });
    }
    Ok(acc.expect("at least one topic"))
}

/// `log p(d | beta, t) = sum_w d_w log([beta^T t]_w)`, probabilities floored
/// before the log.
pub fn doc_log_likelihood(tape: &mut Tape, bow: &[f64], t: Var, beta: &[Var]) -> Result<Var> {
    let probs = word_probs(tape, t, beta)?;
    let log_probs = tape.log(probs)?;
    let d = tape.constant_vector(bow.to_vec())?;
    tape.dot(d, log_probs)
}

/// `KL(q(theta|d) || N(0, I)) = 1/2 sum(var + mean^2 - 1 - log var)`.
pub fn ntm_kl(tape: &mut Tape, q: GaussVars) -> Result<Var> {
    let var = tape.exp(q.log_var)?;
    let mu2 = tape.mul(q.mean, q.mean)?;
    let s = tape.add(var, mu2)?;
    let s = tape.sub(s, q.log_var)?;
    let s = tape.add_const(s, -1.0)?;
    let total = tape.sum(s)?;
    tape.scale(total, 0.5)
}

/// Pairwise angle `arccos(|a.b| / (||a|| ||b||))` on the tape.
fn pair_angle(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let ab = tape.dot(a, b)?;
    let ab = tape.abs(ab)?;
    let aa = tape.dot(a, a)?;
    let bb = tape.dot(b, b)?;
    let na = tape.sqrt(aa)?;
    let nb = tape.sqrt(bb)?;
    let denom = tape.mul(na, nb)?;
    let cos = tape.div(ab, denom)?;
    tape.arccos(cos)
}

/// Topic-diversity regularizer `R = phi - nu`: the mean minus the variance of
/// the pairwise angles over all ordered topic pairs, diagonal included.
/// Diagonal angles are identically zero and enter as exact constants.
pub fn diversity_regularizer_on_tape(tape: &mut Tape, beta: &[Var]) -> Result<Var> {
    let t = beta.len();
    if t == 1 {
        return tape.constant_scalar(0.0);
    }
    let mut upper = Vec::with_capacity(t * (t - 1) / 2);
    for i in 0..t {
        for j in (i + 1)..t {
            upper.push(pair_angle(tape, beta[i], beta[j])?);
        }
    }
    let angles = tape.stack(&upper)?;
    let total = tape.sum(angles)?;
    let t2 = (t * t) as f64;
    // Each unordered pair appears twice among ordered pairs.
    let phi = tape.scale(total, 2.0 / t2)?;

    let ones = tape.constant_vector(vec![1.0; upper.len()])?;
    let phi_vec = tape.smul(phi, ones)?;
    let dev = tape.sub(angles, phi_vec)?;
    let dev2 = tape.mul(dev, dev)?;
    let sum_dev2 = tape.sum(dev2)?;
    let off_diag = tape.scale(sum_dev2, 2.0)?;
    let phi2 = tape.mul(phi, phi)?;
    let diag = tape.scale(phi2, t as f64)?;
    let total_dev = tape.add(off_diag, diag)?;
    let nu = tape.scale(total_dev, 1.0 / t2)?;
    tape.sub(phi, nu)
}

/// Value-level diversity regularizer with the same convention.
pub fn diversity_regularizer(beta: &[Vec<f64>]) -> f64 {
    let t = beta.len();
    if t == 1 {
        return 0.0;
    }
    let angle = |a: &[f64], b: &[f64]| -> f64 {
        let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (ab.abs() / (na * nb)).clamp(-1.0 + 1e-12, 1.0 - 1e-12).acos()
    };
    let t2 = (t * t) as f64;
    let mut angles = vec![vec![0.0; t]; t];
    for i in 0..t {
        for j in (i + 1)..t {
            let a = angle(&beta[i], &beta[j]);
            angles[i][j] = a;
            angles[j][i] = a;
        }
    }
    let phi: f64 = angles.iter().flatten().sum::<f64>() / t2;
    let nu: f64 = angles.iter().flatten().map(|a| (a - phi) * (a - phi)).sum::<f64>() / t2;
    phi - nu
}

/// Per-topic top-`k` word ids, probability descending, ties broken by lower
/// id; `k` clamped to the vocabulary size.
pub fn top_words(beta: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    beta.iter()
        .map(|row| {
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids.truncate(k.min(row.len()));
            ids
        })
        .collect()
}

/// Topic-word distributions as plain rows from a parameter store.
pub fn beta_values(store: &ParamStore, num_topics: usize) -> Result<Vec<Vec<f64>>> {
    let logits = store.get(NtmParams::BETA_LOGITS)?;
    let cols = logits.shape()[1];
    let mut rows = Vec::with_capacity(num_topics);
    for i in 0..num_topics {
        let row = &logits.data()[i * cols..(i + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        rows.push(exps.into_iter().map(|e| e / sum).collect());
    }
    Ok(rows)
}

/// `topic_id <TAB> w1 w2 ... wk`, one line per topic.
pub fn format_topics(lists: &[Vec<usize>], vocab: &crate::corpus::Vocab) -> String {
    let mut out = String::new();
    for (i, words) in lists.iter().enumerate() {
        out.push_str(&i.to_string());
        out.push('\t');
        let names: Vec<&str> = words.iter().map(|&w| vocab.token(w).unwrap_or("?")).collect();
        out.push_str(&names.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny_store(topic_vocab: usize, num_topics: usize, hidden: usize, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = stream(seed, "ntm_test", 0);
        NtmParams::init(&mut store, NtmDims { topic_vocab, num_topics, hidden }, &mut rng, 0.05);
        store
    }

    #[test]
    fn zero_init_encoder_outputs_standard_gaussian() {
        let mut store = ParamStore::new();
        let mut rng = stream(0, "zero", 0);
        NtmParams::init(&mut store, NtmDims { topic_vocab: 4, num_topics: 3, hidden: 5 }, &mut rng, 0.0);
        let mut tape = Tape::new(&store);
        let q = encode_doc(&mut tape, &[1.0, 2.0, 0.0, 3.0]).unwrap();
        assert_eq!(tape.value(q.mean).data(), &[0.0; 3]);
        assert_eq!(tape.value(q.log_var).data(), &[0.0; 3]);
    }

    #[test]
    fn encoder_dimension_follows_config() {
        let store = tiny_store(6, 10, 8, 1);
        let mut tape = Tape::new(&store);
        let q = encode_doc(&mut tape, &[1.0; 6]).unwrap();
        assert_eq!(tape.value(q.mean).numel(), 10);
        assert_eq!(tape.value(q.log_var).numel(), 10);
    }

    #[test]
    fn encoder_is_pure() {
        let store = tiny_store(5, 3, 4, 2);
        let mut t1 = Tape::new(&store);
        let q1 = encode_doc(&mut t1, &[2.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let mut t2 = Tape::new(&store);
        let q2 = encode_doc(&mut t2, &[2.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(t1.value(q1.mean).data(), t2.value(q2.mean).data());
        assert_eq!(t1.value(q1.log_var).data(), t2.value(q2.log_var).data());
    }

    #[test]
    fn topic_embed_identity_weights() {
        let mut store = ParamStore::new();
        store.insert(NtmParams::TOPIC_W, Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        store.insert(NtmParams::TOPIC_B, Tensor::zeros(vec![2]));
        let mut tape = Tape::new(&store);

        let theta0 = tape.constant_vector(vec![0.0, 0.0]).unwrap();
        let t0 = topic_embed(&mut tape, theta0).unwrap();
        assert_eq!(tape.value(t0).data(), &[0.5, 0.5]);

        let theta1 = tape.constant_vector(vec![std::f64::consts::LN_2, 0.0]).unwrap();
        let t1 = topic_embed(&mut tape, theta1).unwrap();
        let got = tape.value(t1).data();
        assert!((got[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((got[1] - 1.0 / 3.0).abs() < 1e-12);
        let sum: f64 = got.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doc_log_likelihood_hand_value() {
        // beta1 = (0.7, 0.3), beta2 = (0.2, 0.8), t = (0.5, 0.5), d = (1, 0)
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let b1 = tape.constant_vector(vec![0.7, 0.3]).unwrap();
        let b2 = tape.constant_vector(vec![0.2, 0.8]).unwrap();
        let t = tape.constant_vector(vec![0.5, 0.5]).unwrap();
        let ll = doc_log_likelihood(&mut tape, &[1.0, 0.0], t, &[b1, b2]).unwrap();
        assert!((tape.value(ll).item() - 0.45f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_usage_reduces_to_single_topic() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let b1 = tape.constant_vector(vec![0.6, 0.4]).unwrap();
        let b2 = tape.constant_vector(vec![0.1, 0.9]).unwrap();
        let t = tape.constant_vector(vec![1.0, 0.0]).unwrap();
        let d = [2.0, 3.0];
        let ll = doc_log_likelihood(&mut tape, &d, t, &[b1, b2]).unwrap();
        let expected = 2.0 * 0.6f64.ln() + 3.0 * 0.4f64.ln();
        assert!((tape.value(ll).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_document_has_zero_likelihood() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let b1 = tape.constant_vector(vec![0.5, 0.5]).unwrap();
        let t = tape.constant_vector(vec![1.0]).unwrap();
        let ll = doc_log_likelihood(&mut tape, &[0.0, 0.0], t, &[b1]).unwrap();
        assert_eq!(tape.value(ll).item(), 0.0);
    }

    #[test]
    fn marginalization_identity_on_random_instances() {
        // Brute-force sum over assignments equals the mixture product.
        let mut rng = stream(31, "marg", 0);
        for _ in 0..100 {
            let t_dim = 1 + (crate::rng::uniform(&mut rng) * 3.0) as usize;
            let d_dim = 1 + (crate::rng::uniform(&mut rng) * 4.0) as usize;
            let simplex = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
                let raw: Vec<f64> = (0..n).map(|_| crate::rng::uniform(rng) + 0.01).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let t = simplex(&mut rng, t_dim);
            let beta: Vec<Vec<f64>> = (0..t_dim).map(|_| simplex(&mut rng, d_dim)).collect();
            for w in 0..d_dim {
                let brute: f64 = (0..t_dim).map(|a| beta[a][w] * t[a]).sum();
                let product: f64 = beta.iter().zip(&t).map(|(row, ti)| ti * row[w]).sum();
                assert!((brute - product).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ntm_kl_cases() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let std = GaussVars {
            mean: tape.constant_vector(vec![0.0, 0.0]).unwrap(),
            log_var: tape.constant_vector(vec![0.0, 0.0]).unwrap(),
        };
        let kl0 = ntm_kl(&mut tape, std).unwrap();
        assert_eq!(tape.value(kl0).item(), 0.0);

        let q = GaussVars {
            mean: tape.constant_vector(vec![1.0]).unwrap(),
            log_var: tape.constant_vector(vec![0.0]).unwrap(),
        };
        let kl = ntm_kl(&mut tape, q).unwrap();
        assert!((tape.value(kl).item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn diversity_fixture_values() {
        // Identical rows: angles vanish up to the arccos clamp margin.
        let same = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert!(diversity_regularizer(&same).abs() < 1e-5);

        // Orthogonal rows.
        let ortho = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let r = diversity_regularizer(&ortho);
        let phi = std::f64::consts::PI / 4.0;
        let nu = std::f64::consts::PI * std::f64::consts::PI / 16.0;
        assert!((r - (phi - nu)).abs() < 1e-6, "r = {r}");
        assert!((r - 0.16850).abs() < 5e-4);
    }

    #[test]
    fn diversity_tape_matches_plain_and_is_permutation_invariant() {
        let mut rng = stream(37, "div", 0);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| crate::rng::uniform(&mut rng) + 0.1).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let plain = diversity_regularizer(&rows);

        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = rows.iter().map(|r| tape.constant_vector(r.clone()).unwrap()).collect();
        let r = diversity_regularizer_on_tape(&mut tape, &vars).unwrap();
        assert!((tape.value(r).item() - plain).abs() < 1e-10);

        let mut permuted = rows.clone();
        permuted.rotate_left(2);
        assert!((diversity_regularizer(&permuted) - plain).abs() < 1e-12);
    }

    #[test]
    fn top_words_ranking_clamping_ties() {
        let beta = vec![vec![0.7, 0.3], vec![0.2, 0.8]];
        let top1 = top_words(&beta, 1);
        assert_eq!(top1, vec![vec![0], vec![1]]);

        let clamped = top_words(&beta, 7);
        assert_eq!(clamped[0].len(), 2);

        // Exact tie: lower id first.
        let tied = vec![vec![0.25, 0.25, 0.5]];
        assert_eq!(top_words(&tied, 3), vec![vec![2, 0, 1]]);
    }
}
