//! Gaussian-mixture machinery for the latent code.
//!
//! Covers the topic-guided mixture prior, the sequence-side mixture
//! posterior, reparameterized sampling, the Householder flow, and every KL
//! computation including the mixture-KL upper bound
//!
//! ```text
//! KL(q0 || prior) <= KL(pi || t) + sum_i pi_i * KL(q0_i || prior_i)
//! ```
//!
//! Plain (value-level) versions of each quantity live alongside their tape
//! versions; tests hold the two routes together and check both against
//! Monte-Carlo oracles.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, ParamStore, Result, Tape, Tensor, Var};
use crate::rng;

/// Norm floor below which a Householder vector counts as degenerate.
pub const V_NORM_FLOOR: f64 = 1e-8;
/// Floor applied to weights inside the categorical KL.
pub const WEIGHT_FLOOR: f64 = 1e-10;

// ── Plain value types ────────────────────────────────────────────────

/// Diagonal-covariance Gaussian stored as mean and log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn standard(dim: usize) -> Self {
        DiagGaussian { mean: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reparameterized draw `mean + exp(log_var / 2) * eps`.
    pub fn sample(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((m, lv), xi) in self.mean.iter().zip(&self.log_var).zip(x) {
            let var = lv.exp();
            let d = xi - m;
            acc += -0.5 * ((2.0 * std::f64::consts::PI).ln() + lv + d * d / var);
        }
        acc
    }
}

/// Weighted list of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub components: Vec<DiagGaussian>,
}

impl Gmm {
    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, DiagGaussian::dim)
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, g)| w.max(WEIGHT_FLOOR).ln() + g.log_pdf(x))
            .collect();
        log_sum_exp(&logs)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

// ── Plain operations ─────────────────────────────────────────────────

/// Closed-form KL between diagonal Gaussians.
pub fn gaussian_kl(a: &DiagGaussian, b: &DiagGaussian) -> f64 {
    assert_eq!(a.dim(), b.dim(), "gaussian_kl dimension mismatch");
    let mut acc = 0.0;
    for i in 0..a.dim() {
        let va = a.log_var[i].exp();
        let vb = b.log_var[i].exp();
        let dm = a.mean[i] - b.mean[i];
        acc += (b.log_var[i] - a.log_var[i]) + (va + dm * dm) / vb - 1.0;
    }
    0.5 * acc
}

/// `sum_i p_i log(p_i / q_i)` with `0 log 0 = 0` and `q` floored.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "categorical_kl length mismatch");
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi.ln() - qi.max(WEIGHT_FLOOR).ln()) } else { 0.0 })
        .sum()
}

/// Upper bound on `KL(q0 || prior)` for index-paired mixtures: the categorical
/// KL of the weights plus the weight-averaged component KLs.
pub fn gmm_kl_upper_bound(q0: &Gmm, prior: &Gmm) -> f64 {
    assert_eq!(q0.num_components(), prior.num_components(), "component count mismatch");
    let cat = categorical_kl(&q0.weights, &prior.weights);
    let comps: f64 = q0
        .weights
        .iter()
        .zip(q0.components.iter().zip(&prior.components))
        .map(|(&w, (a, b))| w * gaussian_kl(a, b))
        .sum();
    cat + comps
}

/// Inverse-CDF component choice plus reparameterized draw from it.
pub fn sample_gmm(g: &Gmm, u: f64, eps: &[f64]) -> (Vec<f64>, usize) {
    let mut acc = 0.0;
    let mut idx = g.num_components() - 1;
    for (i, w) in g.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            idx = i;
            break;
        }
    }
    (g.components[idx].sample(eps), idx)
}

/// Reflection `z - 2 (v.z / ||v||^2) v`, computed without forming the matrix.
pub fn householder_step(z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(z.len(), v.len(), "householder dimension mismatch");
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if vv.sqrt() < V_NORM_FLOOR {
        return Err(DiffError::Degenerate {
            what: "householder vector",
            detail: format!("norm {:.3e} below floor {V_NORM_FLOOR:.0e}", vv.sqrt()),
        });
    }
    let vz: f64 = v.iter().zip(z).map(|(a, b)| a * b).sum();
    let coef = 2.0 * vz / vv;
    Ok(z.iter().zip(v).map(|(zi, vi)| zi - coef * vi).collect())
}

// ── Tape-level builders ──────────────────────────────────────────────

/// A diagonal Gaussian living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussVars {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussVars {
    pub fn to_plain(&self, tape: &Tape) -> DiagGaussian {
        DiagGaussian {
            mean: tape.value(self.mean).data().to_vec(),
            log_var: tape.value(self.log_var).data().to_vec(),
        }
    }
}

/// A mixture living on a tape.
#[derive(Debug, Clone)]
pub struct GmmVars {
    pub weights: Var,
    pub components: Vec<GaussVars>,
}

impl GmmVars {
    pub fn to_plain(&self, tape: &Tape) -> Gmm {
        Gmm {
            weights: tape.value(self.weights).data().to_vec(),
            components: self.components.iter().map(|c| c.to_plain(tape)).collect(),
        }
    }
}

/// Dimensions of the prior component networks: one hidden layer each for the
/// mean map and the log-variance map from a topic row.
#[derive(Debug, Clone, Copy)]
pub struct PriorNetDims {
    pub topic_vocab: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// Names of the trainable arrays of the prior nets.
pub struct PriorNets;

impl PriorNets {
    pub fn init(store: &mut ParamStore, dims: PriorNetDims, rng: &mut ChaCha8Rng, scale: f64) {
        let PriorNetDims { topic_vocab, hidden, latent } = dims;
        for prefix in ["prior.mu", "prior.sigma"] {
            store.insert(format!("{prefix}.l1.w"), init_matrix(hidden, topic_vocab, rng, scale));
            store.insert(format!("{prefix}.l1.b"), Tensor::zeros(vec![hidden]));
            store.insert(format!("{prefix}.l2.w"), init_matrix(latent, hidden, rng, scale));
            store.insert(format!("{prefix}.l2.b"), Tensor::zeros(vec![latent]));
        }
    }
}

pub fn init_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng, scale: f64) -> Tensor {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng::uniform_sym(rng, scale)).collect();
    Tensor::new(vec![rows, cols], data).expect("init shape")
}

fn prior_net_head(tape: &mut Tape, prefix: &str, beta_row: Var) -> Result<Var> {
    let w1 = tape.param(&format!("{prefix}.l1.w"))?;
    let b1 = tape.param(&format!("{prefix}.l1.b"))?;
    let w2 = tape.param(&format!("{prefix}.l2.w"))?;
    let b2 = tape.param(&format!("{prefix}.l2.b"))?;
    let h = tape.affine(w1, beta_row, b1)?;
    let h = tape.tanh(h)?;
    tape.affine(w2, h, b2)
}

/// Topic-guided mixture prior: weights are the topic usage, component `i`'s
/// mean and log-variance are functions of topic row `i` alone.
pub fn prior_gmm(tape: &mut Tape, beta_rows: &[Var], t: Var) -> Result<GmmVars> {
    let mut components = Vec::with_capacity(beta_rows.len());
    for &row in beta_rows {
        let mean = prior_net_head(tape, "prior.mu", row)?;
        let log_var = prior_net_head(tape, "prior.sigma", row)?;
        components.push(GaussVars { mean, log_var });
    }
    Ok(GmmVars { weights: t, components })
}

/// Standard-Gaussian prior with the same mixture shape: every component is
/// `N(0, I)`; used by the plain-VAE ablation.
pub fn standard_prior_gmm(
    tape: &mut Tape,
    num_components: usize,
    latent: usize,
    t: Var,
) -> Result<GmmVars> {
    let mut components = Vec::with_capacity(num_components);
    for _ in 0..num_components {
        let mean = tape.constant(Tensor::zeros(vec![latent]))?;
        let log_var = tape.constant(Tensor::zeros(vec![latent]))?;
        components.push(GaussVars { mean, log_var });
    }
    Ok(GmmVars { weights: t, components })
}

/// Names of the posterior head arrays (one linear layer on the sequence
/// encoding `h` producing mixture logits, means, and log-variances).
pub struct PosteriorHead;

impl PosteriorHead {
    pub const PI_W: &'static str = "post.pi.w";
    pub const PI_B: &'static str = "post.pi.b";
    pub const MU_W: &'static str = "post.mu.w";
    pub const MU_B: &'static str = "post.mu.b";
    pub const SIGMA_W: &'static str = "post.sigma.w";
    pub const SIGMA_B: &'static str = "post.sigma.b";

    pub fn init(
        store: &mut ParamStore,
        encoding_dim: usize,
        num_topics: usize,
        latent: usize,
        rng: &mut ChaCha8Rng,
        scale: f64,
    ) {
        store.insert(Self::PI_W, init_matrix(num_topics, encoding_dim, rng, scale));
        store.insert(Self::PI_B, Tensor::zeros(vec![num_topics]));
        store.insert(Self::MU_W, init_matrix(num_topics * latent, encoding_dim, rng, scale));
        store.insert(Self::MU_B, Tensor::zeros(vec![num_topics * latent]));
        store.insert(Self::SIGMA_W, init_matrix(num_topics * latent, encoding_dim, rng, scale));
        store.insert(Self::SIGMA_B, Tensor::zeros(vec![num_topics * latent]));
    }
}

/// Sequence-side mixture posterior from the encoder's final hidden vector.
pub fn posterior_gmm(tape: &mut Tape, h: Var, num_topics: usize, latent: usize) -> Result<GmmVars> {
    let pi_w = tape.param(PosteriorHead::PI_W)?;
    let pi_b = tape.param(PosteriorHead::PI_B)?;
    let mu_w = tape.param(PosteriorHead::MU_W)?;
    let mu_b = tape.param(PosteriorHead::MU_B)?;
    let sg_w = tape.param(PosteriorHead::SIGMA_W)?;
    let sg_b = tape.param(PosteriorHead::SIGMA_B)?;

    let logits = tape.affine(pi_w, h, pi_b)?;
    let weights = tape.softmax(logits)?;
    let means = tape.affine(mu_w, h, mu_b)?;
    let log_vars = tape.affine(sg_w, h, sg_b)?;

    let mut components = Vec::with_capacity(num_topics);
    for i in 0..num_topics {
        let mean = tape.slice(means, i * latent, latent)?;
        let log_var = tape.slice(log_vars, i * latent, latent)?;
        components.push(GaussVars { mean, log_var });
    }
    Ok(GmmVars { weights, components })
}

/// Reparameterized draw on the tape. The component index comes from the
/// inverse CDF of the weight *values* and is treated as a constant; gradients
/// reach the selected component's mean and log-variance only.
pub fn sample_gmm_on_tape(
    tape: &mut Tape,
    g: &GmmVars,
    u: f64,
    eps: &[f64],
) -> Result<(Var, usize)> {
    let weights = tape.value(g.weights).data();
    let mut acc = 0.0;
    let mut idx = g.components.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            idx = i;
            break;
        }
    }
    let comp = g.components[idx];
    let z = sample_gaussian_on_tape(tape, comp, eps)?;
    Ok((z, idx))
}

/// `mean + exp(log_var/2) * eps` with `eps` as a constant.
pub fn sample_gaussian_on_tape(tape: &mut Tape, g: GaussVars, eps: &[f64]) -> Result<Var> {
    let half_lv = tape.scale(g.log_var, 0.5)?;
    let std = tape.exp(half_lv)?;
    let noise = tape.constant_vector(eps.to_vec())?;
    let scaled = tape.mul(std, noise)?;
    tape.add(g.mean, scaled)
}

/// Householder reflection on the tape.
pub fn householder_step_on_tape(tape: &mut Tape, z: Var, v: Var) -> Result<Var> {
    let vv = tape.dot(v, v)?;
    if tape.value(vv).item().sqrt() < V_NORM_FLOOR {
        return Err(DiffError::Degenerate {
            what: "householder vector",
            detail: format!("norm below floor {V_NORM_FLOOR:.0e}"),
        });
    }
    let vz = tape.dot(v, z)?;
    let ratio = tape.div(vz, vv)?;
    let coef = tape.scale(ratio, 2.0)?;
    let proj = tape.smul(coef, v)?;
    tape.sub(z, proj)
}

/// Names of the flow's chained linear maps. Layer 0 maps the encoder vector
/// `h` down to the latent dimension; later layers are latent-to-latent.
pub struct FlowChain;

impl FlowChain {
    pub fn w(k: usize) -> String {
        format!("flow.{k}.w")
    }

    pub fn b(k: usize) -> String {
        format!("flow.{k}.b")
    }

    pub fn init(
        store: &mut ParamStore,
        depth: usize,
        encoding_dim: usize,
        latent: usize,
        rng: &mut ChaCha8Rng,
        scale: f64,
    ) {
        for k in 0..depth {
            let in_dim = if k == 0 { encoding_dim } else { latent };
            store.insert(Self::w(k), init_matrix(latent, in_dim, rng, scale));
            store.insert(Self::b(k), Tensor::zeros(vec![latent]));
        }
    }
}

/// Apply the K-step Householder flow. Each step's reflection vector is a
/// linear function of the previous one, seeded by the encoder vector; the
/// composition is volume-preserving so no density correction is needed.
pub fn apply_flow(tape: &mut Tape, z0: Var, v0: Var, depth: usize) -> Result<(Var, Vec<Var>)> {
    let mut z = z0;
    let mut v_prev = v0;
    let mut vs = Vec::with_capacity(depth);
    for k in 0..depth {
        let w = tape.param(&FlowChain::w(k))?;
        let b = tape.param(&FlowChain::b(k))?;
        let v = tape.affine(w, v_prev, b)?;
        z = householder_step_on_tape(tape, z, v)?;
        vs.push(v);
        v_prev = v;
    }
    Ok((z, vs))
}

/// Closed-form Gaussian KL on the tape.
pub fn gaussian_kl_on_tape(tape: &mut Tape, a: GaussVars, b: GaussVars) -> Result<Var> {
    let var_a = tape.exp(a.log_var)?;
    let var_b = tape.exp(b.log_var)?;
    let log_ratio = tape.sub(b.log_var, a.log_var)?;
    let dm = tape.sub(a.mean, b.mean)?;
    let dm2 = tape.mul(dm, dm)?;
    let num = tape.add(var_a, dm2)?;
    let frac = tape.div(num, var_b)?;
    let inner = tape.add(log_ratio, frac)?;
    let inner = tape.add_const(inner, -1.0)?;
    let total = tape.sum(inner)?;
    tape.scale(total, 0.5)
}

/// Categorical KL on the tape with both logs floored.
pub fn categorical_kl_on_tape(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    let log_p = tape.log(p)?;
    let log_q = tape.log(q)?;
    let diff = tape.sub(log_p, log_q)?;
    let terms = tape.mul(p, diff)?;
    tape.sum(terms)
}

/// The mixture-KL bound plus its two sub-terms.
#[derive(Debug, Clone, Copy)]
pub struct UklVars {
    pub total: Var,
    pub cat: Var,
    pub component: Var,
}

/// Mixture-KL upper bound on the tape; components pair index-wise.
pub fn gmm_kl_upper_bound_on_tape(
    tape: &mut Tape,
    q0: &GmmVars,
    prior: &GmmVars,
) -> Result<UklVars> {
    assert_eq!(q0.components.len(), prior.components.len(), "component count mismatch");
    let cat = categorical_kl_on_tape(tape, q0.weights, prior.weights)?;
    let mut weighted = Vec::with_capacity(q0.components.len());
    for (i, (a, b)) in q0.components.iter().zip(&prior.components).enumerate() {
        let kl = gaussian_kl_on_tape(tape, *a, *b)?;
        let wi = tape.pick(q0.weights, i)?;
        weighted.push(tape.mul(wi, kl)?);
    }
    let component = tape.sum_scalars(&weighted)?;
    let total = tape.add(cat, component)?;
    Ok(UklVars { total, cat, component })
}

// ── Latent sample dumps ──────────────────────────────────────────────

/// TSV rows `component_id <TAB> z_1 ... z_dim` for external projection plots.
pub fn format_latent_samples(rows: &[(usize, Vec<f64>)]) -> String {
    let mut out = String::new();
    for (comp, z) in rows {
        out.push_str(&comp.to_string());
        for x in z {
            out.push('\t');
            out.push_str(&format!("{x:.6}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, stream, uniform};

    fn random_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DiagGaussian {
        DiagGaussian {
            mean: (0..dim).map(|_| rng::uniform_sym(rng, 1.5)).collect(),
            log_var: (0..dim).map(|_| rng::uniform_sym(rng, 1.0)).collect(),
        }
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| uniform(rng) + 0.05).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / sum).collect()
    }

    fn random_gmm(rng: &mut ChaCha8Rng, comps: usize, dim: usize) -> Gmm {
        Gmm {
            weights: random_simplex(rng, comps),
            components: (0..comps).map(|_| random_gaussian(rng, dim)).collect(),
        }
    }

    #[test]
    fn gaussian_kl_identity_and_hand_value() {
        let a = DiagGaussian { mean: vec![1.0], log_var: vec![0.0] };
        let b = DiagGaussian::standard(1);
        assert_eq!(gaussian_kl(&a, &a), 0.0);
        assert!((gaussian_kl(&a, &b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kl_matches_monte_carlo() {
        let mut rng = stream(3, "kl_mc", 0);
        let a = random_gaussian(&mut rng, 3);
        let b = random_gaussian(&mut rng, 3);
        let closed = gaussian_kl(&a, &b);
        let n = 100_000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let eps = normal_vec(&mut rng, 3);
            let x = a.sample(&eps);
            samples.push(a.log_pdf(&x) - b.log_pdf(&x));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((closed - mean).abs() < 3.0 * se, "closed {closed} vs mc {mean} (se {se})");
    }

    #[test]
    fn categorical_kl_cases() {
        assert_eq!(categorical_kl(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let v = categorical_kl(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        // Zero in q where p has mass: large but finite via the floor.
        let guarded = categorical_kl(&[0.5, 0.5], &[1.0, 0.0]);
        assert!(guarded.is_finite() && guarded > 5.0);
    }

    #[test]
    fn upper_bound_identities() {
        let mut rng = stream(5, "ub", 0);
        let g = random_gmm(&mut rng, 3, 2);
        assert!(gmm_kl_upper_bound(&g, &g).abs() < 1e-12);

        // Single component: exact Gaussian KL.
        let a = Gmm { weights: vec![1.0], components: vec![random_gaussian(&mut rng, 4)] };
        let b = Gmm { weights: vec![1.0], components: vec![random_gaussian(&mut rng, 4)] };
        let bound = gmm_kl_upper_bound(&a, &b);
        let exact = gaussian_kl(&a.components[0], &b.components[0]);
        assert!((bound - exact).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_dominates_monte_carlo_kl() {
        // 20 random mixture pairs here; the acceptance suite runs 100.
        let mut rng = stream(7, "ub_mc", 0);
        for trial in 0..20 {
            let comps = 1 + (trial % 4);
            let dim = 1 + (trial % 3);
            let p = random_gmm(&mut rng, comps, dim);
            let q = random_gmm(&mut rng, comps, dim);
            let bound = gmm_kl_upper_bound(&p, &q);
            let n = 20_000;
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let u = uniform(&mut rng);
                let eps = normal_vec(&mut rng, dim);
                let (x, _) = sample_gmm(&p, u, &eps);
                samples.push(p.log_pdf(&x) - q.log_pdf(&x));
            }
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!(bound >= mean - 3.0 * se, "trial {trial}: bound {bound} < mc {mean} - 3se {se}");
        }
    }

    #[test]
    fn householder_axis_reflection() {
        let out = householder_step(&[1.0, 2.0], &[1.0, 0.0]).unwrap();
        assert_eq!(out, vec![-1.0, 2.0]);
    }

    #[test]
    fn householder_parallel_negates() {
        let z = vec![0.3, -0.4, 1.1];
        let v: Vec<f64> = z.iter().map(|x| 2.0 * x).collect();
        let out = householder_step(&z, &v).unwrap();
        for (o, zi) in out.iter().zip(&z) {
            assert!((o + zi).abs() < 1e-12);
        }
    }

    #[test]
    fn householder_preserves_norm_and_involutes() {
        let mut rng = stream(9, "hh", 0);
        for _ in 0..100 {
            let dim = 2 + (uniform(&mut rng) * 6.0) as usize;
            let z = normal_vec(&mut rng, dim);
            let v = normal_vec(&mut rng, dim);
            let hz = householder_step(&z, &v).unwrap();
            let nz: f64 = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nhz: f64 = hz.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((nz - nhz).abs() < 1e-12);
            let back = householder_step(&hz, &v).unwrap();
            for (b, zi) in back.iter().zip(&z) {
                assert!((b - zi).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn householder_rejects_near_zero_vector() {
        assert!(householder_step(&[1.0, 2.0], &[0.0, 1e-9]).is_err());
    }

    #[test]
    fn explicit_householder_matrix_is_orthogonal() {
        let mut rng = stream(13, "hmat", 0);
        for _ in 0..50 {
            let dim = 2 + (uniform(&mut rng) * 3.0) as usize;
            let v = normal_vec(&mut rng, dim);
            // Build H column-by-column by reflecting basis vectors.
            let mut h = vec![vec![0.0; dim]; dim];
            for j in 0..dim {
                let mut e = vec![0.0; dim];
                e[j] = 1.0;
                let col = householder_step(&e, &v).unwrap();
                for (i, hi) in h.iter_mut().enumerate() {
                    hi[j] = col[i];
                }
            }
            let mut max_dev: f64 = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = 0.0;
                    for row in &h {
                        acc += row[i] * row[j];
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    max_dev = max_dev.max((acc - target).abs());
                }
            }
            assert!(max_dev < 1e-12, "||H^T H - I|| = {max_dev}");
            if dim == 2 {
                let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
                assert!((det + 1.0).abs() < 1e-9);
            } else if dim == 3 {
                let det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1])
                    - h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0])
                    + h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
                assert!((det + 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gmm_sampling_frequencies_match_weights() {
        let mut rng = stream(17, "freq", 0);
        let g = random_gmm(&mut rng, 4, 2);
        let n = 10_000;
        let mut counts = vec![0usize; 4];
        for _ in 0..n {
            let u = uniform(&mut rng);
            let eps = normal_vec(&mut rng, 2);
            let (_, idx) = sample_gmm(&g, u, &eps);
            counts[idx] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = g.weights[i];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 3.0 * se.max(1e-3), "component {i}: freq {freq} vs weight {p}");
        }
    }

    #[test]
    fn noiseless_sample_is_component_mean() {
        let g = Gmm {
            weights: vec![1.0],
            components: vec![DiagGaussian { mean: vec![0.7, -0.2], log_var: vec![0.4, 0.1] }],
        };
        let (z, idx) = sample_gmm(&g, 0.5, &[0.0, 0.0]);
        assert_eq!(idx, 0);
        assert_eq!(z, vec![0.7, -0.2]);
    }

    #[test]
    fn tape_kl_matches_plain() {
        let mut rng = stream(19, "tape_kl", 0);
        let a = random_gaussian(&mut rng, 5);
        let b = random_gaussian(&mut rng, 5);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let av = GaussVars {
            mean: tape.constant_vector(a.mean.clone()).unwrap(),
            log_var: tape.constant_vector(a.log_var.clone()).unwrap(),
        };
        let bv = GaussVars {
            mean: tape.constant_vector(b.mean.clone()).unwrap(),
            log_var: tape.constant_vector(b.log_var.clone()).unwrap(),
        };
        let kl = gaussian_kl_on_tape(&mut tape, av, bv).unwrap();
        assert!((tape.value(kl).item() - gaussian_kl(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn tape_upper_bound_matches_plain() {
        let mut rng = stream(23, "tape_ub", 0);
        let p = random_gmm(&mut rng, 3, 4);
        let q = random_gmm(&mut rng, 3, 4);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mk = |tape: &mut Tape, g: &Gmm| {
            let weights = tape.constant_vector(g.weights.clone()).unwrap();
            let components = g
                .components
                .iter()
                .map(|c| GaussVars {
                    mean: tape.constant_vector(c.mean.clone()).unwrap(),
                    log_var: tape.constant_vector(c.log_var.clone()).unwrap(),
                })
                .collect();
            GmmVars { weights, components }
        };
        let pv = mk(&mut tape, &p);
        let qv = mk(&mut tape, &q);
        let ukl = gmm_kl_upper_bound_on_tape(&mut tape, &pv, &qv).unwrap();
        assert!((tape.value(ukl.total).item() - gmm_kl_upper_bound(&p, &q)).abs() < 1e-10);
        let cat = tape.value(ukl.cat).item();
        let comp = tape.value(ukl.component).item();
        assert!((cat + comp - tape.value(ukl.total).item()).abs() < 1e-12);
    }

    #[test]
    fn flow_identity_at_depth_zero_and_norm_preserving() {
        let mut rng = stream(29, "flow", 0);
        let mut store = ParamStore::new();
        FlowChain::init(&mut store, 3, 6, 4, &mut rng, 0.5);
        let mut tape = Tape::new(&store);
        let z0 = tape.constant_vector(normal_vec(&mut rng, 4)).unwrap();
        let v0 = tape.constant_vector(normal_vec(&mut rng, 6)).unwrap();

        let (z_same, vs) = apply_flow(&mut tape, z0, v0, 0).unwrap();
        assert_eq!(z_same, z0);
        assert!(vs.is_empty());

        let (zk, vs) = apply_flow(&mut tape, z0, v0, 3).unwrap();
        assert_eq!(vs.len(), 3);
        let n0: f64 = tape.value(z0).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let nk: f64 = tape.value(zk).data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n0 - nk).abs() < 1e-10, "norm changed: {n0} vs {nk}");
    }

    #[test]
    fn sampled_component_gradient_flows_to_selected_only() {
        let mut store = ParamStore::new();
        store.insert("m0", Tensor::vector(vec![0.1, 0.2]));
        store.insert("m1", Tensor::vector(vec![-0.3, 0.6]));
        let mut tape = Tape::new(&store);
        let weights = tape.constant_vector(vec![0.9, 0.1]).unwrap();
        let lv = tape.constant(Tensor::zeros(vec![2])).unwrap();
        let m0 = tape.param("m0").unwrap();
        let m1 = tape.param("m1").unwrap();
        let g = GmmVars {
            weights,
            components: vec![
                GaussVars { mean: m0, log_var: lv },
                GaussVars { mean: m1, log_var: lv },
            ],
        };
        let (z, idx) = sample_gmm_on_tape(&mut tape, &g, 0.5, &[0.3, -0.2]).unwrap();
        assert_eq!(idx, 0);
        let loss = tape.sum(z).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.param("m0").unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.param("m1").unwrap().data(), &[0.0, 0.0]);
    }
}
