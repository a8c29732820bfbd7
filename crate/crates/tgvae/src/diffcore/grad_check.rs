//! Finite-difference verification of analytic gradients.

use super::tape::{Tape, Var};
use super::tensor::ParamStore;
use super::{DiffError, Result};

/// Per-parameter comparison of analytic vs central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Report over all parameters, sorted by descending relative error.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_abs_err).fold(0.0, f64::max)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tol)
    }

    /// Entries exceeding the tolerance, worst first.
    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(move |e| e.max_rel_err > self.tol)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare the tape gradient of a scalar loss against central finite
/// differences over every coordinate of every parameter.
///
/// `build` must construct the loss graph deterministically from the store it
/// is handed (any sampling noise must be frozen outside the closure), so the
/// perturbed evaluations probe the same function the tape differentiates.
pub fn grad_check<F>(build: F, params: &ParamStore, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&'p ParamStore) -> Result<(Tape<'p>, Var)>,
{
    let (tape, loss) = build(params)?;
    let analytic = tape.backward(loss)?.into_params();
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let (tape, loss) = build(store)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(DiffError::NonFinite { node: 0, op: "grad_check perturbed loss" });
        }
        Ok(value)
    };

    let mut work = params.clone();
    let mut entries = Vec::new();
    for (name, tensor) in params.iter() {
        let g_ad = analytic[name].data();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let g_fd = (plus - minus) / (2.0 * eps);
            max_rel = max_rel.max(rel_err(g_ad[i], g_fd));
            max_abs = max_abs.max((g_ad[i] - g_fd).abs());
        }
        entries.push(GradCheckEntry { name: name.to_string(), max_rel_err: max_rel, max_abs_err: max_abs });
    }
    entries.sort_by(|a, b| b.max_rel_err.total_cmp(&a.max_rel_err));
    Ok(GradCheckReport { entries, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn quadratic_loss_checks_cleanly() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(vec![0.7, -1.3, 2.1]));
        let report = grad_check(
            |p| {
                let mut tape = Tape::new(p);
                let x = tape.param("x")?;
                let sq = tape.mul(x, x)?;
                let loss = tape.sum(sq)?;
                Ok((tape, loss))
            },
            &store,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.all_pass(), "max rel err {}", report.max_rel_err());
        assert!(report.max_rel_err() < 1e-8);
    }

    #[test]
    fn constant_loss_has_tiny_absolute_error() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::vector(vec![0.4, 0.9]));
        let report = grad_check(
            |p| {
                let mut tape = Tape::new(p);
                let _ = tape.param("x")?;
                let loss = tape.constant_scalar(3.25)?;
                Ok((tape, loss))
            },
            &store,
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.max_abs_err() < 1e-10);
        assert!(report.all_pass());
    }

    #[test]
    fn report_sorted_descending() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(0.5));
        store.insert("b", Tensor::scalar(-0.25));
        let report = grad_check(
            |p| {
                let mut tape = Tape::new(p);
                let a = tape.param("a")?;
                let b = tape.param("b")?;
                let a3 = tape.mul(a, a).and_then(|aa| tape.mul(aa, a))?;
                let loss = tape.add(a3, b)?;
                Ok((tape, loss))
            },
            &store,
            1e-5,
            1e-6,
        )
        .unwrap();
        for w in report.entries.windows(2) {
            assert!(w[0].max_rel_err >= w[1].max_rel_err);
        }
    }
}
