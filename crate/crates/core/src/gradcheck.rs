//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Grads, Graph, ParamStore, Var};

/// Entries with both gradients below this magnitude are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Tensors larger than this are checked on a random sample of this many entries.
pub const SAMPLE_ENTRIES: usize = 128;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn eval<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let v = g.value(root).item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the gradients produced by [`Graph::backward`] for the scalar built
/// by `f` against central differences with the given `step`.
pub fn check_gradients<F>(f: F, store: &ParamStore, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let root = f(&mut g, store)?;
    let base = g.value(root).item();
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {base}")));
    }
    g.backward(root)?;
    let mut analytic = Grads::zeros_like(store);
    g.accumulate_param_grads(&mut analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        entries_checked: 0,
        tolerance: tol,
    };
    for id in store.ids() {
        let n = store.get(id).len();
        let entries: Vec<usize> = if n > SAMPLE_ENTRIES {
            let mut v = sample(&mut rng, n, SAMPLE_ENTRIES).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..n).collect()
        };
        for e in entries {
            let orig = store.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + step;
            let plus = eval(&f, &work)?;
            work.get_mut(id).data_mut()[e] = orig - step;
            let minus = eval(&f, &work)?;
            work.get_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(id).data()[e];
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), e));
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(&[1.0, 2.0]));
        let f = |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, w);
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        };
        let mut g = Graph::new();
        let root = f(&mut g, &store).unwrap();
        g.backward(root).unwrap();
        assert_eq!(g.grad(g.param_var(w).unwrap()).unwrap().data(), &[2.0, 4.0]);
        let report = check_gradients(f, &store, 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.entries_checked, 2);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(&[-1.0]));
        let f = |g: &mut Graph, s: &ParamStore| {
            let x = g.param(s, w);
            let l = g.ln(x);
            Ok(g.sum(l))
        };
        assert!(matches!(
            check_gradients(f, &store, 1e-5, 1e-4),
            Err(Error::NonFinite(_))
        ));
    }
}
