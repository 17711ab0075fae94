//! Central finite-difference verification of tape gradients.

use std::collections::BTreeMap;

use super::{Gradients, ParamStore};

/// Per-parameter comparison of analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both
    /// norms fall below `1e-10`.
    pub relative_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Differentiates `loss` numerically with step `h` around `store` for every
/// parameter in `names` and compares against `analytic`.
pub fn check_gradients<F>(store: &ParamStore<f64>, analytic: &Gradients<f64>, names: &[String], h: f64, mut loss: F) -> BTreeMap<String, GradCheck>
where
    F: FnMut(&ParamStore<f64>) -> f64,
{
    let mut work = store.clone();
    let mut out = BTreeMap::new();
    for name in names {
        let n = store.get(name).map_or(0, |t| t.numel());
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(name).unwrap().data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let plus = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let minus = loss(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        let a = analytic.get(name).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = an.max(nn);
        out.insert(
            name.clone(),
            GradCheck {
                relative_error: if denom < 1e-10 { 0.0 } else { diff / denom },
                analytic_norm: an,
                numeric_norm: nn,
            },
        );
    }
    out
}
