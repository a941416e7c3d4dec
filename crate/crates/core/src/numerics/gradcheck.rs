//! Central-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::ParamStore;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradient of `f` with respect to every parameter coordinate
/// against `(f(p + h) − f(p − h)) / 2h`.
///
/// `f` builds a scalar loss on a fresh graph and must be deterministic.
pub fn grad_check<F>(params: &ParamStore<f64>, f: F, step: f64, tolerance: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = f(&mut g)?;
        g.backward(loss)?.into_param_grads()
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = f(&mut g)?;
        Ok(g.item(loss))
    };

    let mut work = params.clone();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        tolerance,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let name = params.name(id).to_string();
        let n = params.get(id).len();
        for j in 0..n {
            let orig = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + step;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig - step;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[j] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
                _ => return Err(Error::NonFiniteInput(format!("loss while perturbing `{name}`[{j}]"))),
            };
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[j]);
            if !a.is_finite() {
                return Err(Error::NonFiniteInput(format!("gradient of `{name}`[{j}]")));
            }
            let e = rel_err(a, numeric);
            report.checked += 1;
            if e > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = e;
                report.worst_param = name.clone();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
