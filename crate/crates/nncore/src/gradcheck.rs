//! Finite-difference verification of analytic gradients.

use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::param::{ParamId, ParamStore};
use crate::rng::RngStream;

/// Gradients smaller than this are compared on an absolute rather than a
/// relative scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the graph's analytic gradients with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` over every parameter coordinate, or over
/// `sample` coordinates chosen with the given seed.
///
/// `loss` must build a deterministic 1×1 loss (no dropout) on the graph it
/// is handed.
pub fn grad_check<F>(store: &mut ParamStore, mut loss: F, eps: f64, sample: Option<(usize, u64)>) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(store, false);
        let l = loss(&mut g)?;
        g.backward(l)?
    };

    let mut coords: Vec<(ParamId, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.len()).map(move |k| (id, k)))
        .collect();
    if let Some((n, seed)) = sample {
        if n < coords.len() {
            let mut rng = RngStream::new(seed).split("grad_check");
            rng.shuffle(&mut coords);
            coords.truncate(n);
            coords.sort();
        }
    }

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store, false);
        let l = loss(&mut g)?;
        let v = g.value(l).item();
        if !v.is_finite() {
            return Err(NnError::NonFiniteLoss(v));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: coords.len(),
    };
    for (id, k) in coords {
        let original = store.value(id).data()[k];
        store.value_mut(id).data_mut()[k] = original + eps;
        let plus = eval(store)?;
        store.value_mut(id).data_mut()[k] = original - eps;
        let minus = eval(store)?;
        store.value_mut(id).data_mut()[k] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(id).map_or(0.0, |t| t.data()[k]);
        let err = relative_error(a, numeric);
        if err > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = err;
            report.worst_param = store.param(id).name.clone();
            report.worst_index = k;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
