//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::store::ParamStore;

/// Denominator floor for [`relative_error`]: gradients smaller than this
/// are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    /// Index of the worst element.
    pub worst_index: usize,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Perturb every element of every trainable parameter the graph reads by
/// `±h` and compare `(L(p+h) − L(p−h)) / 2h` against the analytic gradient.
/// The graph is re-evaluated in place, so dropout masks stay fixed.
pub fn finite_diff_check<T: Real>(
    graph: &mut Graph<T>,
    store: &mut ParamStore<T>,
    loss: NodeId,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    graph.run(store)?;
    let grads = graph.backward(loss)?;
    let mut entries = Vec::new();
    for (name, analytic) in grads.iter() {
        let mut worst = 0.0f64;
        let mut worst_index = 0;
        for i in 0..analytic.len() {
            let orig = store.get(name)?.data()[i];
            store.get_mut(name)?.data_mut()[i] = T::of(orig.as_f64() + h);
            graph.run(store)?;
            let plus = graph.scalar_value(loss)?.as_f64();
            store.get_mut(name)?.data_mut()[i] = T::of(orig.as_f64() - h);
            graph.run(store)?;
            let minus = graph.scalar_value(loss)?.as_f64();
            store.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i].as_f64(), numeric);
            if err > worst {
                worst = err;
                worst_index = i;
            }
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_error: worst,
            worst_index,
            checked: analytic.len(),
        });
    }
    graph.run(store)?;
    Ok(GradCheckReport { tolerance, entries })
}
