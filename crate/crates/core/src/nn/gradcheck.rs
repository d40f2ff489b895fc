//! Central finite-difference gradient checks.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Outcome of comparing tape gradients against finite differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

/// Denominator floor for relative error; differences below this are absolute.
pub const REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks up to `per_param` entries of every non-frozen parameter.
///
/// `loss` builds a scalar on a fresh tape; it is evaluated once for the
/// analytic gradient and twice per checked entry with `±h` perturbations.
pub fn check<F>(store: &ParamStore, h: f64, per_param: usize, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let grads = {
        let mut g = Tape::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Tape::new(s);
        let l = loss(&mut g)?;
        Ok(g.value(l).data()[0])
    };
    let mut work = store.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
    };
    let ids: Vec<ParamId> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.tensor(id).numel();
        let step = (n / per_param.max(1)).max(1);
        for i in (0..n).step_by(step).take(per_param) {
            let orig = store.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.tensor_mut(id).data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.tensor_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(analytic, numeric);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{}] analytic {analytic:e} numeric {numeric:e}", store.get(id).name, i);
            }
        }
    }
    Ok(report)
}
