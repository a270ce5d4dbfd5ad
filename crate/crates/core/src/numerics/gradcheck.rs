//! Central-difference verification of analytic gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |a − n| / max(1, |a|, |n|)
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst discrepancy.
    pub worst: Option<(usize, usize)>,
    pub coords: usize,
}

/// Compares analytic gradients of `f` against central differences with step `h`.
///
/// `f` builds a scalar loss from the supplied parameter leaves.
pub fn finite_diff_check<F>(f: F, params: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, params, h, |_| {})
}

/// Like [`finite_diff_check`], with a hook that may alter the analytic
/// gradients before comparison. Used to prove the harness catches defects.
pub fn finite_diff_check_with<F, H>(f: F, params: &[Tensor<f64>], h: f64, tamper: H) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    H: FnOnce(&mut [Vec<f64>]),
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    drop(g);
    tamper(&mut analytic);

    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_check",
            });
        }
        Ok(value)
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords: 0,
    };
    for p in 0..work.len() {
        for k in 0..work[p].len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].get(k).copied().unwrap_or(0.0);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((p, k));
            }
            report.coords += 1;
        }
    }
    Ok(report)
}
