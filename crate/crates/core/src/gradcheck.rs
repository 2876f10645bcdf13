//! Central finite-difference gradient checking.

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Per parameter, in store order: name, worst relative error and the
    /// number of coordinates compared.
    pub per_param: Vec<(String, f64, usize)>,
    pub coordinates_checked: usize,
    /// Coordinates skipped because the step straddles a kink (ReLU, max):
    /// central differences at `eps` and `eps / 2` disagree by more than
    /// `KINK_TOL` relatively, which a smooth loss does not do.
    pub kinks_skipped: usize,
}

pub const KINK_TOL: f64 = 1e-6;

/// Relative error used throughout: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compares analytic gradients against central differences.
///
/// `forward(store, backprop)` must evaluate the loss on the current parameter
/// values and, when `backprop` is true, accumulate gradients into `store`.
/// At most `max_coords_per_param` coordinates of each parameter are probed,
/// chosen with `rng` when the parameter is larger.
pub fn finite_diff_check<T, F>(
    mut forward: F,
    store: &mut ParamStore<T>,
    eps: f64,
    max_coords_per_param: usize,
    rng: &mut SplitRng,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut ParamStore<T>, bool) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    store.zero_grad();
    let base = forward(store, true)?;
    let again = forward(store, false)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::contract(format!(
            "forward closure is not deterministic ({base} vs {again})"
        )));
    }

    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.to_f64_vec()).collect();
    let mut per_param = Vec::with_capacity(store.len());
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut kinks = 0;

    for (pi, grads) in analytic.iter().enumerate() {
        let id = ParamId(pi);
        let n = store.get(id).value.len();
        let coords: Vec<usize> = if n <= max_coords_per_param {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut all);
            all.truncate(max_coords_per_param);
            all
        };
        let mut worst = 0.0f64;
        let mut compared = 0;
        for c in coords {
            let orig = store.get(id).value.data()[c];
            store.get_mut(id).value.data_mut()[c] = T::lit(orig.as_f64() + eps);
            let plus = forward(store, false)?;
            store.get_mut(id).value.data_mut()[c] = T::lit(orig.as_f64() - eps);
            let minus = forward(store, false)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let half = eps / 2.0;
            store.get_mut(id).value.data_mut()[c] = T::lit(orig.as_f64() + half);
            let plus_half = forward(store, false)?;
            store.get_mut(id).value.data_mut()[c] = T::lit(orig.as_f64() - half);
            let minus_half = forward(store, false)?;
            store.get_mut(id).value.data_mut()[c] = orig;
            let numeric_half = (plus_half - minus_half) / eps;
            if (numeric - numeric_half).abs() > KINK_TOL * (numeric.abs() + numeric_half.abs()) + 1e-8 {
                kinks += 1;
                continue;
            }
            let err = relative_error(grads[c], numeric);
            worst = worst.max(err);
            compared += 1;
        }
        max_rel = max_rel.max(worst);
        checked += compared;
        per_param.push((store.get(id).name.clone(), worst, compared));
    }
    store.zero_grad();
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        per_param,
        coordinates_checked: checked,
        kinks_skipped: kinks,
    })
}
