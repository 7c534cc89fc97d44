//! Central finite-difference verification of analytic gradients.

use super::params::Parameters;

/// Denominator floor of the relative error, so that parameters whose true
/// gradient is zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every entry of `analytic` with the central difference
/// `(loss(p + h) - loss(p - h)) / 2h` taken on a copy of `params`.
pub fn grad_check<P, F>(params: &P, analytic: &P, loss: F, h: f64) -> GradCheck
where
    P: Parameters,
    F: Fn(&P) -> f64,
{
    let names: Vec<(String, usize)> = params
        .named_params()
        .iter()
        .map(|(n, t)| (n.clone(), t.len()))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.named_params().iter().map(|(_, t)| t.data().to_vec()).collect();

    let mut probe = params.clone();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (p, (name, len)) in names.iter().enumerate() {
        for i in 0..*len {
            let original = probe.params_mut()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = original + h;
            let plus = loss(&probe);
            probe.params_mut()[p].data_mut()[i] = original - h;
            let minus = loss(&probe);
            probe.params_mut()[p].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grads[p][i], numeric);
            result.checked += 1;
            if err > result.max_rel_error || err.is_nan() {
                result.max_rel_error = err;
                result.worst = Some((name.clone(), i));
            }
        }
    }
    result
}

/// Finite-difference check of a gradient with respect to a plain vector.
pub fn grad_check_vector<F>(x: &[f64], analytic: &[f64], loss: F, h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = loss(&probe);
        probe[i] = x[i] - h;
        let minus = loss(&probe);
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (plus - minus) / (2.0 * h)));
    }
    worst
}
