use std::collections::BTreeMap;

use super::Array;

pub type ParamMap = BTreeMap<String, Array>;

/// A function value with its analytic gradient.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradients: ParamMap,
    /// Fingerprint of the piecewise regime (see [`super::Tape::regime_signature`]);
    /// use a constant for smooth functions.
    pub regime: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Parameter entry with the largest error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries checked with a smaller step because the `±h` probe left the
    /// smooth piece of the base point.
    pub refined: usize,
    /// Entries whose probe left the smooth piece even at the smallest step.
    pub skipped_kinks: usize,
}

/// Successive step shrink factors tried when a probe crosses a kink.
const REFINEMENTS: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];

/// Gradient magnitudes below this are compared on an absolute scale:
/// entries whose true gradient is exactly zero (a key bias under softmax,
/// say) carry finite-difference roundoff of about `eps * |f| / h`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares analytic gradients with central differences
/// `(f(θ+h·e) - f(θ-h·e)) / 2h` entry by entry and reports the maximum of
/// `|analytic - numeric| / max(|analytic|, |numeric|, REL_ERROR_FLOOR)`.
pub fn finite_diff_check<F, E>(mut f: F, params: &ParamMap, h: f64) -> Result<FdReport, E>
where
    F: FnMut(&ParamMap) -> Result<Evaluation, E>,
{
    let base = f(params)?;
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        refined: 0,
        skipped_kinks: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params {
        let analytic = base.gradients.get(name);
        for i in 0..value.len() {
            let original = value.data()[i];
            let mut numeric = None;
            for (attempt, shrink) in REFINEMENTS.iter().enumerate() {
                let step = h * shrink;
                probe.get_mut(name).unwrap().data_mut()[i] = original + step;
                let plus = f(&probe)?;
                probe.get_mut(name).unwrap().data_mut()[i] = original - step;
                let minus = f(&probe)?;
                probe.get_mut(name).unwrap().data_mut()[i] = original;
                if plus.regime == base.regime && minus.regime == base.regime {
                    report.refined += usize::from(attempt > 0);
                    numeric = Some((plus.value - minus.value) / (2.0 * step));
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped_kinks += 1;
                continue;
            };
            let a = analytic.map_or(0.0, |g| g.data()[i]);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
