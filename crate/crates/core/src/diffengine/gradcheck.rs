use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Parameter entry whose central difference straddled a relu/max kink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedEntry {
    pub param: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: Vec<SkippedEntry>,
    /// Entry with the largest relative error.
    pub worst: Option<WorstEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compare reverse-mode gradients of a scalar-valued `forward` against
/// central differences with step `eps`, over every entry of `params`.
///
/// `forward` must be deterministic. Entries where a `+eps` or `-eps` probe
/// changes a relu/max branch relative to the unperturbed pass are skipped
/// and listed in the report.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    eps: f64,
    mut forward: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("gradient check step must be positive, got {eps}")));
    }
    let mut tape = Tape::with_kink_tracking();
    let loss = forward(&mut tape, store)?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss, store)?;
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<(f64, _)> {
        let mut t = Tape::with_kink_tracking();
        let l = forward(&mut t, store)?;
        let v = t.value(l);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        Ok((v.item(), t.kink_signature()))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: Vec::new(),
        worst: None,
    };
    for &id in params {
        let n = store.get(id).len();
        for idx in 0..n {
            let orig = store.get(id).data()[idx];
            store.get_mut(id).data_mut()[idx] = orig + eps;
            let (fp, sp) = eval(store)?;
            store.get_mut(id).data_mut()[idx] = orig - eps;
            let (fm, sm) = eval(store)?;
            store.get_mut(id).data_mut()[idx] = orig;

            if sp != base_sig || sm != base_sig {
                report.skipped.push(SkippedEntry {
                    param: store.name(id).to_string(),
                    index: idx,
                });
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let analytic = grads.get(id).data()[idx];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(WorstEntry {
                    param: store.name(id).to_string(),
                    index: idx,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
