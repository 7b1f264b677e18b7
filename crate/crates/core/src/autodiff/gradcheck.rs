//! Central finite-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic| + |numeric|)
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Coordinates where the one-sided differences disagree (a kink such as
    /// relu at 0). They are excluded from `max_rel_error`.
    pub kinks: Vec<usize>,
}

impl GradCheckReport {
    pub fn has_kink(&self) -> bool {
        !self.kinks.is_empty()
    }
}

/// Compares the tape gradient of scalar `f(x)` against central differences
/// with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    tape.backward(y)?;
    let analytic = tape.grad(xv).expect("leaf requires grad");

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe.clone(), false);
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };
    let f0 = eval(x)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        kinks: Vec::new(),
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (fp - fm) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(Error::NonFiniteEstimate { index: i });
        }
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        if (forward - backward).abs() > 1e-2 * numeric.abs().max(1.0) {
            report.kinks.push(i);
            continue;
        }
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1.0);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
