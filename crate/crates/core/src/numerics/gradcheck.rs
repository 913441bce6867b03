//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it is
//! independent of the backward rules it checks.

use super::{Gradients, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so exact-zero gradients are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    fn record(&mut self, tensor: usize, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some(Mismatch { tensor, index, analytic, numeric });
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.or(self.worst);
        }
    }
}

/// Checks gradients of `f` with respect to every input tensor.
#[allow(clippy::needless_range_loop)]
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.scalar(out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let adj = tape.backward(out)?;

    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for (t, v) in vars.iter().enumerate() {
        let analytic = adj.wrt(&tape, *v);
        for i in 0..work[t].data.len() {
            let orig = work[t].data[i];
            work[t].data[i] = orig + h;
            let up = eval(&work);
            work[t].data[i] = orig - h;
            let down = eval(&work);
            work[t].data[i] = orig;
            report.record(t, i, analytic[i], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Checks gradients of a scalar function of the parameters in `store`.
pub fn check_params<F>(store: &ParamStore, h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut grads = Gradients::new(store);
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward_into(out, &mut grads)?;

    let mut report = GradCheck::default();
    let mut work = store.clone();
    for id in 0..store.len() {
        for i in 0..store.get(id).value.data.len() {
            let orig = store.get(id).value.data[i];
            let mut eval = |x: f64| -> Result<f64> {
                work.get_mut(id).value.data[i] = x;
                let mut t = Tape::new();
                let out = f(&mut t, &work)?;
                Ok(t.scalar(out))
            };
            let up = eval(orig + h)?;
            let down = eval(orig - h)?;
            work.get_mut(id).value.data[i] = orig;
            report.record(id, i, grads.get(id)[i], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}
