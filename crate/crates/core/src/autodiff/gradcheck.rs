//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it is independent
//! of the backward implementation it verifies.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor so components that are zero on both sides compare by
/// absolute difference.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst component.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Evaluates `f` once on a tape with `inputs` as leaves and returns the loss.
pub fn eval_loss<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Central-difference gradient of `f` with respect to every input element.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: &F, h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval_loss(&work, f)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval_loss(&work, f)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Backward-pass gradients of `f` with respect to every input.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))).collect())
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, checked: 0 }
    }

    fn record(&mut self, at: (usize, usize), analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error || !e.is_finite() {
            self.max_rel_error = e;
            self.worst = at;
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }
}

/// Compares analytic and numeric gradients of `f` at `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let numeric = numeric_gradients(inputs, &f, h)?;
    let mut report = GradCheckReport::empty();
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            report.record((i, j), av, nv);
        }
    }
    Ok(report)
}

/// Like [`check_gradients`] but only probes the listed `(input, element)`
/// coordinates, for models too large to difference exhaustively.
pub fn check_selected<F>(inputs: &[Tensor], f: F, h: f64, coords: &[(usize, usize)]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::empty();
    for &(i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let plus = eval_loss(&work, &f)?;
        work[i].data_mut()[j] = orig - h;
        let minus = eval_loss(&work, &f)?;
        work[i].data_mut()[j] = orig;
        report.record((i, j), analytic[i].data()[j], (plus - minus) / (2.0 * h));
    }
    Ok(report)
}
