//! Central finite-difference gradient oracle.

mod suite;

pub use suite::{op_suite, OpCheck, INSTANCES, SUITE_OPS};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::shape("grad_check", format!("function output {:?} is not scalar", tape.shape(out))));
    }
    Ok(tape.scalar(out))
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences with step `1e-5 · max(1, |x|)` for every entry of
/// every input. `f` must be deterministic.
#[allow(clippy::needless_range_loop)]
pub fn grad_check<F>(f: F, inputs: &[(&str, Tensor<f64>)], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();

    let mut work: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut entries = Vec::with_capacity(inputs.len());
    for (k, (name, _)) in inputs.iter().enumerate() {
        let mut entry = GradCheckEntry {
            name: name.to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for j in 0..work[k].len() {
            let x = work[k].data()[j];
            let h = 1e-5 * x.abs().max(1.0);
            work[k].data_mut()[j] = x + h;
            let up = evaluate(&f, &work)?;
            work[k].data_mut()[j] = x - h;
            let down = evaluate(&f, &work)?;
            work[k].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_error(analytic[k][j], numeric);
            if err > entry.max_rel_error || j == 0 {
                entry.max_rel_error = err;
                entry.worst_index = j;
                entry.analytic = analytic[k][j];
                entry.numeric = numeric;
            }
        }
        entry.passed = entry.max_rel_error <= tol;
        entries.push(entry);
    }
    Ok(GradCheckReport { tol, entries })
}
