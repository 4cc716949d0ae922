use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};

/// Evaluates `loss_fn` on fresh leaves built from `inputs` and returns the
/// scalar loss with its gradient for each input.
pub fn eval_with_grad<F>(inputs: &[&[f64]], loss_fn: F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x)).collect();
    let loss = loss_fn(&mut tape, &vars);
    let grads = tape.backward(loss)?;
    Ok((
        tape.scalar(loss),
        vars.iter().map(|v| grads.wrt(*v)).collect(),
    ))
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// max over checked coordinates of |analytic - fd| / (|fd| + 1e-12)
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(input, coordinate)` pairs whose perturbation crossed a clip boundary.
    pub boundary: Vec<(usize, usize)>,
}

fn eval<F>(inputs: &[Vec<f64>], loss_fn: &F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x)).collect();
    let loss = loss_fn(&mut tape, &vars);
    tape.check()?;
    Ok((tape.scalar(loss), tape.clip_pattern().to_vec()))
}

/// Compares reverse-mode gradients against central differences on up to
/// `coords` randomly chosen coordinates (all of them if fewer exist).
///
/// Coordinates whose `±step` perturbation changes any clip decision are
/// reported in [`FdReport::boundary`] and excluded from the error.
pub fn finite_diff_check<F, R>(
    loss_fn: F,
    inputs: &[&[f64]],
    step: f64,
    coords: usize,
    rng: &mut R,
) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> Var,
    R: Rng + ?Sized,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Parameter(alloc::format!(
            "step must be positive, got {step}"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.input(x)).collect();
    let loss = loss_fn(&mut tape, &vars);
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.wrt(*v)).collect();
    let base_pattern = tape.clip_pattern().to_vec();

    let mut all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, x)| (0..x.len()).map(move |j| (i, j)))
        .collect();
    if coords < all.len() {
        // partial Fisher-Yates
        for i in 0..coords {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        all.truncate(coords);
    }

    let mut work: Vec<Vec<f64>> = inputs.iter().map(|x| x.to_vec()).collect();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        boundary: vec![],
    };
    for (i, j) in all {
        let orig = work[i][j];
        work[i][j] = orig + step;
        let (fp, pp) = eval(&work, &loss_fn)?;
        work[i][j] = orig - step;
        let (fm, pm) = eval(&work, &loss_fn)?;
        work[i][j] = orig;
        if pp != base_pattern || pm != base_pattern {
            report.boundary.push((i, j));
            continue;
        }
        let fd = (fp - fm) / (2.0 * step);
        let err = libm::fabs(analytic[i][j] - fd) / (libm::fabs(fd) + 1e-12);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
