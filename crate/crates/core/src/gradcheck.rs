//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub tol: f64,
    /// Finite-difference step.
    pub step: f64,
    /// Accuracy order of the central difference stencil: 2, 4, 6 or 8.
    pub order: usize,
}

/// Central difference weights for offsets `1..=order/2`; the weight of
/// `-k` is the negative of that of `+k`.
fn stencil(order: usize) -> Option<&'static [f64]> {
    Some(match order {
        2 => &[1.0 / 2.0],
        4 => &[2.0 / 3.0, -1.0 / 12.0],
        6 => &[3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0],
        8 => &[4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0],
        _ => return None,
    })
}

impl GradCheckOptions {
    pub fn for_precision<T: Scalar>(tol: f64) -> Self {
        Self {
            tol,
            step: T::FD_STEP,
            order: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub pass: bool,
}

/// Relative error with a `max(|a|, |n|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `d f / d x` for a scalar-valued `f` of a single tensor.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    grad_check_inputs(
        |xs| f(&xs[0]),
        std::slice::from_ref(x),
        &GradCheckOptions::for_precision::<T>(tol),
    )
}

/// Checks the gradient of a scalar `f` with respect to every coordinate of
/// every input. `f` receives fresh tensors on each call: tracking leaves
/// for the analytic pass and perturbed constants for the numeric passes.
pub fn grad_check_inputs<T, F>(
    mut f: F,
    inputs: &[Tensor<T>],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let base: Vec<Vec<T>> = inputs.iter().map(|t| t.to_vec()).collect();
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();

    let leaves: Vec<Tensor<T>> = base
        .iter()
        .zip(&shapes)
        .map(|(d, s)| Tensor::parameter(d.clone(), s))
        .collect::<Result<_>>()?;
    let out = f(&leaves)?;
    if out.numel() != 1 {
        return Err(Error::NonScalarRoot(out.shape().to_vec()));
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("grad_check: f(x)".into()));
    }
    out.backward()?;
    let analytic: Vec<Vec<T>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![T::zero(); l.numel()]))
        .collect();

    let mut eval_at = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let consts: Vec<Tensor<T>> = base
            .iter()
            .zip(&shapes)
            .enumerate()
            .map(|(i, (d, s))| {
                let mut d = d.clone();
                if i == which {
                    d[coord] = T::from_f64(d[coord].as_f64() + delta);
                }
                Tensor::from_vec(d, s)
            })
            .collect::<Result<_>>()?;
        let v = f(&consts)?.item().as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check: f at input {which} coordinate {coord}"
            )));
        }
        Ok(v)
    };

    let h = opts.step;
    let weights = stencil(opts.order)
        .ok_or_else(|| Error::invalid(format!("unsupported stencil order {}", opts.order)))?;
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        pass: true,
    };
    for (which, grads) in analytic.iter().enumerate() {
        for (coord, a) in grads.iter().enumerate() {
            let mut numeric = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let d = (k + 1) as f64 * h;
                numeric += w * (eval_at(which, coord, d)? - eval_at(which, coord, -d)?);
            }
            numeric /= h;
            let a = a.as_f64();
            let err = relative_error(a, numeric);
            if err > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: err,
                    worst: (which, coord),
                    analytic: a,
                    numeric,
                    pass: true,
                };
            }
        }
    }
    report.pass = report.max_rel_err <= opts.tol;
    Ok(report)
}
