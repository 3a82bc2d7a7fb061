//! Central finite-difference verification of reverse-mode gradients.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Default perturbation for [`grad_check`].
pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of a gradient check; `param`/`index` locate the worst coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// `(analytic, numeric)` for every coordinate in parameter order.
    pub pairs: Vec<(f64, f64)>,
}

impl GradCheckReport {
    /// Largest relative error over coordinates with `|g_fd| ≥ floor`.
    pub fn max_rel_error_above(&self, floor: f64) -> f64 {
        self.pairs
            .iter()
            .filter(|(_, n)| n.abs() >= floor)
            .map(|(a, n)| (a - n).abs() / (n.abs() + 1e-8))
            .fold(0.0, f64::max)
    }
}

fn eval<G>(f: &G, params: &[Tensor<f64>], differentiable: bool) -> Result<(f64, Option<Vec<Tensor<f64>>>)>
where
    G: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = params
        .iter()
        .map(|p| {
            if differentiable {
                tape.var(p.clone())
            } else {
                tape.constant(p.clone())
            }
        })
        .collect();
    let loss = f(&tape, &vars)?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check objective"));
    }
    if !differentiable {
        return Ok((value, None));
    }
    let grads = tape.backward(loss)?;
    Ok((value, Some(vars.iter().map(|&v| grads.get_or_zeros(v)).collect())))
}

/// Compares `backward()` against central differences with step `h`.
///
/// Returns the maximum over all coordinates of
/// `|g_ad − g_fd| / (|g_fd| + 1e-8)`.
pub fn grad_check<G>(f: G, params: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    G: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    if !(h > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    let (_, analytic) = eval(&f, params, true)?;
    let analytic = analytic.expect("gradients requested");
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        pairs: Vec::new(),
    };
    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let (plus, _) = eval(&f, &work, false)?;
            work[p].data_mut()[i] = orig - h;
            let (minus, _) = eval(&f, &work, false)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let ad = analytic[p].data()[i];
            let rel = (ad - numeric).abs() / (numeric.abs() + 1e-8);
            report.coordinates += 1;
            report.pairs.push((ad, numeric));
            if rel > report.max_rel_error || report.coordinates == 1 {
                report.max_rel_error = rel;
                report.param = p;
                report.index = i;
                report.analytic = ad;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let x = Tensor::from_f64([2], &[1.0, 2.0]).unwrap();
        let tape = Tape::new();
        let v = tape.var(x.clone());
        let loss = v.mul(v).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[2.0, 4.0]);
        let r = grad_check(|_, p| Ok(p[0].mul(p[0])?.sum()), &[x], DEFAULT_STEP).unwrap();
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(r.coordinates, 2);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::from_f64([1], &[0.0]).unwrap();
        let r = grad_check(|t, p| p[0].div(t.scalar(0.0)).map(|v| v.sum()), &[x], 1e-5);
        assert!(r.is_err());
    }
}
