//! Central finite differences against the tape's analytic gradients.

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Array;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Vec<Array>,
    pub numeric: Vec<Array>,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[Array], numeric: &[Array]) -> (f64, (usize, usize)) {
    let mut worst = (0.0, (0, 0));
    for (p, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (i, (x, y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(*x, *y);
            if e > worst.0 || e.is_nan() {
                worst = (e, (p, i));
            }
        }
    }
    worst
}

/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate of every parameter.
pub fn numerical_gradient(params: &[Array], h: f64, mut f: impl FnMut(&[Array]) -> Result<f64>) -> Result<Vec<Array>> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Array::zeros(params[p].dims().to_vec());
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Builds the graph once for analytic gradients and re-evaluates it forward-only
/// for the numeric ones.
pub fn finite_diff_check(
    params: &[Array],
    h: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |ps: &[Array]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };
    let (tape, vars, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Array> = vars.iter().map(|v| grads.wrt(&tape, *v)).collect();
    let numeric = numerical_gradient(params, h, |ps| {
        let (t, _, l) = eval(ps)?;
        Ok(t.value(l).data()[0])
    })?;
    let (max_rel_error, worst) = max_relative_error(&analytic, &numeric);
    Ok(GradCheck { max_rel_error, worst, analytic, numeric })
}
