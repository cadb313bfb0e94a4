//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{ParamId, ParamSet, Tape, Tensor, Var};

/// Outcome of one gradient check: the worst relative error and where it was.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_element: usize,
    /// Number of scalar entries compared.
    pub compared: usize,
}

/// `|a - n| / max(1, |a|, |n|)`: absolute error for small magnitudes,
/// relative error for large ones.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = 1.0_f64.max(analytic.abs()).max(numeric.abs());
    (analytic - numeric).abs() / denom
}

/// Compare analytic adjoints of a scalar-valued program against central
/// differences `(f(x + h) - f(x - h)) / 2h` over every element of every
/// input tensor. `build` must be a pure function of the input values.
pub fn grad_check_program<S, F>(
    name: &str,
    inputs: &[Tensor<S>],
    h: f64,
    build: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::pre("grad_check", format!("step size {h} must be positive")));
    }
    if inputs.is_empty() {
        return Err(Error::pre("grad_check", "no inputs to perturb"));
    }

    let eval = |tensors: &[Tensor<S>]| -> Result<(Tape<S>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| tape.input(t.values(), t.shape()))
            .collect::<Result<_>>()?;
        let loss = build(&mut tape, &vars)?;
        if tape.numel(loss) != 1 {
            return Err(Error::pre(
                "grad_check",
                format!("program produced {} elements, expected a scalar", tape.numel(loss)),
            ));
        }
        Ok((tape, vars, loss))
    };

    let (mut tape, vars, loss) = eval(inputs)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| tape.grad(*v).iter().map(|g| g.to_f64_lossy()).collect())
        .collect();

    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst_input: 0,
        worst_element: 0,
        compared: 0,
    };
    let hs = S::from_f64_lossy(h);
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let orig = t.values()[ei];
            work[ti].values_mut()[ei] = orig + hs;
            let (tp, _, lp) = eval(&work)?;
            let fp = tp.scalar(lp)?.to_f64_lossy();
            work[ti].values_mut()[ei] = orig - hs;
            let (tm, _, lm) = eval(&work)?;
            let fm = tm.scalar(lm)?.to_f64_lossy();
            work[ti].values_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(analytic[ti][ei], numeric);
            report.compared += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_input = ti;
                report.worst_element = ei;
            }
        }
    }
    Ok(report)
}

/// Same comparison for a program driven by named parameters: the analytic
/// side accumulates leaf adjoints back into a copy of the set, the numeric
/// side re-evaluates with each parameter element nudged by `±h`. In the
/// report, `worst_input` indexes the set in insertion order.
pub fn grad_check_params<S, F>(
    name: &str,
    params: &ParamSet<S>,
    h: f64,
    eval: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &ParamSet<S>) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::pre("grad_check", format!("step size {h} must be positive")));
    }
    if params.is_empty() {
        return Err(Error::pre("grad_check", "no parameters to perturb"));
    }
    let run = |ps: &ParamSet<S>| -> Result<(Tape<S>, Var)> {
        let mut tape = Tape::new();
        let loss = eval(&mut tape, ps)?;
        if tape.numel(loss) != 1 {
            return Err(Error::pre(
                "grad_check",
                format!("program produced {} elements, expected a scalar", tape.numel(loss)),
            ));
        }
        Ok((tape, loss))
    };

    let mut analytic_set = params.clone();
    analytic_set.zero_grads();
    let (mut tape, loss) = run(&analytic_set)?;
    tape.backward(loss)?;
    tape.accumulate_grads_into(&mut analytic_set)?;

    let mut report = GradCheckReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst_input: 0,
        worst_element: 0,
        compared: 0,
    };
    let hs = S::from_f64_lossy(h);
    let mut work = params.clone();
    for ti in 0..params.len() {
        let id = ParamId(ti);
        for ei in 0..params.get(id).numel() {
            let orig = params.get(id).values()[ei];
            work.get_mut(id).values_mut()[ei] = orig + hs;
            let (tp, lp) = run(&work)?;
            let fp = tp.scalar(lp)?.to_f64_lossy();
            work.get_mut(id).values_mut()[ei] = orig - hs;
            let (tm, lm) = run(&work)?;
            let fm = tm.scalar(lm)?.to_f64_lossy();
            work.get_mut(id).values_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = analytic_set.get(id).grad()[ei].to_f64_lossy();
            let err = relative_error(analytic, numeric);
            report.compared += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_input = ti;
                report.worst_element = ei;
            }
        }
    }
    Ok(report)
}
