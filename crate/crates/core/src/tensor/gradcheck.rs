use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst gradient disagreement found for one named input.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::Contract(format!(
            "gradcheck function must return a scalar, got {:?}",
            value.shape()
        )));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::Numeric(format!("function value is {v}")));
    }
    Ok(v)
}

/// Compare tape gradients of a scalar function against central differences
/// for every coordinate of every input. `f` receives one tape variable per
/// entry of `inputs`, in order.
pub fn gradcheck_params<F>(
    inputs: &[(String, Tensor)],
    f: F,
    step: f64,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    gradcheck_params_on(inputs, f, step, Tape::new)
}

/// As [`gradcheck_params`], with control over how the analytic tape is built
/// (used to inject a corrupted backward rule).
pub fn gradcheck_params_on<F, T>(
    inputs: &[(String, Tensor)],
    f: F,
    step: f64,
    new_tape: T,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    T: Fn() -> Tape,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step {step} must be positive")));
    }
    let mut tape = new_tape();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out).data().first().copied().unwrap_or(f64::NAN);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("function value is {v}")));
    }
    tape.backward(out)?;

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = Vec::with_capacity(inputs.len());
    for (p, (name, tensor)) in inputs.iter().enumerate() {
        let zeros = vec![0.0; tensor.len()];
        let analytic = tape.grad(vars[p]).unwrap_or(&zeros).to_vec();
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: analytic.first().copied().unwrap_or(0.0),
            numeric: 0.0,
        };
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            values[p].data_mut()[i] = orig + step;
            let plus = eval(&f, &values)?;
            values[p].data_mut()[i] = orig - step;
            let minus = eval(&f, &values)?;
            values[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_err(analytic[i], numeric);
            if err > worst.max_rel_err || i == 0 {
                worst = ParamCheck {
                    name: name.clone(),
                    max_rel_err: err,
                    worst_index: i,
                    analytic: analytic[i],
                    numeric,
                };
            }
        }
        report.push(worst);
    }
    Ok(report)
}

/// Maximum relative error between the tape gradient of `f` at `x` and its
/// central-difference estimate, over all coordinates of `x`.
pub fn gradcheck<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = gradcheck_params(&[("x".to_string(), x.clone())], |t, v| f(t, v[0]), step)?;
    Ok(report[0].max_rel_err)
}
