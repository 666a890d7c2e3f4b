use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Denominator floor, so exact zeros on both sides do not divide by zero.
const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error between `backward()` and central differences of a
/// scalar function of one tensor.
pub fn gradcheck<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    gradcheck_inputs(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h, None)
}

/// Like [`gradcheck`] over several input tensors. With `max_per_input`, only
/// an evenly strided subset of each tensor's elements is perturbed.
pub fn gradcheck_inputs<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    max_per_input: Option<usize>,
) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (j, input) in inputs.iter().enumerate() {
        let n = input.len();
        let picks: Vec<usize> = match max_per_input {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        for i in picks {
            let orig = input.data()[i];
            work[j].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[j].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[j].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[j].data()[i], numeric));
        }
    }
    Ok(worst)
}
