//! Central finite-difference checks for tape gradients.

use super::{Array2, NumericsError, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub median_rel_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
    /// `(parameter index, flat entry index)` of the largest error.
    pub worst: (usize, usize),
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at every entry of
/// every parameter. `f` may evaluate in any precision; the step actually taken
/// after rounding the perturbed parameter to `f32` is used as the denominator.
pub fn compare_with_finite_differences<F>(
    params: &[Array2],
    analytic: &[Array2],
    h: f32,
    mut f: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&[Array2]) -> Result<f64, NumericsError>,
{
    if params.len() != analytic.len() {
        return Err(NumericsError::Shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe: Vec<Array2> = params.to_vec();
    let mut errors = Vec::new();
    let mut worst = (0, 0);
    let mut max_rel = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[pi].shape() {
            return Err(NumericsError::Shape(format!(
                "gradient {pi} has shape {:?}, parameter {:?}",
                grad.shape(),
                params[pi].shape()
            )));
        }
        for e in 0..grad.len() {
            let base = params[pi].data()[e];
            let plus = base + h;
            let minus = base - h;
            probe[pi].data_mut()[e] = plus;
            let f_plus = f(&probe)?;
            probe[pi].data_mut()[e] = minus;
            let f_minus = f(&probe)?;
            probe[pi].data_mut()[e] = base;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(NumericsError::NonFinite("finite-difference probe"));
            }
            let numeric = (f_plus - f_minus) / (plus as f64 - minus as f64);
            let rel = relative_error(grad.data()[e] as f64, numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = (pi, e);
            }
            errors.push(rel);
        }
    }
    let checked = errors.len();
    Ok(GradCheckReport { max_rel_error: max_rel, median_rel_error: median(&mut errors), checked, worst })
}

/// Gradient check of a function recorded on a tape: the autodiff gradient
/// against central differences of the same `f32` forward pass.
pub fn grad_check<F>(params: &[Array2], h: f32, f: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NumericsError>,
{
    let analytic = tape_gradients(params, &f)?;
    compare_with_finite_differences(params, &analytic, h, |probe| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|p| tape.leaf_ref(p)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0] as f64)
    })
}

/// Autodiff gradient of `f` with respect to every parameter (zeros for
/// parameters that do not reach the output).
pub fn tape_gradients<F>(params: &[Array2], f: &F) -> Result<Vec<Array2>, NumericsError>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf_ref(p)).collect();
    let out = f(&mut tape, &vars)?;
    let mut grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Array2::zeros(p.rows(), p.cols())))
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
