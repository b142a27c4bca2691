use super::{no_grad, Result, Tensor, TensorError};

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|)
    pub max_rel_error: f64,
    /// (input index, coordinate) of the worst coordinate
    pub worst: (usize, usize),
    pub coordinates_checked: usize,
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_many(|xs| f(&xs[0]), std::slice::from_ref(x), h, None)
}

/// Checks the gradient of a scalar function of several tensors.
///
/// With `max_coords = Some(n)`, at most `n` evenly spaced coordinates of each
/// input are perturbed; `None` checks every coordinate.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(TensorError::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::with_grad).collect();
    let out = f(&leaves)?;
    out.backward()?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let _guard = no_grad();
        f(xs)?.item()
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates_checked: 0,
    };
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let stride = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let shifted = |delta: f64| -> Result<Vec<Tensor>> {
                let mut data = leaf.to_vec();
                data[i] += delta;
                let mut xs: Vec<Tensor> = leaves.iter().map(Tensor::detach).collect();
                xs[which] = Tensor::new(leaf.shape(), data)?;
                Ok(xs)
            };
            let plus = eval(&shifted(h)?)?;
            let minus = eval(&shifted(-h)?)?;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (which, i);
            }
        }
    }
    Ok(report)
}
