//! Central finite-difference check of tape gradients.

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative-error denominators are floored here so that near-zero gradients
/// are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares the gradient of the scalar built by `f` with respect to each of
/// `inputs` against central differences with step `h`.
pub fn check<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[i].numel()];
        let analytic = grads.get(*v).unwrap_or(&zeros).to_vec();
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let up = eval(&probe, &f)?;
            probe[i].data_mut()[j] = x0 - h;
            let down = eval(&probe, &f)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * h);
            if !numeric.is_finite() || !analytic[j].is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of input {i} element {j}"
                )));
            }
            let err = relative_error(analytic[j], numeric);
            if err > report.max_rel_error {
                report = GradCheck {
                    max_rel_error: err,
                    worst: (i, j),
                    analytic: analytic[j],
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
