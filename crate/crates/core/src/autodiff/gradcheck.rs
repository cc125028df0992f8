//! Central-difference verification of analytic gradients.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub step: f64,
    /// Largest accepted relative error.
    pub tol: f64,
    /// Lower bound on the denominator of the relative error, so entries
    /// whose true gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tol: 1e-5,
            floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    /// Flat index of the entry that produced `max_rel_error`.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss`.
///
/// `loss` is evaluated on perturbed copies of `params`; `analytic` must hold
/// one gradient per parameter with matching shapes.
pub fn check_gradients<F>(
    mut loss: F,
    params: &[Tensor],
    analytic: &[Tensor],
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(config.step > 0.0) {
        return Err(Error::contract("grad_check step must be positive"));
    }
    if params.len() != analytic.len() {
        return Err(Error::contract(format!(
            "{} parameters but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        tol: config.tol,
    };
    for (index, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[index].shape() {
            return Err(Error::Dimension {
                op: "grad_check",
                left: params[index].shape(),
                right: grad.shape(),
            });
        }
        let mut check = ParamCheck {
            index,
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for entry in 0..grad.len() {
            let original = probe[index].data()[entry];
            probe[index].data_mut()[entry] = original + config.step;
            let up = loss(&probe)?;
            probe[index].data_mut()[entry] = original - config.step;
            let down = loss(&probe)?;
            probe[index].data_mut()[entry] = original;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while probing parameter {index} entry {entry}"
                )));
            }
            let numeric = (up - down) / (2.0 * config.step);
            let a = grad.data()[entry];
            let err = relative_error(a, numeric, config.floor);
            if err > check.max_rel_error || entry == 0 {
                check.max_rel_error = err;
                check.worst_entry = entry;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

/// Runs `build` once with backward to get analytic gradients, then checks
/// them against central differences of the same builder.
pub fn grad_check<F>(build: F, params: &[Tensor], config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| g.grad(*v).clone()).collect();

    let loss = |probe: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|p| g.constant(p.clone())).collect();
        let root = build(&mut g, &vars)?;
        g.value(root)
            .item()
            .ok_or_else(|| Error::contract("loss builder must return a 1x1 node"))
    };
    check_gradients(loss, params, &analytic, config)
}
