//! Central finite-difference oracle for analytic gradients.

use super::{Float, Module};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Perturbation size `h` in `(f(θ+h) - f(θ-h)) / 2h`.
    pub step: f64,
    pub rel_tol: f64,
    /// Denominator floor so coordinates with vanishing gradient are compared
    /// absolutely rather than relatively.
    pub abs_floor: f64,
    /// Check only the first `n` coordinates of each tensor.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, rel_tol: 1e-3, abs_floor: 1e-7, max_coords_per_param: None }
    }
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<Mismatch>,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the gradients left in the module's parameters by `analytic`
/// against central differences of `loss` for every trainable coordinate.
pub fn check_gradients<F, M>(
    model: &mut M,
    mut analytic: impl FnMut(&mut M) -> Result<f64>,
    mut loss: impl FnMut(&M) -> Result<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Float,
    M: Module<F>,
{
    model.zero_grad();
    analytic(model)?;
    let grads: Vec<Vec<f64>> =
        model.params().iter().map(|p| p.grad.data().iter().map(|g| g.f64()).collect()).collect();

    let mut report = GradCheckReport::default();
    let n_params = grads.len();
    for pi in 0..n_params {
        let (trainable, len, name) = {
            let params = model.params();
            (params[pi].trainable, params[pi].len(), params[pi].name.clone())
        };
        if !trainable {
            continue;
        }
        let coords = cfg.max_coords_per_param.map_or(len, |m| m.min(len));
        for j in 0..coords {
            let orig = model.params()[pi].value.data()[j];
            model.params_mut()[pi].value.data_mut()[j] = F::of(orig.f64() + cfg.step);
            let plus = loss(model)?;
            model.params_mut()[pi].value.data_mut()[j] = F::of(orig.f64() - cfg.step);
            let minus = loss(model)?;
            model.params_mut()[pi].value.data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let analytic = grads[pi][j];
            let rel_err = relative_error(analytic, numeric, cfg.abs_floor);
            report.checked += 1;
            let m = Mismatch { param: name.clone(), index: j, analytic, numeric, rel_err };
            if rel_err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel_err);
                report.worst = Some(m.clone());
            }
            if !(rel_err < cfg.rel_tol) {
                report.failures.push(m);
            }
        }
    }
    Ok(report)
}
