use super::{NoiseSchedule, VelocityModel};
use crate::error::{ensure, Result};
use crate::numerics::rng::{fill_normal, Rng};
use crate::Float;

/// Ancestral sampling from `x_T ~ N(0, I)` down to an estimate of `x₀`.
///
/// Each step converts the predicted velocity to `x̂₀`, moves to the posterior
/// mean of `q(x_{t-1} | x_t, x̂₀)` and adds posterior-variance noise except at
/// the final step. `channels` gives the channel id of each of the
/// `channels.len()` rows of `len` samples.
pub fn ancestral_sample<F: Float, M: VelocityModel<F> + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    len: usize,
    channels: &[usize],
    rng: &mut Rng,
) -> Result<Vec<F>> {
    ensure!(len > 0 && !channels.is_empty(), Shape, "sample shape must be non-empty");
    let n = len * channels.len();
    let mut x = vec![F::zero(); n];
    fill_normal(rng, &mut x);
    let mut z = vec![F::zero(); n];
    for t in (1..=sched.steps()).rev() {
        let steps = vec![t; channels.len()];
        let v = model.predict(&x, len, &steps, channels)?;
        ensure!(v.len() == n, Shape, "model returned {} values for {n}", v.len());
        let (a, b) = (F::of(sched.sqrt_alpha_bar(t)), F::of(sched.sqrt_one_minus_alpha_bar(t)));
        let (c0, ct) = sched.posterior_mean_coefs(t);
        let (c0, ct) = (F::of(c0), F::of(ct));
        let sigma = F::of(sched.sigma(t));
        if t > 1 {
            fill_normal(rng, &mut z);
        }
        for i in 0..n {
            let x0_hat = a * x[i] - b * v[i];
            x[i] = c0 * x0_hat + ct * x[i];
            if t > 1 {
                x[i] += sigma * z[i];
            }
        }
    }
    Ok(x)
}
