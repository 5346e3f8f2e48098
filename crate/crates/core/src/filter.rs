//! Exact Bayesian filtering over a window of observations and actions.

use crate::error::{Error, Result};
use crate::model::{Belief, FinitePomdp};
use crate::window::WindowSpace;

/// Normalizers below this are treated as an impossible window.
pub const ZERO_PROBABILITY: f64 = 1e-300;

/// `b ↦ b·𝒯(·|·,u)`.
pub fn push_forward(model: &FinitePomdp, b: &[f64], u: usize) -> Vec<f64> {
    let mut out = vec![0.0; model.n_states];
    let t = &model.transition[u];
    for (x, &w) in b.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (next, p) in t[x].iter().enumerate() {
            out[next] += w * p;
        }
    }
    out
}

/// Multiplies `b` pointwise by the likelihood of observation `y`.
pub fn condition_in_place(model: &FinitePomdp, b: &mut [f64], y: usize) -> f64 {
    let mut total = 0.0;
    for (x, w) in b.iter_mut().enumerate() {
        *w *= model.channel[x][y];
        total += *w;
    }
    total
}

/// Unnormalized forward pass through a window: returns the vector
/// `P(x_t = ·, y_{t-N..t} | u_{t-N..t-1})` under `prior` on `x_{t-N}`.
pub fn window_forward(model: &FinitePomdp, prior: &[f64], obs: &[usize], acts: &[usize]) -> Vec<f64> {
    let mut alpha = prior.to_vec();
    condition_in_place(model, &mut alpha, obs[0]);
    for (k, &u) in acts.iter().enumerate() {
        alpha = push_forward(model, &alpha, u);
        condition_in_place(model, &mut alpha, obs[k + 1]);
    }
    alpha
}

/// Exact posterior of `x_t` given the window `h` when `x_{t-N} ~ prior`.
pub fn window_posterior(
    model: &FinitePomdp,
    prior: &Belief,
    space: &WindowSpace,
    h: usize,
) -> Result<Belief> {
    let w = space.decode(h);
    let alpha = window_forward(model, prior.as_slice(), &w.obs, &w.acts);
    let normalizer: f64 = alpha.iter().sum();
    if normalizer < ZERO_PROBABILITY {
        return Err(Error::ZeroProbabilityWindow { normalizer });
    }
    Ok(Belief::from_unnormalized(alpha).expect("positive normalizer"))
}

/// Posterior of `x_t` for a window, or, when the window is impossible under
/// `prior`, the prior pushed through the window's actions. The flag is true
/// when the fallback was used.
pub fn posterior_or_fallback(
    model: &FinitePomdp,
    prior: &Belief,
    space: &WindowSpace,
    h: usize,
) -> (Belief, bool) {
    match window_posterior(model, prior, space, h) {
        Ok(b) => (b, false),
        Err(_) => {
            let w = space.decode(h);
            let mut b = prior.as_slice().to_vec();
            for &u in &w.acts {
                b = push_forward(model, &b, u);
            }
            (Belief::from_unnormalized(b).expect("push-forward of a distribution"), true)
        }
    }
}

/// One-step predictor: condition `mu` on `y`, then apply `𝒯(·|·,u)`.
pub fn predictor_update(model: &FinitePomdp, mu: &Belief, y: usize, u: usize) -> Result<Belief> {
    let mut b = mu.as_slice().to_vec();
    let total = condition_in_place(model, &mut b, y);
    if total < ZERO_PROBABILITY {
        return Err(Error::ZeroProbabilityObservation { obs: y });
    }
    b.iter_mut().for_each(|w| *w /= total);
    Ok(Belief::from_unnormalized(push_forward(model, &b, u)).expect("stochastic kernel"))
}

/// Observation law `P(y | b, u) = Σ_x b(x) Σ_x' 𝒯(x'|x,u) O(y|x')`.
pub fn next_obs_distribution(model: &FinitePomdp, b: &[f64], u: usize) -> Vec<f64> {
    let next = push_forward(model, b, u);
    let mut out = vec![0.0; model.n_obs];
    for (x, &w) in next.iter().enumerate() {
        for (y, p) in model.channel[x].iter().enumerate() {
            out[y] += w * p;
        }
    }
    out
}

/// Conditional law of `y_{t+1}` given the window and the action `u_t`.
pub fn predicted_obs_kernel(
    model: &FinitePomdp,
    prior: &Belief,
    space: &WindowSpace,
    h: usize,
    u: usize,
) -> Result<Vec<f64>> {
    let post = window_posterior(model, prior, space, h)?;
    Ok(next_obs_distribution(model, post.as_slice(), u))
}
