//! The approximate fully observed MDP on window states for a fixed design
//! prior, its exact value oracles, the warm-up law of `(x_0, h_0)` and the
//! value of a window policy in the true environment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ergodicity::{build_joint_chain, DENSE_LIMIT};
use crate::error::{Error, Result};
use crate::filter::{next_obs_distribution, posterior_or_fallback};
use crate::model::{Belief, FinitePomdp};
use crate::window::{WindowPolicy, WindowSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxWindowMdp {
    pub space: WindowSpace,
    pub design_prior: Belief,
    pub discount: f64,
    /// ‖c‖_∞ of the underlying model.
    pub cost_sup: f64,
    /// ĉ_π(h,u) at `h·|𝕌| + u`.
    cost_hat: Vec<f64>,
    /// η_π(·|h,u) at `h·|𝕌| + u`, as (next window, probability) pairs.
    kernel_hat: Vec<Vec<(usize, f64)>>,
    /// P^π(x_t | h) per window.
    posteriors: Vec<Vec<f64>>,
    /// Windows with zero probability under the design prior.
    unreachable: Vec<bool>,
}

/// ĉ_π and η_π from exact window posteriors under `pi`.
pub fn build_window_mdp(model: &FinitePomdp, pi: &Belief, memory: usize) -> Result<ApproxWindowMdp> {
    if pi.len() != model.n_states {
        return Err(Error::InvalidArgument("design prior has the wrong dimension".into()));
    }
    let space = WindowSpace::new(model.n_obs, model.n_actions, memory);
    let nu = model.n_actions;
    let mut cost_hat = Vec::with_capacity(space.pairs());
    let mut kernel_hat = Vec::with_capacity(space.pairs());
    let mut posteriors = Vec::with_capacity(space.len());
    let mut unreachable = Vec::with_capacity(space.len());
    for h in 0..space.len() {
        let (post, flagged) = posterior_or_fallback(model, pi, &space, h);
        for u in 0..nu {
            cost_hat.push((0..model.n_states).map(|x| post[x] * model.cost[x][u]).sum());
            let obs = next_obs_distribution(model, post.as_slice(), u);
            kernel_hat.push(
                obs.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(y, &p)| (space.shift(h, u, y), p))
                    .collect(),
            );
        }
        posteriors.push(post.into_vec());
        unreachable.push(flagged);
    }
    Ok(ApproxWindowMdp {
        space,
        design_prior: pi.clone(),
        discount: model.discount,
        cost_sup: model.cost_sup(),
        cost_hat,
        kernel_hat,
        posteriors,
        unreachable,
    })
}

impl ApproxWindowMdp {
    pub fn n_windows(&self) -> usize {
        self.space.len()
    }

    pub fn n_actions(&self) -> usize {
        self.space.n_actions
    }

    #[inline]
    pub fn cost_hat(&self, h: usize, u: usize) -> f64 {
        self.cost_hat[h * self.space.n_actions + u]
    }

    #[inline]
    pub fn kernel_row(&self, h: usize, u: usize) -> &[(usize, f64)] {
        &self.kernel_hat[h * self.space.n_actions + u]
    }

    pub fn posterior(&self, h: usize) -> &[f64] {
        &self.posteriors[h]
    }

    pub fn is_unreachable(&self, h: usize) -> bool {
        self.unreachable[h]
    }

    /// `Σ_{h'} η_π(h'|h,u) f(h')`.
    #[inline]
    pub fn expect_next(&self, h: usize, u: usize, f: &[f64]) -> f64 {
        self.kernel_row(h, u).iter().map(|&(n, p)| p * f[n]).sum()
    }

    /// T^γ f.
    pub fn bellman_policy(&self, gamma: &WindowPolicy, f: &[f64]) -> Vec<f64> {
        let beta = self.discount;
        (0..self.n_windows())
            .map(|h| {
                (0..self.n_actions())
                    .map(|u| {
                        let p = gamma.prob(h, u);
                        if p == 0.0 {
                            0.0
                        } else {
                            p * (self.cost_hat(h, u) + beta * self.expect_next(h, u, f))
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Greedy Bellman operator on functions of (window, action).
    pub fn bellman_greedy(&self, q: &[f64]) -> Vec<f64> {
        let nu = self.n_actions();
        let v: Vec<f64> = q.chunks(nu).map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect();
        let beta = self.discount;
        (0..self.space.pairs())
            .map(|i| self.cost_hat[i] + beta * self.kernel_hat[i].iter().map(|&(n, p)| p * v[n]).sum::<f64>())
            .collect()
    }

    /// `Σ_u γ(u|h) ĉ_π(h,u)`.
    pub fn policy_cost(&self, gamma: &WindowPolicy) -> Vec<f64> {
        (0..self.n_windows())
            .map(|h| (0..self.n_actions()).map(|u| gamma.prob(h, u) * self.cost_hat(h, u)).sum())
            .collect()
    }

    /// Sparse rows of the window chain under γ.
    pub fn policy_rows(&self, gamma: &WindowPolicy) -> Vec<Vec<(usize, f64)>> {
        (0..self.n_windows())
            .map(|h| {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for u in 0..self.n_actions() {
                    let pu = gamma.prob(h, u);
                    if pu == 0.0 {
                        continue;
                    }
                    for &(n, p) in self.kernel_row(h, u) {
                        match row.iter_mut().find(|e| e.0 == n) {
                            Some(e) => e.1 += pu * p,
                            None => row.push((n, pu * p)),
                        }
                    }
                }
                row.sort_by_key(|e| e.0);
                row
            })
            .collect()
    }
}

/// Solves `V = c + βPV` for a substochastic sparse `P`; dense LU below the
/// dense limit, value iteration to a 1e-13 fixed-point gap above.
pub(crate) fn solve_discounted(rows: &[Vec<(usize, f64)>], cost: &[f64], beta: f64) -> Vec<f64> {
    let n = rows.len();
    if n <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        for (s, row) in rows.iter().enumerate() {
            for &(t, p) in row {
                a[(s, t)] -= beta * p;
            }
        }
        if let Some(v) = a.lu().solve(&DVector::from_column_slice(cost)) {
            return v.iter().copied().collect();
        }
    }
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = rows
            .iter()
            .zip(cost)
            .map(|(row, c)| c + beta * row.iter().map(|&(t, p)| p * v[t]).sum::<f64>())
            .collect();
        let gap = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if gap * beta / (1.0 - beta) < 1e-13 {
            return v;
        }
    }
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// J^N(·,γ), the fixed point of T^γ.
pub fn exact_policy_value(mdp: &ApproxWindowMdp, gamma: &WindowPolicy) -> Result<Vec<f64>> {
    if gamma.space() != mdp.space {
        return Err(Error::InvalidArgument("policy window space does not match the window MDP".into()));
    }
    Ok(solve_discounted(&mdp.policy_rows(gamma), &mdp.policy_cost(gamma), mdp.discount))
}

/// ‖J − T^γ J‖_∞.
pub fn policy_residual(mdp: &ApproxWindowMdp, gamma: &WindowPolicy, j: &[f64]) -> f64 {
    sup_gap(j, &mdp.bellman_policy(gamma, j))
}

/// ‖Q − TQ‖_∞ for the greedy operator.
pub fn greedy_residual(mdp: &ApproxWindowMdp, q: &[f64]) -> f64 {
    sup_gap(q, &mdp.bellman_greedy(q))
}

/// Smallest-index argmin of each row of a (window, action) table.
pub fn greedy_from_q(q: &[f64], n_actions: usize) -> Vec<usize> {
    q.chunks(n_actions)
        .map(|row| {
            let mut best = 0;
            for (u, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = u;
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalQ {
    /// Q at `h·|𝕌| + u`.
    pub q: Vec<f64>,
    /// min_u Q(h,u).
    pub value: Vec<f64>,
    /// Greedy action per window, smallest index on ties.
    pub greedy: Vec<usize>,
    pub residual: f64,
    pub iterations: usize,
}

/// Optimal Q of the window MDP by policy iteration.
pub fn exact_optimal_q(mdp: &ApproxWindowMdp) -> Result<OptimalQ> {
    let nu = mdp.n_actions();
    let nw = mdp.n_windows();
    let mut actions = vec![0usize; nw];
    let mut iterations = 0;
    let q = loop {
        iterations += 1;
        let gamma = WindowPolicy::deterministic(mdp.space, &actions)?;
        let j = exact_policy_value(mdp, &gamma)?;
        let q: Vec<f64> = (0..mdp.space.pairs())
            .map(|i| mdp.cost_hat[i] + mdp.discount * mdp.expect_next(i / nu, i % nu, &j))
            .collect();
        let mut changed = false;
        for h in 0..nw {
            let row = &q[h * nu..(h + 1) * nu];
            let best = greedy_from_q(row, nu)[0];
            if row[best] < row[actions[h]] - 1e-12 {
                actions[h] = best;
                changed = true;
            }
        }
        if !changed || iterations > 10_000 {
            break q;
        }
    };
    let residual = greedy_residual(mdp, &q);
    let value = q.chunks(nu).map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let greedy = greedy_from_q(&q, nu);
    Ok(OptimalQ { q, value, greedy, residual, iterations })
}

/// Joint law of `(x_0, h_0)` after the warm-up steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupDistribution {
    pub space: WindowSpace,
    pub n_states: usize,
    /// Probability at `h·|𝕏| + x`.
    pub joint: Vec<f64>,
}

impl WarmupDistribution {
    pub fn prob(&self, x: usize, h: usize) -> f64 {
        self.joint[h * self.n_states + x]
    }

    pub fn window_marginal(&self) -> Vec<f64> {
        self.joint.chunks(self.n_states).map(|c| c.iter().sum()).collect()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states];
        for c in self.joint.chunks(self.n_states) {
            for (o, p) in out.iter_mut().zip(c) {
                *o += p;
            }
        }
        out
    }

    /// P(x_0 | h_0), or `None` when `h_0` has zero probability.
    pub fn conditional(&self, h: usize) -> Option<Vec<f64>> {
        let row = &self.joint[h * self.n_states..(h + 1) * self.n_states];
        let w: f64 = row.iter().sum();
        (w > 0.0).then(|| row.iter().map(|p| p / w).collect())
    }
}

/// Exact forward recursion over the `N` warm-up steps starting from
/// `x_{-N} ~ mu_init` and the padded window of `y_{-N}`.
pub fn warmup_distribution(
    model: &FinitePomdp,
    mu_init: &Belief,
    warmup: &WindowPolicy,
    memory: usize,
) -> Result<WarmupDistribution> {
    let space = WindowSpace::new(model.n_obs, model.n_actions, memory);
    if warmup.space() != space || mu_init.len() != model.n_states {
        return Err(Error::InvalidArgument("warm-up policy or prior does not match the model".into()));
    }
    let nx = model.n_states;
    let mut joint = vec![0.0; space.len() * nx];
    for x in 0..nx {
        for y in 0..model.n_obs {
            joint[space.padded_start(y) * nx + x] += mu_init[x] * model.channel[x][y];
        }
    }
    for _ in 0..memory {
        let mut next = vec![0.0; joint.len()];
        for (s, &p) in joint.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (h, x) = (s / nx, s % nx);
            for u in 0..model.n_actions {
                let pu = warmup.prob(h, u);
                if pu == 0.0 {
                    continue;
                }
                for (x2, &pt) in model.transition[u][x].iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    for (y2, &po) in model.channel[x2].iter().enumerate() {
                        next[space.shift(h, u, y2) * nx + x2] += p * pu * pt * po;
                    }
                }
            }
        }
        joint = next;
    }
    Ok(WarmupDistribution { space, n_states: nx, joint })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueValue {
    /// V(x,h) at `h·|𝕏| + x`: expected discounted cost from `(x_0,h_0)`.
    pub per_state: Vec<f64>,
    /// J_β(z_0,γ) per window, `None` when the warm-up never produces it.
    pub per_window: Vec<Option<f64>>,
    /// E[J_β(z_0,γ)] under the warm-up law.
    pub expectation: f64,
    pub residual: f64,
}

/// Value of γ in the true POMDP from the warm-up law of `(x_0, h_0)`.
pub fn true_policy_value(model: &FinitePomdp, gamma: &WindowPolicy, warm: &WarmupDistribution) -> Result<TrueValue> {
    if warm.space != gamma.space() || warm.n_states != model.n_states {
        return Err(Error::InvalidArgument("warm-up distribution does not match policy and model".into()));
    }
    let chain = build_joint_chain(model, gamma)?;
    let rows: Vec<Vec<(usize, f64)>> = (0..chain.len()).map(|s| chain.row(s).to_vec()).collect();
    let beta = model.discount;
    let v = solve_discounted(&rows, chain.expected_cost(), beta);
    let pv = chain.apply(&v);
    let residual = v
        .iter()
        .zip(&pv)
        .zip(chain.expected_cost())
        .map(|((v, pv), c)| (v - c - beta * pv).abs())
        .fold(0.0, f64::max);
    let nx = model.n_states;
    let per_window = (0..warm.space.len())
        .map(|h| warm.conditional(h).map(|post| (0..nx).map(|x| post[x] * v[h * nx + x]).sum()))
        .collect();
    let expectation = warm.joint.iter().zip(&v).map(|(p, v)| p * v).sum();
    Ok(TrueValue { per_state: v, per_window, expectation, residual })
}
