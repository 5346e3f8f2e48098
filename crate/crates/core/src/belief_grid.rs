//! Reference value of the true POMDP optimum by value iteration on a
//! uniform simplex grid of beliefs, with an explicit error bracket.
//!
//! The optimal value is Lipschitz in the belief with constant
//! `span(c)/(2(1−β))` in L1, so projecting successor beliefs to the grid
//! costs at most `β·Lip·ρ/(1−β)` overall, where ρ is the largest L1
//! projection distance actually encountered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{condition_in_place, push_forward};
use crate::model::FinitePomdp;
use crate::window_mdp::WarmupDistribution;

/// Grids above this many points are refused.
pub const MAX_GRID_POINTS: usize = 2_000_000;

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Number of compositions of `total` into `parts` non-negative parts.
fn compositions(total: usize, parts: usize) -> f64 {
    if parts == 0 {
        return if total == 0 { 1.0 } else { 0.0 };
    }
    binomial((total + parts - 1) as u64, (parts - 1) as u64).round()
}

/// Lexicographic rank of a composition of `total`.
fn rank(counts: &[u32], total: usize) -> usize {
    let k = counts.len();
    let mut left = total;
    let mut r = 0.0;
    for (i, &c) in counts.iter().enumerate().take(k - 1) {
        for v in 0..c as usize {
            r += compositions(left - v, k - i - 1);
        }
        left -= c as usize;
    }
    r as usize
}

fn all_compositions(total: usize, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; parts];
    fn rec(i: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i + 1 == cur.len() {
            cur[i] = left as u32;
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[i] = v as u32;
            rec(i + 1, left - v, cur, out);
        }
    }
    rec(0, total, &mut cur, &mut out);
    out
}

/// Largest-remainder rounding of `K·b` onto the grid.
fn snap(b: &[f64], k: usize) -> Vec<u32> {
    let scaled: Vec<f64> = b.iter().map(|p| p * k as f64).collect();
    let mut counts: Vec<u32> = scaled.iter().map(|s| s.floor().max(0.0) as u32).collect();
    let assigned: usize = counts.iter().map(|&c| c as usize).sum();
    let mut order: Vec<usize> = (0..b.len()).collect();
    order.sort_by(|&i, &j| (scaled[j] - scaled[j].floor()).total_cmp(&(scaled[i] - scaled[i].floor())).then(i.cmp(&j)));
    for &i in order.iter().take(k.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn l1_to_grid(b: &[f64], counts: &[u32], k: usize) -> f64 {
    b.iter().zip(counts).map(|(p, &c)| (p - c as f64 / k as f64).abs()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefGrid {
    pub n_states: usize,
    pub resolution: usize,
    pub discount: f64,
    /// Optimal value of the grid-projected problem at each grid point.
    pub value: Vec<f64>,
    /// Lipschitz constant of the optimal value in L1.
    pub lipschitz: f64,
    /// Largest L1 distance between a successor belief and its grid point.
    pub rho_max: f64,
    /// Bound on the distance of `value` to the true optimum at grid points.
    pub bracket: f64,
    pub iterations: usize,
    pub final_change: f64,
}

/// Value iteration on the grid of beliefs with coordinates in `{0, 1/K, ..., 1}`.
pub fn solve_belief_grid(model: &FinitePomdp, resolution: usize) -> Result<BeliefGrid> {
    let nx = model.n_states;
    let k = resolution.max(1);
    let n_points = compositions(k, nx);
    if n_points > MAX_GRID_POINTS as f64 {
        return Err(Error::TooLarge(format!("belief grid of {n_points} points exceeds {MAX_GRID_POINTS}")));
    }
    let points = all_compositions(k, nx);
    let nu = model.n_actions;
    let ny = model.n_obs;
    let beta = model.discount;
    // Per (point, u): expected cost and successor (grid index, probability) pairs.
    let mut cost = vec![0.0; points.len() * nu];
    let mut succ: Vec<Vec<(u32, f64)>> = Vec::with_capacity(points.len() * nu);
    let mut rho_max = 0.0_f64;
    for (i, c) in points.iter().enumerate() {
        let b: Vec<f64> = c.iter().map(|&v| v as f64 / k as f64).collect();
        for u in 0..nu {
            cost[i * nu + u] = (0..nx).map(|x| b[x] * model.cost[x][u]).sum();
            let pred = push_forward(model, &b, u);
            let mut row = Vec::with_capacity(ny);
            for y in 0..ny {
                let mut post = pred.clone();
                let py = condition_in_place(model, &mut post, y);
                if py <= 0.0 {
                    continue;
                }
                post.iter_mut().for_each(|v| *v /= py);
                let g = snap(&post, k);
                rho_max = rho_max.max(l1_to_grid(&post, &g, k));
                row.push((rank(&g, k) as u32, py));
            }
            succ.push(row);
        }
    }
    let mut value = vec![0.0; points.len()];
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while change >= 1e-12 && iterations < 100_000 {
        let next: Vec<f64> = (0..points.len())
            .map(|i| {
                (0..nu)
                    .map(|u| {
                        let s = &succ[i * nu + u];
                        cost[i * nu + u] + beta * s.iter().map(|&(j, p)| p * value[j as usize]).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        change = next.iter().zip(&value).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        value = next;
        iterations += 1;
    }
    let lipschitz = model.cost_span() / (2.0 * (1.0 - beta));
    let bracket = beta * lipschitz * rho_max / (1.0 - beta) + beta * change / (1.0 - beta);
    Ok(BeliefGrid {
        n_states: nx,
        resolution: k,
        discount: beta,
        value,
        lipschitz,
        rho_max,
        bracket,
        iterations,
        final_change: change,
    })
}

impl BeliefGrid {
    /// Optimal value at an arbitrary belief by one exact Bellman step on
    /// the grid values, with its own error bound.
    pub fn evaluate(&self, model: &FinitePomdp, b: &[f64]) -> (f64, f64) {
        let k = self.resolution;
        let beta = self.discount;
        let mut rho = 0.0_f64;
        let mut best = f64::INFINITY;
        for u in 0..model.n_actions {
            let mut q: f64 = b.iter().enumerate().map(|(x, p)| p * model.cost[x][u]).sum();
            let pred = push_forward(model, b, u);
            for y in 0..model.n_obs {
                let mut post = pred.clone();
                let py = condition_in_place(model, &mut post, y);
                if py <= 0.0 {
                    continue;
                }
                post.iter_mut().for_each(|v| *v /= py);
                let g = snap(&post, k);
                rho = rho.max(l1_to_grid(&post, &g, k));
                q += beta * py * self.value[rank(&g, k)];
            }
            best = best.min(q);
        }
        (best, beta * (self.lipschitz * rho + self.bracket))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalValueReference {
    /// Estimate of `E[J*_β(z_0)]` under the warm-up law.
    pub value: f64,
    /// The true value lies within `value ± bracket`.
    pub bracket: f64,
    /// `J*` at the posterior of each window, `None` for windows of zero probability.
    pub per_window: Vec<Option<f64>>,
    pub method: String,
    pub resolution: usize,
    pub grid_points: usize,
}

/// `E[J*_β(z_0)]` where `z_0` carries the posterior of `x_0` given the
/// warm-up window `h_0`.
pub fn optimal_value_reference(model: &FinitePomdp, warm: &WarmupDistribution, resolution: usize) -> Result<OptimalValueReference> {
    if warm.n_states != model.n_states {
        return Err(Error::InvalidArgument("warm-up distribution does not match the model".into()));
    }
    let grid = solve_belief_grid(model, resolution)?;
    let marg = warm.window_marginal();
    let mut value = 0.0;
    let mut bracket = 0.0_f64;
    let per_window = (0..warm.space.len())
        .map(|h| {
            warm.conditional(h).map(|post| {
                let (v, e) = grid.evaluate(model, &post);
                value += marg[h] * v;
                bracket = bracket.max(e);
                v
            })
        })
        .collect();
    Ok(OptimalValueReference {
        value,
        bracket,
        per_window,
        method: "belief-grid value iteration".into(),
        resolution: grid.resolution,
        grid_points: grid.value.len(),
    })
}
