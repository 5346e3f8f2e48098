//! The joint Markov chain of (window, hidden state) under a window policy,
//! its invariant measure, minorization checks and mixing diagnostics.
//!
//! Chain states are indexed `s = h·|𝕏| + x`. One step draws `u ~ γ(·|h)`,
//! `x' ~ 𝒯(·|x,u)`, `y' ~ O(·|x')` and shifts the window. The action is not
//! part of the chain state; the (h,x,u) occupancy is `π̄(h,x)·γ(u|h)`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tv_distance, FinitePomdp};
use crate::par::{self, Exec};
use crate::window::{WindowPolicy, WindowSpace};

/// Dense linear algebra is only used below this many chain states.
pub const DENSE_LIMIT: usize = 5_000;

#[derive(Clone, Debug)]
pub struct JointChain {
    pub space: WindowSpace,
    pub n_states: usize,
    pub discount: f64,
    /// Sparse rows: successors and probabilities.
    rows: Vec<Vec<(usize, f64)>>,
    /// Expected stage cost `Σ_u γ(u|h) c(x,u)` per chain state.
    expected_cost: Vec<f64>,
    policy: WindowPolicy,
}

impl JointChain {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    #[inline]
    pub fn index(&self, h: usize, x: usize) -> usize {
        h * self.n_states + x
    }

    #[inline]
    pub fn split(&self, s: usize) -> (usize, usize) {
        (s / self.n_states, s % self.n_states)
    }

    pub fn row(&self, s: usize) -> &[(usize, f64)] {
        &self.rows[s]
    }

    pub fn expected_cost(&self) -> &[f64] {
        &self.expected_cost
    }

    pub fn policy(&self) -> &WindowPolicy {
        &self.policy
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, p) in row {
                m[(s, t)] += p;
            }
        }
        m
    }

    /// `d ↦ dP`.
    pub fn step_distribution(&self, d: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; d.len()];
        for (s, &w) in d.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(t, p) in &self.rows[s] {
                out[t] += w * p;
            }
        }
        out
    }

    /// `f ↦ Pf`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(t, p)| p * f[t]).sum()).collect()
    }
}

/// Builds the kernel `γ → 𝒯 → O → shift` on (window, state) pairs.
pub fn build_joint_chain(model: &FinitePomdp, gamma: &WindowPolicy) -> Result<JointChain> {
    let space = gamma.space();
    if space.n_obs != model.n_obs || space.n_actions != model.n_actions {
        return Err(Error::InvalidArgument("policy window space does not match the model".into()));
    }
    let nx = model.n_states;
    let n = space.len() * nx;
    let mut rows = Vec::with_capacity(n);
    let mut expected_cost = Vec::with_capacity(n);
    for h in 0..space.len() {
        for x in 0..nx {
            let mut dense: Vec<f64> = Vec::new();
            let mut touched: Vec<usize> = Vec::new();
            let mut cbar = 0.0;
            for u in 0..space.n_actions {
                let pu = gamma.prob(h, u);
                if pu == 0.0 {
                    continue;
                }
                cbar += pu * model.cost[x][u];
                for (x2, &pt) in model.transition[u][x].iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    for (y2, &po) in model.channel[x2].iter().enumerate() {
                        if po == 0.0 {
                            continue;
                        }
                        let t = space.shift(h, u, y2) * nx + x2;
                        if dense.is_empty() {
                            dense = vec![0.0; n];
                        }
                        if dense[t] == 0.0 {
                            touched.push(t);
                        }
                        dense[t] += pu * pt * po;
                    }
                }
            }
            touched.sort_unstable();
            rows.push(touched.into_iter().map(|t| (t, dense[t])).collect());
            expected_cost.push(cbar);
        }
    }
    Ok(JointChain { space, n_states: nx, discount: model.discount, rows, expected_cost, policy: gamma.clone() })
}

/// Closed strongly connected components of the positive-probability graph,
/// each sorted, listed by smallest member.
pub fn recurrent_classes(chain: &JointChain) -> Vec<Vec<usize>> {
    let n = chain.len();
    let mut g = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for s in 0..n {
        for &(t, p) in chain.row(s) {
            if p > 0.0 {
                g.add_edge(nodes[s], nodes[t], ());
            }
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members.iter().all(|v| {
                chain.row(v.index()).iter().all(|&(t, p)| p == 0.0 || comp[t] == *c)
            })
        })
        .map(|(_, members)| {
            let mut m: Vec<usize> = members.iter().map(|v| v.index()).collect();
            m.sort_unstable();
            m
        })
        .collect();
    closed.sort_by_key(|m| m[0]);
    closed
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantMeasure {
    pub n_windows: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// π̄ over chain states `h·|𝕏| + x`.
    pub joint: Vec<f64>,
    /// Marginal over windows.
    pub window: Vec<f64>,
    /// Marginal over hidden states (π_x).
    pub state: Vec<f64>,
    /// Marginal over (window, action), indexed `h·|𝕌| + u`.
    pub window_action: Vec<f64>,
    /// Full (h,x,u) occupancy, indexed `(h·|𝕏| + x)·|𝕌| + u`.
    pub occupancy: Vec<f64>,
    /// Single recurrent class found.
    pub unique: bool,
    /// max |π̄P − π̄|.
    pub residual: f64,
    pub method: String,
}

impl InvariantMeasure {
    /// Conditional law of `x` given `h`, or `None` on a null window.
    pub fn state_given_window(&self, h: usize) -> Option<Vec<f64>> {
        let w = self.window[h];
        if w <= 0.0 {
            return None;
        }
        Some((0..self.n_states).map(|x| self.joint[h * self.n_states + x] / w).collect())
    }

    /// CSV keyed by `(h_index, x, u)`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "h_index,x,u,prob")?;
        for h in 0..self.n_windows {
            for x in 0..self.n_states {
                for u in 0..self.n_actions {
                    let p = self.occupancy[(h * self.n_states + x) * self.n_actions + u];
                    writeln!(out, "{h},{x},{u},{p}")?;
                }
            }
        }
        Ok(())
    }
}

fn stationary_dense(chain: &JointChain, class: &[usize]) -> Option<Vec<f64>> {
    let k = class.len();
    let mut pos = vec![usize::MAX; chain.len()];
    for (i, &s) in class.iter().enumerate() {
        pos[s] = i;
    }
    // Rows of (Pᵀ − I) restricted to the class, last equation replaced by Σπ = 1.
    let mut a = DMatrix::<f64>::zeros(k, k);
    for (i, &s) in class.iter().enumerate() {
        for &(t, p) in chain.row(s) {
            let j = pos[t];
            if j != usize::MAX {
                a[(j, i)] += p;
            }
        }
        a[(i, i)] -= 1.0;
    }
    for i in 0..k {
        a[(k - 1, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    let sol = a.lu().solve(&rhs)?;
    let mut out = vec![0.0; chain.len()];
    for (i, &s) in class.iter().enumerate() {
        out[s] = sol[i].max(0.0);
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Some(out)
}

fn stationary_cesaro(chain: &JointChain, class: &[usize]) -> Vec<f64> {
    let n = chain.len();
    let mut d = vec![0.0; n];
    for &s in class {
        d[s] = 1.0 / class.len() as f64;
    }
    let mut avg = d.clone();
    let mut count = 1.0;
    for _ in 0..1_000_000 {
        d = chain.step_distribution(&d);
        count += 1.0;
        let mut change = 0.0_f64;
        for (a, &v) in avg.iter_mut().zip(&d) {
            let next = *a + (v - *a) / count;
            change = change.max((next - *a).abs());
            *a = next;
        }
        let step = chain.step_distribution(&avg);
        let residual = step.iter().zip(&avg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual < 1e-12 && change < 1e-12 {
            break;
        }
        // Switch to the plain iterate once it has converged (aperiodic case).
        let plain = chain.step_distribution(&d);
        if plain.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-14 {
            return d;
        }
    }
    avg
}

/// Stationary distribution of the joint chain.
pub fn invariant_measure(chain: &JointChain) -> Result<InvariantMeasure> {
    let classes = recurrent_classes(chain);
    if classes.len() != 1 {
        return Err(Error::MultipleRecurrentClasses { classes: classes.len() });
    }
    let class = &classes[0];
    let (joint, method) = if class.len() <= DENSE_LIMIT {
        match stationary_dense(chain, class) {
            Some(j) => (j, "dense-solve"),
            None => (stationary_cesaro(chain, class), "cesaro-power-iteration"),
        }
    } else {
        (stationary_cesaro(chain, class), "cesaro-power-iteration")
    };
    let step = chain.step_distribution(&joint);
    let residual = step.iter().zip(&joint).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(assemble_measure(chain, joint, residual, method))
}

fn assemble_measure(chain: &JointChain, joint: Vec<f64>, residual: f64, method: &str) -> InvariantMeasure {
    let nw = chain.space.len();
    let nx = chain.n_states;
    let nu = chain.space.n_actions;
    let mut window = vec![0.0; nw];
    let mut state = vec![0.0; nx];
    let mut window_action = vec![0.0; nw * nu];
    let mut occupancy = vec![0.0; nw * nx * nu];
    for h in 0..nw {
        for x in 0..nx {
            let p = joint[h * nx + x];
            window[h] += p;
            state[x] += p;
            for u in 0..nu {
                let q = p * chain.policy.prob(h, u);
                window_action[h * nu + u] += q;
                occupancy[(h * nx + x) * nu + u] = q;
            }
        }
    }
    InvariantMeasure {
        n_windows: nw,
        n_states: nx,
        n_actions: nu,
        joint,
        window,
        state,
        window_action,
        occupancy,
        unique: true,
        residual,
        method: method.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minorization {
    /// λ_x(x') = min_{x,u} 𝒯(x'|x,u).
    pub state_measure: Vec<f64>,
    pub state_mass: f64,
    /// λ_u(u) = min_h γ(u|h).
    pub action_measure: Vec<f64>,
    pub action_mass: f64,
    pub satisfied: bool,
}

/// Largest measures minorizing the transition kernel and the policy.
pub fn check_minorization(model: &FinitePomdp, gamma: &WindowPolicy) -> Minorization {
    let state_measure: Vec<f64> = (0..model.n_states)
        .map(|x2| {
            model
                .transition
                .iter()
                .flat_map(|block| block.iter().map(move |row| row[x2]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let space = gamma.space();
    let action_measure: Vec<f64> = (0..space.n_actions)
        .map(|u| (0..space.len()).map(|h| gamma.prob(h, u)).fold(f64::INFINITY, f64::min))
        .collect();
    let state_mass = state_measure.iter().sum::<f64>();
    let action_mass = action_measure.iter().sum::<f64>();
    Minorization {
        state_measure,
        state_mass,
        action_measure,
        action_mass,
        satisfied: state_mass > 0.0 && action_mass > 0.0,
    }
}

/// `(1−ε)γ + εγ′`, for `ε ∈ (0,1]`.
pub fn perturb_policy(gamma: &WindowPolicy, gamma_prime: &WindowPolicy, eps: f64) -> Result<WindowPolicy> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("perturbation weight {eps} not in (0,1]")));
    }
    gamma.mix(gamma_prime, eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    /// Second-largest eigenvalue modulus; `None` above the dense limit.
    pub slem: Option<f64>,
    /// `tv_decay[t-1] = max_s ‖δ_s Pᵗ − π̄‖₁` for `t = 1..=T`.
    pub tv_decay: Vec<f64>,
    /// Steps `k = N+1` after which the whole window has been refreshed.
    pub block: usize,
    /// `Σ_{s'} min_s P^k(s,s')`, the largest minorization mass of `P^k`.
    pub block_minorization_mass: f64,
}

impl MixingReport {
    /// Geometric envelope `2(1−m)^{⌊t/k⌋}` implied by the block minorization.
    pub fn envelope(&self, t: usize) -> f64 {
        2.0 * (1.0 - self.block_minorization_mass).powi((t / self.block) as i32)
    }
}

/// Minorization mass of the `k`-step kernel, by enumerating `P^k` rows.
pub fn multi_step_minorization_mass(chain: &JointChain, k: usize, exec: Exec) -> f64 {
    let n = chain.len();
    let rows: Vec<Vec<f64>> = par::map_range(exec, n, |s| {
        let mut d = vec![0.0; n];
        d[s] = 1.0;
        for _ in 0..k {
            d = chain.step_distribution(&d);
        }
        d
    });
    (0..n).map(|t| rows.iter().map(|r| r[t]).fold(f64::INFINITY, f64::min)).sum()
}

pub fn mixing_rate(chain: &JointChain, horizon: usize, exec: Exec) -> Result<MixingReport> {
    let measure = invariant_measure(chain)?;
    let n = chain.len();
    let slem = if n <= DENSE_LIMIT {
        let mut moduli: Vec<f64> = chain.dense().complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Some(moduli.get(1).copied().unwrap_or(0.0))
    } else {
        None
    };
    let per_start: Vec<Vec<f64>> = par::map_range(exec, n, |s| {
        let mut d = vec![0.0; n];
        d[s] = 1.0;
        (0..horizon)
            .map(|_| {
                d = chain.step_distribution(&d);
                tv_distance(&d, &measure.joint)
            })
            .collect()
    });
    let tv_decay = (0..horizon)
        .map(|t| per_start.iter().map(|r| r[t]).fold(0.0, f64::max))
        .collect();
    let block = chain.space.memory + 1;
    Ok(MixingReport {
        slem,
        tv_decay,
        block,
        block_minorization_mass: multi_step_minorization_mass(chain, block, exec),
    })
}
