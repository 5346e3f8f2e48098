//! Weighted L2 projection onto a feature span, projected Bellman operators,
//! Gram matrices, direct fixed points and the greedy-policy closeness check.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ergodicity::{InvariantMeasure, JointChain};
use crate::error::{Error, Result};
use crate::features::{Domain, FeatureSet};
use crate::par::{self, Exec};
use crate::window::WindowPolicy;
use crate::window_mdp::ApproxWindowMdp;

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Weights of the feature domain's points under the invariant measure.
pub fn point_weights(features: &FeatureSet, measure: &InvariantMeasure) -> Vec<f64> {
    match features.domain {
        Domain::Window => measure.window.clone(),
        Domain::WindowAction => measure.window_action.clone(),
    }
}

pub fn weighted_l2(f: &[f64], weights: &[f64]) -> f64 {
    f.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

pub fn sup_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Σ = Σ_p w(p) Φ(p)Φ(p)ᵀ.
pub fn gram(features: &FeatureSet, weights: &[f64]) -> DMatrix<f64> {
    let d = features.d;
    let mut m = DMatrix::zeros(d, d);
    for (p, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let phi = features.phi(p);
        for i in 0..d {
            if phi[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                m[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub theta: Vec<f64>,
    /// The Gram matrix is singular; θ is the minimum-norm solution.
    pub degenerate: bool,
    /// Indicator cells with zero weight; their coefficient is 0.
    pub unreachable_cells: Vec<usize>,
}

/// Weighted least squares `argmin_θ ‖f − θᵀΦ‖_{2,w}`.
pub fn project(f: &[f64], features: &FeatureSet, weights: &[f64]) -> Result<Projection> {
    if f.len() != features.len() || weights.len() != features.len() {
        return Err(Error::InvalidArgument("function, weights and features disagree in length".into()));
    }
    let d = features.d;
    if let Some(cells) = features.cells() {
        let mut num = vec![0.0; d];
        let mut den = vec![0.0; d];
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for (p, &c) in cells.iter().enumerate() {
            if weights[p] > 0.0 {
                num[c] += weights[p] * f[p];
                den[c] += weights[p];
                lo[c] = lo[c].min(f[p]);
                hi[c] = hi[c].max(f[p]);
            }
        }
        let unreachable_cells: Vec<usize> = (0..d).filter(|&i| den[i] <= 0.0).collect();
        // A weighted average lies in the cell's range; the clamp only removes rounding.
        let theta = (0..d).map(|i| if den[i] > 0.0 { (num[i] / den[i]).clamp(lo[i], hi[i]) } else { 0.0 }).collect();
        return Ok(Projection { theta, degenerate: !unreachable_cells.is_empty(), unreachable_cells });
    }
    let sigma = gram(features, weights);
    let mut rhs = DVector::zeros(d);
    for (p, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            for (i, v) in features.phi(p).iter().enumerate() {
                rhs[i] += w * v * f[p];
            }
        }
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let low = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let degenerate = low <= RANK_TOL * top.max(1e-300);
    let theta = if degenerate {
        // Minimum-norm solution via the eigen-decomposition.
        let mut out = DVector::zeros(d);
        for k in 0..d {
            let lam = eig.eigenvalues[k];
            if lam > RANK_TOL * top {
                let v = eig.eigenvectors.column(k);
                out += v * (v.dot(&rhs) / lam);
            }
        }
        out
    } else {
        sigma.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| eig_solve(&eig, &rhs))
    };
    Ok(Projection { theta: theta.iter().copied().collect(), degenerate, unreachable_cells: Vec::new() })
}

fn eig_solve(eig: &SymmetricEigen<f64, nalgebra::Dyn>, rhs: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(rhs.len());
    for k in 0..rhs.len() {
        let v = eig.eigenvectors.column(k);
        out += v * (v.dot(rhs) / eig.eigenvalues[k]);
    }
    out
}

/// Πf as a function on the domain.
pub fn project_function(f: &[f64], features: &FeatureSet, weights: &[f64]) -> Result<Vec<f64>> {
    Ok(features.evaluate(&project(f, features, weights)?.theta))
}

/// T^γ f.
pub fn apply_t_gamma(f: &[f64], mdp: &ApproxWindowMdp, gamma: &WindowPolicy) -> Vec<f64> {
    mdp.bellman_policy(gamma, f)
}

/// Greedy Bellman operator on (window, action) functions.
pub fn apply_t_greedy(q: &[f64], mdp: &ApproxWindowMdp) -> Vec<f64> {
    mdp.bellman_greedy(q)
}

/// `argmin_u θᵀΦ(h,u)` per window; values within a relative 1e-12 count
/// as ties and go to the smallest index.
pub fn greedy_actions(features: &FeatureSet, theta: &[f64]) -> Vec<usize> {
    let nu = features.space.n_actions;
    (0..features.space.len())
        .map(|h| {
            let mut best = 0;
            let mut best_v = features.value(theta, h * nu);
            for u in 1..nu {
                let v = features.value(theta, h * nu + u);
                if v < best_v - 1e-12 * best_v.abs().max(v.abs()) {
                    best = u;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

pub fn greedy_policy(features: &FeatureSet, theta: &[f64]) -> WindowPolicy {
    WindowPolicy::deterministic(features.space, &greedy_actions(features, theta)).expect("actions in range")
}

/// Σ_a = Σ_h π̄(h) Φ(h,a_h)Φ(h,a_h)ᵀ for a deterministic action table.
pub fn sigma_policy(features: &FeatureSet, window_weights: &[f64], actions: &[usize]) -> DMatrix<f64> {
    let nu = features.space.n_actions;
    let d = features.d;
    let mut m = DMatrix::zeros(d, d);
    for (h, &w) in window_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let phi = features.phi(h * nu + actions[h]);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    m
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaGram {
    pub theta: Vec<f64>,
    pub greedy: Vec<usize>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramMatrices {
    /// Σ_γ under the domain's weights.
    pub sigma: Vec<Vec<f64>>,
    pub sigma_min: f64,
    /// Σ_θ per queried θ (pair features only).
    pub per_theta: Vec<ThetaGram>,
}

pub fn gram_matrices(features: &FeatureSet, measure: &InvariantMeasure, thetas: &[Vec<f64>]) -> Result<GramMatrices> {
    let sigma = gram(features, &point_weights(features, measure));
    let sigma_min = min_eigenvalue(&sigma);
    let per_theta = if features.domain == Domain::WindowAction {
        thetas
            .iter()
            .map(|t| {
                let greedy = greedy_actions(features, t);
                let s = sigma_policy(features, &measure.window, &greedy);
                ThetaGram { theta: t.clone(), greedy, sigma: to_rows(&s) }
            })
            .collect()
    } else if thetas.is_empty() {
        Vec::new()
    } else {
        return Err(Error::InvalidArgument("greedy Gram matrices need (window, action) features".into()));
    };
    Ok(GramMatrices { sigma: to_rows(&sigma), sigma_min, per_theta })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedFixedPoint {
    pub theta: Vec<f64>,
    pub residual: f64,
    pub method: String,
    pub iterations: usize,
}

/// A = E[βΦ(H)Φ(H₁)ᵀ − Φ(H)Φ(H)ᵀ] and b = E[Φ(H)c(X,U)] under the
/// stationary joint chain.
pub fn td_system(features: &FeatureSet, chain: &JointChain, measure: &InvariantMeasure) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if features.domain != Domain::Window || features.space != chain.space {
        return Err(Error::InvalidArgument("TD needs window features on the chain's window space".into()));
    }
    let d = features.d;
    let beta = chain.discount;
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for s in 0..chain.len() {
        let w = measure.joint[s];
        if w == 0.0 {
            continue;
        }
        let (h, _) = chain.split(s);
        let phi = features.phi(h);
        let mut next = vec![0.0; d];
        for &(t, p) in chain.row(s) {
            let (h2, _) = chain.split(t);
            for (n, v) in next.iter_mut().zip(features.phi(h2)) {
                *n += p * v;
            }
        }
        for i in 0..d {
            b[i] += w * phi[i] * chain.expected_cost()[s];
            for j in 0..d {
                a[(i, j)] += w * phi[i] * (beta * next[j] - phi[j]);
            }
        }
    }
    Ok((a, b))
}

/// θ* solving `Aθ + b = 0`: the limit of TD(0) under the joint chain.
pub fn td_fixed_point_direct(features: &FeatureSet, chain: &JointChain, measure: &InvariantMeasure) -> Result<ProjectedFixedPoint> {
    let (a, b) = td_system(features, chain, measure)?;
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0_f64, f64::max);
    let low = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = if top > 0.0 { low / top } else { 0.0 };
    if ratio < 1e-12 {
        return Err(Error::SingularA { ratio });
    }
    let theta = a.clone().lu().solve(&(-&b)).ok_or(Error::SingularA { ratio })?;
    let residual = (&a * &theta + &b).norm();
    Ok(ProjectedFixedPoint {
        theta: theta.iter().copied().collect(),
        residual,
        method: "linear-solve".into(),
        iterations: 0,
    })
}

/// Iterates θ ← coefficients of Π T^γ(θᵀΦ) from θ = 0.
pub fn projected_policy_iteration(
    features: &FeatureSet,
    mdp: &ApproxWindowMdp,
    gamma: &WindowPolicy,
    weights: &[f64],
    iterations: usize,
) -> Result<Vec<f64>> {
    let mut theta = vec![0.0; features.d];
    for _ in 0..iterations {
        let f = features.evaluate(&theta);
        theta = project(&apply_t_gamma(&f, mdp, gamma), features, weights)?.theta;
    }
    Ok(theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum QStabilityVerdict {
    /// Every greedy-realizable deterministic policy passed.
    Satisfied { policies: usize, unrealizable_skipped: usize, min_margin: f64 },
    /// A θ whose greedy policy violates the strict inequality.
    Refuted { theta: Vec<f64>, greedy: Vec<usize>, margin: f64 },
    /// Random θ only; no violation seen, nothing certified.
    SampledOnly { samples: usize, min_margin: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QStabilityReport {
    pub verdict: QStabilityVerdict,
    pub discount: f64,
    /// Required strictness of min-eig(Σ_γ − β²Σ_θ).
    pub threshold: f64,
}

impl QStabilityReport {
    pub fn is_satisfied(&self) -> bool {
        matches!(self.verdict, QStabilityVerdict::Satisfied { .. })
    }
}

pub const Q_STABILITY_MARGIN: f64 = 1e-10;

/// Finds θ whose greedy policy is exactly `actions`, or `None` if no θ does.
pub fn realize_greedy(features: &FeatureSet, actions: &[usize]) -> Result<Option<Vec<f64>>> {
    let nu = features.space.n_actions;
    let d = features.d;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..d).map(|_| lp.add_var(0.0, (-1e6, 1e6))).collect();
    for (h, &a) in actions.iter().enumerate() {
        let chosen = features.phi(h * nu + a);
        for v in 0..nu {
            if v == a {
                continue;
            }
            let other = features.phi(h * nu + v);
            let terms: Vec<_> = (0..d).map(|i| (vars[i], other[i] - chosen[i])).collect();
            // Lower-index actions must lose strictly; higher ones may tie.
            let rhs = if v < a { 1.0 } else { 0.0 };
            lp.add_constraint(terms.as_slice(), ComparisonOp::Ge, rhs);
        }
    }
    match lp.solve() {
        Ok(outcome) => {
            let sol = outcome.into_solution().map_err(|e| Error::LinearProgram(format!("{e:?}")))?;
            let theta: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
            Ok((greedy_actions(features, &theta) == actions).then_some(theta))
        }
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => Err(Error::LinearProgram(format!("{e:?}"))),
    }
}

/// Tests β²Σ_θ ≺ Σ_γ. Σ_θ depends on θ only through its greedy policy, so
/// below `cap` deterministic policies the check enumerates them all; above
/// it, 10⁴ random θ are tried.
pub fn check_q_stability(
    features: &FeatureSet,
    measure: &InvariantMeasure,
    beta: f64,
    cap: usize,
    exec: Exec,
) -> Result<QStabilityReport> {
    if features.domain != Domain::WindowAction {
        return Err(Error::InvalidArgument("greedy closeness needs (window, action) features".into()));
    }
    let nu = features.space.n_actions;
    let nw = features.space.len();
    let sigma = gram(features, &measure.window_action);
    let margin_of = |actions: &[usize]| {
        let s = sigma_policy(features, &measure.window, actions);
        min_eigenvalue(&(&sigma - s * (beta * beta)))
    };
    let count = (nu as f64).powi(nw as i32);
    let report = |verdict| QStabilityReport { verdict, discount: beta, threshold: Q_STABILITY_MARGIN };
    if count <= cap as f64 {
        let total = count as usize;
        let decode = |code: usize| {
            let mut c = code;
            (0..nw)
                .map(|_| {
                    let u = c % nu;
                    c /= nu;
                    u
                })
                .collect::<Vec<usize>>()
        };
        let margins: Vec<f64> = par::map_range(exec, total, |code| margin_of(&decode(code)));
        let mut skipped = 0;
        let mut min_margin = f64::INFINITY;
        for (code, &m) in margins.iter().enumerate() {
            if m > Q_STABILITY_MARGIN {
                min_margin = min_margin.min(m);
                continue;
            }
            let actions = decode(code);
            match realize_greedy(features, &actions)? {
                Some(theta) => {
                    return Ok(report(QStabilityVerdict::Refuted { theta, greedy: actions, margin: m }));
                }
                None => skipped += 1,
            }
        }
        return Ok(report(QStabilityVerdict::Satisfied { policies: total, unrealizable_skipped: skipped, min_margin }));
    }
    let samples = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a55);
    let thetas: Vec<Vec<f64>> =
        (0..samples).map(|_| (0..features.d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
    let margins = par::map_slice(exec, &thetas, |t| margin_of(&greedy_actions(features, t)));
    let mut min_margin = f64::INFINITY;
    for (t, &m) in thetas.iter().zip(&margins) {
        if m <= Q_STABILITY_MARGIN {
            let greedy = greedy_actions(features, t);
            return Ok(report(QStabilityVerdict::Refuted { theta: t.clone(), greedy, margin: m }));
        }
        min_margin = min_margin.min(m);
    }
    Ok(report(QStabilityVerdict::SampledOnly { samples, min_margin }))
}

/// Fixed point of Π T for (window, action) features: by sup-norm
/// iteration for indicator bases, by L2 iteration when a closeness
/// certificate is supplied for a generic basis.
pub fn q_fixed_point_direct(
    features: &FeatureSet,
    mdp: &ApproxWindowMdp,
    measure: &InvariantMeasure,
    certificate: Option<&QStabilityReport>,
) -> Result<ProjectedFixedPoint> {
    if features.domain != Domain::WindowAction || features.space != mdp.space {
        return Err(Error::InvalidArgument("Q fixed point needs (window, action) features on the MDP's windows".into()));
    }
    let method = if features.is_indicator() {
        "projected-value-iteration (sup-norm)"
    } else if certificate.is_some_and(|c| c.is_satisfied()) {
        "projected-value-iteration (L2)"
    } else {
        return Err(Error::NoConvergenceCertificate);
    };
    let weights = &measure.window_action;
    let mut theta = vec![0.0; features.d];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let q = features.evaluate(&theta);
        let next = project(&apply_t_greedy(&q, mdp), features, weights)?.theta;
        let change = next.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = next;
        if change < 1e-14 || iterations >= 1_000_000 {
            break;
        }
    }
    let q = features.evaluate(&theta);
    let pq = project_function(&apply_t_greedy(&q, mdp), features, weights)?;
    let residual = q.iter().zip(&pq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(ProjectedFixedPoint { theta, residual, method: method.into(), iterations })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimaxFit {
    pub theta: Vec<f64>,
    /// max_p |f(p) − θᵀΦ(p)|, recomputed from θ.
    pub lambda: f64,
}

/// Chebyshev fit `min_θ ‖f − θᵀΦ‖_∞` as a linear program.
pub fn minimax_fit(f: &[f64], features: &FeatureSet) -> Result<MinimaxFit> {
    if f.len() != features.len() {
        return Err(Error::InvalidArgument("function and features disagree in length".into()));
    }
    let d = features.d;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..d).map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))).collect();
    let s = lp.add_var(1.0, (0.0, f64::INFINITY));
    for (p, &fp) in f.iter().enumerate() {
        let phi = features.phi(p);
        let mut upper: Vec<_> = (0..d).map(|i| (vars[i], phi[i])).collect();
        upper.push((s, 1.0));
        lp.add_constraint(upper.as_slice(), ComparisonOp::Ge, fp);
        let mut lower: Vec<_> = (0..d).map(|i| (vars[i], phi[i])).collect();
        lower.push((s, -1.0));
        lp.add_constraint(lower.as_slice(), ComparisonOp::Le, fp);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::LinearProgram(format!("{e:?}")))?
        .into_solution()
        .map_err(|e| Error::LinearProgram(format!("{e:?}")))?;
    let theta: Vec<f64> = vars.iter().map(|&v| sol.var_value(v)).collect();
    let lambda = f
        .iter()
        .enumerate()
        .map(|(p, v)| (v - features.value(&theta, p)).abs())
        .fold(0.0, f64::max);
    Ok(MinimaxFit { theta, lambda })
}
