//! Numerical evaluation of the approximation bounds against exactly
//! computed left-hand sides.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief_grid::OptimalValueReference;
use crate::ergodicity::{build_joint_chain, invariant_measure, InvariantMeasure, JointChain};
use crate::error::{Error, Result};
use crate::features::{Domain, FeatureSet};
use crate::linear_fa::{
    gram, greedy_policy, min_eigenvalue, minimax_fit, project_function, q_fixed_point_direct, td_fixed_point_direct,
    weighted_l2, ProjectedFixedPoint,
};
use crate::model::{Belief, FinitePomdp};
use crate::stability::{filter_stability_default, FilterStabilityReport, StabilityOptions};
use crate::window::{WindowPolicy, WindowSpace};
use crate::window_mdp::{build_window_mdp, exact_policy_value, true_policy_value, warmup_distribution, ApproxWindowMdp};

/// Slack for comparisons whose both sides are computed exactly.
pub const EXACT_TOLERANCE: f64 = 1e-8;

/// Standard errors allowed on Monte-Carlo parts.
pub const MONTE_CARLO_SIGMAS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub name: String,
    pub formula: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    /// The inequality being checked.
    pub statement: String,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub terms: Vec<BoundTerm>,
    /// `lhs − 3·lhs_stderr ≤ rhs + 3·rhs_stderr + tolerance`.
    pub satisfied: bool,
    pub tolerance: f64,
    /// SHA-256 of the canonical JSON of the inputs.
    pub inputs_digest: String,
    pub notes: Vec<String>,
}

impl BoundReport {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: &str,
        statement: &str,
        lhs: f64,
        lhs_stderr: f64,
        rhs_stderr: f64,
        terms: Vec<BoundTerm>,
        inputs_digest: String,
        notes: Vec<String>,
    ) -> Self {
        let rhs = terms.iter().map(|t| t.value).sum::<f64>();
        let satisfied = lhs - MONTE_CARLO_SIGMAS * lhs_stderr <= rhs + MONTE_CARLO_SIGMAS * rhs_stderr + EXACT_TOLERANCE;
        BoundReport {
            name: name.into(),
            statement: statement.into(),
            lhs,
            lhs_stderr,
            rhs,
            rhs_stderr,
            terms,
            satisfied,
            tolerance: EXACT_TOLERANCE,
            inputs_digest,
            notes,
        }
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// Plain-text table of the report.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}  [{}]", self.name, if self.satisfied { "satisfied" } else { "VIOLATED" });
        let _ = writeln!(s, "  {}", self.statement);
        let _ = writeln!(s, "  {:<28} {:>14.8e}  (stderr {:.2e})", "lhs", self.lhs, self.lhs_stderr);
        for t in &self.terms {
            let _ = writeln!(s, "  {:<28} {:>14.8e}  = {}", t.name, t.value, t.formula);
        }
        let _ = writeln!(s, "  {:<28} {:>14.8e}  (stderr {:.2e})", "rhs", self.rhs, self.rhs_stderr);
        for n in &self.notes {
            let _ = writeln!(s, "  note: {n}");
        }
        let _ = writeln!(s, "  inputs sha256 {}", self.inputs_digest);
        s
    }
}

fn digest<T: Serialize>(inputs: &T) -> String {
    let bytes = serde_json::to_vec(inputs).expect("inputs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn term(name: &str, formula: &str, value: f64) -> BoundTerm {
    BoundTerm { name: name.into(), formula: formula.into(), value }
}

fn check_stability(model: &FinitePomdp, st: &FilterStabilityReport) -> Result<()> {
    if st.discount != model.discount || st.values.is_empty() {
        return Err(Error::InvalidArgument("stability report does not match the model's discount".into()));
    }
    Ok(())
}

/// `(‖c‖_∞/(1−β))·(Σ_{t≤T} β^t L_t + 2β^{T+1}/(1−β))` and its standard error.
fn stability_term(scale: f64, st: &FilterStabilityReport) -> (BoundTerm, BoundTerm, f64) {
    let sum = term("stability series", "scale·Σ_{t≤T} β^t L_t", scale * st.discounted_sum());
    let tail = term("series tail", "scale·2β^{T+1}/(1−β)", scale * st.series_tail());
    (sum, tail, scale * st.discounted_sum_stderr())
}

/// `E|J^N_β(h_0,γ) − J_β(z_0,γ)| ≤ (‖c‖_∞/(1−β)) Σ_t β^t L_t` for a window
/// policy γ, with `J^N` built on the design prior `pi` and the warm-up law
/// started from `mu_init`.
pub fn policy_approx_bound(
    model: &FinitePomdp,
    gamma: &WindowPolicy,
    pi: &Belief,
    mu_init: &Belief,
    warmup: &WindowPolicy,
    stability: &FilterStabilityReport,
) -> Result<BoundReport> {
    let space = gamma.space();
    check_stability(model, stability)?;
    let mdp = build_window_mdp(model, pi, space.memory)?;
    let jn = exact_policy_value(&mdp, gamma)?;
    let warm = warmup_distribution(model, mu_init, warmup, space.memory)?;
    let truth = true_policy_value(model, gamma, &warm)?;
    let marg = warm.window_marginal();
    let lhs = (0..space.len())
        .filter_map(|h| truth.per_window[h].map(|v| marg[h] * (jn[h] - v).abs()))
        .sum::<f64>();
    let scale = model.cost_sup() / (1.0 - model.discount);
    let (sum, tail, se) = stability_term(scale, stability);
    let notes = vec![
        format!("L_t maximized over {}", stability.family),
        format!("L_t methods: {}", summarize_methods(&stability.methods)),
        format!("scale = ‖c‖∞/(1−β) = {scale}"),
    ];
    Ok(BoundReport::assemble(
        "policy_approx",
        "E|J^N(h_0,γ) − J(z_0,γ)| ≤ (‖c‖∞/(1−β))·Σ_t β^t L_t",
        lhs,
        0.0,
        se,
        vec![sum, tail],
        digest(&(model, gamma, pi, mu_init, warmup, stability)),
        notes,
    ))
}

fn summarize_methods(methods: &[String]) -> String {
    let exact = methods.iter().filter(|m| m.as_str() == "exact").count();
    format!("{exact} exact, {} Monte-Carlo", methods.len() - exact)
}

/// Oracles shared by the linear-approximation bounds for one policy and
/// one window feature set. The design prior defaults to the stationary
/// hidden-state marginal π_x of γ's joint chain, which makes the window
/// marginal of the invariant measure invariant for the approximate kernel
/// whenever γ depends on the window only through its latest observation.
#[derive(Clone, Debug)]
pub struct EvaluationContext {
    pub model: FinitePomdp,
    pub gamma: WindowPolicy,
    pub features: FeatureSet,
    pub chain: JointChain,
    pub measure: InvariantMeasure,
    pub prior: Belief,
    pub mdp: ApproxWindowMdp,
    /// J^N(·,γ) per window.
    pub value: Vec<f64>,
    pub theta_star: ProjectedFixedPoint,
}

impl EvaluationContext {
    pub fn new(model: &FinitePomdp, gamma: &WindowPolicy, features: &FeatureSet) -> Result<Self> {
        let chain = build_joint_chain(model, gamma)?;
        let measure = invariant_measure(&chain)?;
        let prior = Belief::new(measure.state.clone())?;
        Self::assemble(model, gamma, features, chain, measure, prior)
    }

    pub fn with_prior(model: &FinitePomdp, gamma: &WindowPolicy, features: &FeatureSet, prior: &Belief) -> Result<Self> {
        let chain = build_joint_chain(model, gamma)?;
        let measure = invariant_measure(&chain)?;
        Self::assemble(model, gamma, features, chain, measure, prior.clone())
    }

    fn assemble(
        model: &FinitePomdp,
        gamma: &WindowPolicy,
        features: &FeatureSet,
        chain: JointChain,
        measure: InvariantMeasure,
        prior: Belief,
    ) -> Result<Self> {
        if features.domain != Domain::Window || features.space != gamma.space() {
            return Err(Error::InvalidArgument("bounds need window features on the policy's window space".into()));
        }
        let mdp = build_window_mdp(model, &prior, gamma.space().memory)?;
        let value = exact_policy_value(&mdp, gamma)?;
        let theta_star = td_fixed_point_direct(features, &chain, &measure)?;
        Ok(EvaluationContext {
            model: model.clone(),
            gamma: gamma.clone(),
            features: features.clone(),
            chain,
            measure,
            prior,
            mdp,
            value,
            theta_star,
        })
    }

    /// θ*ᵀΦ per window.
    pub fn approximation(&self) -> Vec<f64> {
        self.features.evaluate(&self.theta_star.theta)
    }

    fn digest(&self) -> String {
        digest(&(&self.model, &self.gamma, &self.features, &self.prior))
    }
}

/// `‖J^N − θ*ᵀΦ‖_{2,π̄} ≤ (1/(1−β))·‖J^N − ΠJ^N‖_{2,π̄}`.
pub fn l2_projection_bound(ctx: &EvaluationContext) -> Result<BoundReport> {
    let w = &ctx.measure.window;
    let approx = ctx.approximation();
    let lhs = weighted_l2(&diff(&ctx.value, &approx), w);
    let proj = project_function(&ctx.value, &ctx.features, w)?;
    let dist = weighted_l2(&diff(&ctx.value, &proj), w);
    let beta = ctx.model.discount;
    let terms = vec![term("projection error", "‖J^N − ΠJ^N‖_{2,π̄}/(1−β)", dist / (1.0 - beta))];
    let notes = vec![
        format!("‖J^N − ΠJ^N‖_(2,π̄) = {dist}"),
        format!("θ* residual ‖Aθ*+b‖ = {:e}", ctx.theta_star.residual),
    ];
    Ok(BoundReport::assemble(
        "l2_projection",
        "‖J^N − θ*ᵀΦ‖_{2,π̄} ≤ (1/(1−β))·‖J^N − ΠJ^N‖_{2,π̄}",
        lhs,
        0.0,
        0.0,
        terms,
        ctx.digest(),
        notes,
    ))
}

/// Ingredients of the uniform bound: λ, σ_min and the assembled rhs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformTerms {
    pub lambda: f64,
    pub sigma_min: f64,
    pub d: usize,
    pub rhs: f64,
}

fn uniform_terms(ctx: &EvaluationContext) -> Result<UniformTerms> {
    let sigma_min = min_eigenvalue(&gram(&ctx.features, &ctx.measure.window));
    if sigma_min <= 1e-12 {
        return Err(Error::DegenerateGram { sigma_min });
    }
    let lambda = minimax_fit(&ctx.value, &ctx.features)?.lambda;
    let beta = ctx.model.discount;
    let d = ctx.features.d;
    let rhs = lambda * (1.0 + (2.0 - beta) / (1.0 - beta) * (d as f64 / sigma_min).sqrt());
    Ok(UniformTerms { lambda, sigma_min, d, rhs })
}

const UNIFORM_FORMULA: &str = "λ·(1 + ((2−β)/(1−β))·√(d/σ_min))";

/// `‖J^N − θ*ᵀΦ‖_∞ ≤ λ(1 + ((2−β)/(1−β))√(d/σ_min))` with
/// `λ = min_θ ‖J^N − θᵀΦ‖_∞`.
pub fn uniform_bound(ctx: &EvaluationContext) -> Result<BoundReport> {
    let u = uniform_terms(ctx)?;
    let lhs = sup(&diff(&ctx.value, &ctx.approximation()));
    let notes = vec![format!("λ = {}", u.lambda), format!("σ_min = {}", u.sigma_min), format!("d = {}", u.d)];
    Ok(BoundReport::assemble(
        "uniform",
        "‖J^N − θ*ᵀΦ‖∞ ≤ λ·(1 + ((2−β)/(1−β))·√(d/σ_min))",
        lhs,
        0.0,
        0.0,
        vec![term("minimax term", UNIFORM_FORMULA, u.rhs)],
        ctx.digest(),
        notes,
    ))
}

/// `E|J_β(z_0,γ) − θ*ᵀΦ(h_0)| ≤ (‖c‖_∞/(1−β))Σβ^tL_t + λ(1 + ((2−β)/(1−β))√(d/σ_min))`,
/// where `stability` must use the context's design prior.
pub fn end_to_end_policy_bound(
    ctx: &EvaluationContext,
    mu_init: &Belief,
    warmup: &WindowPolicy,
    stability: &FilterStabilityReport,
) -> Result<BoundReport> {
    let space = ctx.gamma.space();
    check_stability(&ctx.model, stability)?;
    let u = uniform_terms(ctx)?;
    let warm = warmup_distribution(&ctx.model, mu_init, warmup, space.memory)?;
    let truth = true_policy_value(&ctx.model, &ctx.gamma, &warm)?;
    let approx = ctx.approximation();
    let marg = warm.window_marginal();
    let lhs = (0..space.len())
        .filter_map(|h| truth.per_window[h].map(|v| marg[h] * (v - approx[h]).abs()))
        .sum::<f64>();
    let scale = ctx.model.cost_sup() / (1.0 - ctx.model.discount);
    let (sum, tail, se) = stability_term(scale, stability);
    let notes = vec![
        format!("design prior π = {:?}", ctx.prior.as_slice()),
        format!("L_t maximized over {}", stability.family),
        format!("λ = {}, σ_min = {}, d = {}", u.lambda, u.sigma_min, u.d),
    ];
    Ok(BoundReport::assemble(
        "end_to_end",
        "E|J(z_0,γ) − θ*ᵀΦ(h_0)| ≤ (‖c‖∞/(1−β))·Σ_t β^t L_t + λ·(1 + ((2−β)/(1−β))·√(d/σ_min))",
        lhs,
        0.0,
        se,
        vec![sum, tail, term("minimax term", UNIFORM_FORMULA, u.rhs)],
        digest(&(ctx.digest(), mu_init, warmup, stability)),
        notes,
    ))
}

/// How the finite observation space arose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationDiscretization {
    /// Natively finite observations with the identity partition.
    Native,
    /// Quantized continuous observations: density Lipschitz constant α_Y
    /// (required) and largest bin diameter L_Y.
    Quantized { alpha_y: Option<f64>, l_y: f64 },
}

/// Greedy policy of the projected Q fixed point for indicator features
/// under `exploration`, with the design prior π_x of the exploration chain.
pub fn fixed_point_greedy_policy(model: &FinitePomdp, exploration: &WindowPolicy, features: &FeatureSet) -> Result<WindowPolicy> {
    let chain = build_joint_chain(model, exploration)?;
    let measure = invariant_measure(&chain)?;
    let prior = Belief::new(measure.state.clone())?;
    let mdp = build_window_mdp(model, &prior, exploration.space().memory)?;
    let fp = q_fixed_point_direct(features, &mdp, &measure, None)?;
    Ok(greedy_policy(features, &fp.theta))
}

/// Discretization bound for a learned greedy policy γ^N:
/// `E|J_β(z_0,γ^N) − J*_β(z_0)| ≤ (2‖c‖_∞/(1−β))Σβ^tL̂_t + (β/(1−β)²)‖c‖_∞α_Y L_Y`.
///
/// The optimal value comes from the belief-grid reference; its bracket is
/// added to the lhs so the reported lhs is an upper bound on the true one.
pub fn q_discretization_bound(
    model: &FinitePomdp,
    policy: &WindowPolicy,
    mu_init: &Belief,
    warmup: &WindowPolicy,
    stability_hat: &FilterStabilityReport,
    reference: &OptimalValueReference,
    discretization: ObservationDiscretization,
) -> Result<BoundReport> {
    let space = policy.space();
    check_stability(model, stability_hat)?;
    let beta = model.discount;
    let csup = model.cost_sup();
    let quant = match discretization {
        ObservationDiscretization::Native => 0.0,
        ObservationDiscretization::Quantized { alpha_y: None, .. } => return Err(Error::MissingLipschitzConstant),
        ObservationDiscretization::Quantized { alpha_y: Some(a), l_y } => beta / (1.0 - beta).powi(2) * csup * a * l_y,
    };
    let warm = warmup_distribution(model, mu_init, warmup, space.memory)?;
    let truth = true_policy_value(model, policy, &warm)?;
    let lhs = truth.expectation - reference.value + reference.bracket;
    let scale = 2.0 * csup / (1.0 - beta);
    let (sum, tail, se) = stability_term(scale, stability_hat);
    let terms = vec![
        sum,
        tail,
        term("quantization term", "(β/(1−β)²)·‖c‖∞·α_Y·L_Y", quant),
    ];
    let notes = vec![
        format!("E[J(z_0,γ^N)] = {}", truth.expectation),
        format!("E[J*(z_0)] = {} ± {} ({}, K = {})", reference.value, reference.bracket, reference.method, reference.resolution),
        format!("L̂_t maximized over {}", stability_hat.family),
        format!("scale = 2‖c‖∞/(1−β) = {scale}"),
    ];
    Ok(BoundReport::assemble(
        "q_discretization",
        "E|J(z_0,γ^N) − J*(z_0)| ≤ (2‖c‖∞/(1−β))·Σ_t β^t L̂_t + (β/(1−β)²)·‖c‖∞·α_Y·L_Y",
        lhs,
        0.0,
        se,
        terms,
        digest(&(model, policy, mu_init, warmup, stability_hat, reference, discretization)),
        notes,
    ))
}

/// `Σ_t β^t L_t` (truncated, with its tail bound) for each window length,
/// using the default policy family and a uniform warm-up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryComparison {
    pub memory: usize,
    pub discounted_sum: f64,
    pub stderr: f64,
    pub tail: f64,
}

pub fn stability_by_memory(
    model: &FinitePomdp,
    pi: &Belief,
    mu_init: &Belief,
    memories: &[usize],
    opts: &StabilityOptions,
) -> Result<Vec<MemoryComparison>> {
    memories
        .iter()
        .map(|&n| {
            let space = WindowSpace::new(model.n_obs, model.n_actions, n);
            let warm = WindowPolicy::uniform(space);
            let r = filter_stability_default(model, pi, mu_init, &[], &warm, opts)?;
            Ok(MemoryComparison {
                memory: n,
                discounted_sum: r.discounted_sum(),
                stderr: r.discounted_sum_stderr(),
                tail: r.series_tail(),
            })
        })
        .collect()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
