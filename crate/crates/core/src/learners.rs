//! TD(0) policy evaluation and Q-learning with a greedy backup, both run on
//! a single simulated trajectory with window features.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Domain, FeatureSet};
use crate::linear_fa::{greedy_policy, QStabilityReport};
use crate::model::{Belief, FinitePomdp};
use crate::par::{self, Exec};
use crate::simulate::Simulator;
use crate::window::WindowPolicy;

/// `α_t = a / (1 + t/b)^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
    pub p: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule { a: 0.5, b: 1000.0, p: 1.0 }
    }
}

impl StepSchedule {
    pub fn new(a: f64, b: f64, p: f64) -> Result<Self> {
        let s = StepSchedule { a, b, p };
        s.validate()?;
        Ok(s)
    }

    /// `p ∈ (1/2, 1]` makes `Σα_t` diverge and `Σα_t²` converge.
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.p > 0.5 && self.p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "step schedule needs a > 0, b > 0 and p in (1/2, 1], got a={}, b={}, p={}",
                self.a, self.b, self.p
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn alpha(&self, t: u64) -> f64 {
        self.a / (1.0 + t as f64 / self.b).powf(self.p)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerOptions {
    /// Initial parameter; zero when absent.
    pub theta0: Option<Vec<f64>>,
    /// Reference parameter for the distance trace.
    pub oracle: Option<Vec<f64>>,
    /// Store θ every this many steps; `max(1, steps/10⁴)` when absent.
    pub thinning: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: u64,
    pub theta: Vec<f64>,
    pub distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRun {
    pub algorithm: String,
    pub seed: u64,
    pub steps: u64,
    pub thinning: u64,
    pub theta_path: Vec<TracePoint>,
    pub theta_final: Vec<f64>,
    pub final_distance: Option<f64>,
    /// ‖θ_final − θ at 90% of the run‖₂.
    pub trailing_drift: f64,
    /// Largest `‖update‖₂ / (α_t √d (‖θ_t‖₁(1+β) + ‖c‖_∞))`; at most 1 under
    /// bounded features.
    pub max_update_ratio: f64,
    /// Visits per (window, action) at `h·|𝕌| + u`.
    pub visits: Vec<u64>,
    /// `indicator-basis`, `q-stability-verified`, `no-certificate`, or
    /// `on-policy` for TD.
    pub certificate: String,
}

impl LearningRun {
    /// Empirical (window, action) frequencies.
    pub fn visit_frequencies(&self) -> Vec<f64> {
        let total = self.visits.iter().sum::<u64>().max(1) as f64;
        self.visits.iter().map(|&v| v as f64 / total).collect()
    }

    /// CSV with columns `t,theta_0..theta_{d-1},distance`.
    pub fn write_trace<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.theta_final.len();
        let head: Vec<String> = (0..d).map(|i| format!("theta_{i}")).collect();
        writeln!(out, "t,{},distance", head.join(","))?;
        for p in &self.theta_path {
            let vals: Vec<String> = p.theta.iter().map(|v| v.to_string()).collect();
            let dist = p.distance.map_or(String::new(), |v| v.to_string());
            writeln!(out, "{},{},{}", p.t, vals.join(","), dist)?;
        }
        Ok(())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Recorder {
    thinning: u64,
    steps: u64,
    oracle: Option<Vec<f64>>,
    path: Vec<TracePoint>,
    drift_anchor: Option<Vec<f64>>,
    max_ratio: f64,
}

impl Recorder {
    fn new(steps: u64, opts: &LearnerOptions) -> Self {
        let thinning = opts.thinning.unwrap_or((steps / 10_000).max(1)).max(1);
        Recorder { thinning, steps, oracle: opts.oracle.clone(), path: Vec::new(), drift_anchor: None, max_ratio: 0.0 }
    }

    fn record(&mut self, t: u64, theta: &[f64]) {
        let distance = self.oracle.as_deref().map(|o| distance(theta, o));
        self.path.push(TracePoint { t, theta: theta.to_vec(), distance });
    }

    /// Called with θ_t before the update of step t.
    #[inline]
    fn before_step(&mut self, t: u64, theta: &[f64]) {
        if t.is_multiple_of(self.thinning) {
            self.record(t, theta);
        }
        if t == self.steps * 9 / 10 {
            self.drift_anchor = Some(theta.to_vec());
        }
    }

    fn finish(mut self, algorithm: &str, seed: u64, theta: Vec<f64>, visits: Vec<u64>, certificate: String) -> LearningRun {
        if self.path.last().is_none_or(|p| p.t != self.steps) {
            self.record(self.steps, &theta);
        }
        let anchor = self.drift_anchor.take().unwrap_or_else(|| theta.clone());
        LearningRun {
            algorithm: algorithm.into(),
            seed,
            steps: self.steps,
            thinning: self.thinning,
            final_distance: self.oracle.as_deref().map(|o| distance(&theta, o)),
            trailing_drift: distance(&theta, &anchor),
            theta_path: self.path,
            theta_final: theta,
            max_update_ratio: self.max_ratio,
            visits,
            certificate,
        }
    }
}

fn initial_theta(d: usize, opts: &LearnerOptions) -> Result<Vec<f64>> {
    match &opts.theta0 {
        Some(t) if t.len() != d => Err(Error::InvalidArgument(format!("theta0 has {} entries, features have {d}", t.len()))),
        Some(t) => Ok(t.clone()),
        None => Ok(vec![0.0; d]),
    }
}

fn divergence_threshold(model: &FinitePomdp, d: usize) -> f64 {
    1e3 * d as f64 * model.cost_sup().max(1e-300) / (1.0 - model.discount)
}

/// TD(0) on the window features along one trajectory driven by γ:
/// `θ ← θ − α_t Φ(h_t)[θᵀΦ(h_t) − c(x_t,u_t) − βθᵀΦ(h_{t+1})]`.
#[allow(clippy::too_many_arguments)]
pub fn td_evaluate(
    model: &FinitePomdp,
    gamma: &WindowPolicy,
    features: &FeatureSet,
    schedule: &StepSchedule,
    steps: u64,
    seed: u64,
    warmup: &WindowPolicy,
    prior: &Belief,
    opts: &LearnerOptions,
) -> Result<LearningRun> {
    schedule.validate()?;
    if features.domain != Domain::Window || features.space != gamma.space() {
        return Err(Error::InvalidArgument("TD needs window features on the policy's window space".into()));
    }
    let d = features.d;
    let beta = model.discount;
    let csup = model.cost_sup();
    let threshold = divergence_threshold(model, d);
    let sqrt_d = (d as f64).sqrt();
    let mut theta = initial_theta(d, opts)?;
    let mut rec = Recorder::new(steps, opts);
    let mut visits = vec![0u64; features.space.pairs()];
    let nu = features.space.n_actions;
    let mut sim = Simulator::new(model, gamma, prior, warmup, seed)?;
    for t in 0..steps {
        rec.before_step(t, &theta);
        let tr = sim.step();
        visits[tr.h * nu + tr.u] += 1;
        let phi = features.phi(tr.h);
        let delta = dot(&theta, phi) - tr.cost - beta * dot(&theta, features.phi(tr.next_h));
        let alpha = schedule.alpha(t);
        let bound = alpha * sqrt_d * (theta.iter().map(|v| v.abs()).sum::<f64>() * (1.0 + beta) + csup);
        let step_norm = alpha * delta.abs() * l2(phi);
        if bound > 0.0 {
            rec.max_ratio = rec.max_ratio.max(step_norm / bound);
        }
        for (th, p) in theta.iter_mut().zip(phi) {
            *th -= alpha * delta * p;
        }
        let norm = l2(&theta);
        if !(norm <= threshold) {
            return Err(Error::DivergenceDetected { step: t, norm, threshold });
        }
    }
    Ok(rec.finish("td0", seed, theta, visits, "on-policy".into()))
}

/// Q-learning along one trajectory driven by the exploration policy:
/// `θ ← θ − α_t Φ(h_t,u_t)[θᵀΦ(h_t,u_t) − c(x_t,u_t) − β min_v θᵀΦ(h_{t+1},v)]`.
/// Returns the run and the greedy policy of the final θ.
#[allow(clippy::too_many_arguments)]
pub fn q_learn(
    model: &FinitePomdp,
    exploration: &WindowPolicy,
    features: &FeatureSet,
    schedule: &StepSchedule,
    steps: u64,
    seed: u64,
    warmup: &WindowPolicy,
    prior: &Belief,
    opts: &LearnerOptions,
    certificate: Option<&QStabilityReport>,
) -> Result<(LearningRun, WindowPolicy)> {
    schedule.validate()?;
    if features.domain != Domain::WindowAction || features.space != exploration.space() {
        return Err(Error::InvalidArgument("Q-learning needs (window, action) features on the policy's window space".into()));
    }
    let tag = if features.is_indicator() {
        "indicator-basis"
    } else if certificate.is_some_and(|c| c.is_satisfied()) {
        "q-stability-verified"
    } else {
        "no-certificate"
    };
    let d = features.d;
    let nu = features.space.n_actions;
    let beta = model.discount;
    let csup = model.cost_sup();
    let threshold = divergence_threshold(model, d);
    let sqrt_d = (d as f64).sqrt();
    let mut theta = initial_theta(d, opts)?;
    let mut rec = Recorder::new(steps, opts);
    let mut visits = vec![0u64; features.space.pairs()];
    let mut sim = Simulator::new(model, exploration, prior, warmup, seed)?;
    for t in 0..steps {
        rec.before_step(t, &theta);
        let tr = sim.step();
        let p = tr.h * nu + tr.u;
        visits[p] += 1;
        let next = (0..nu)
            .map(|v| dot(&theta, features.phi(tr.next_h * nu + v)))
            .fold(f64::INFINITY, f64::min);
        let phi = features.phi(p);
        let delta = dot(&theta, phi) - tr.cost - beta * next;
        let alpha = schedule.alpha(t);
        let bound = alpha * sqrt_d * (theta.iter().map(|v| v.abs()).sum::<f64>() * (1.0 + beta) + csup);
        let step_norm = alpha * delta.abs() * l2(phi);
        if bound > 0.0 {
            rec.max_ratio = rec.max_ratio.max(step_norm / bound);
        }
        for (th, f) in theta.iter_mut().zip(phi) {
            *th -= alpha * delta * f;
        }
        let norm = l2(&theta);
        if !(norm <= threshold) {
            return Err(Error::DivergenceDetected { step: t, norm, threshold });
        }
    }
    let greedy = greedy_policy(features, &theta);
    Ok((rec.finish("q-learning", seed, theta, visits, tag.into()), greedy))
}

/// Runs `f` once per seed; results come back in seed order.
pub fn run_seeds<T, F>(exec: Exec, seeds: &[u64], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    par::map_slice(exec, seeds, |&s| f(s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub steps: u64,
    pub thinning: u64,
    pub theta_final: Vec<f64>,
    pub final_distance: Option<f64>,
    pub trailing_drift: f64,
    pub max_update_ratio: f64,
    pub certificate: String,
}

impl From<&LearningRun> for RunSummary {
    fn from(r: &LearningRun) -> Self {
        RunSummary {
            algorithm: r.algorithm.clone(),
            seed: r.seed,
            steps: r.steps,
            thinning: r.thinning,
            theta_final: r.theta_final.clone(),
            final_distance: r.final_distance,
            trailing_drift: r.trailing_drift,
            max_update_ratio: r.max_update_ratio,
            certificate: r.certificate.clone(),
        }
    }
}
