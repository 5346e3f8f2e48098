//! The four subcommands. Each writes into `<out>/<name>/<command>/` and
//! returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use window_rl_core::belief_grid::optimal_value_reference;
use window_rl_core::bounds::{
    end_to_end_policy_bound, fixed_point_greedy_policy, l2_projection_bound, policy_approx_bound, q_discretization_bound,
    uniform_bound, BoundReport, EvaluationContext,
};
use window_rl_core::ergodicity::{build_joint_chain, invariant_measure, InvariantMeasure, JointChain};
use window_rl_core::features::FeatureSet;
use window_rl_core::learners::{q_learn, run_seeds, td_evaluate, LearnerOptions, LearningRun, RunSummary};
use window_rl_core::linear_fa::{
    check_q_stability, q_fixed_point_direct, td_fixed_point_direct, QStabilityReport, ProjectedFixedPoint,
};
use window_rl_core::model::{validate_model, ValidationReport};
use window_rl_core::stability::{filter_stability_default, FilterStabilityReport};
use window_rl_core::window_mdp::{build_window_mdp, exact_optimal_q, exact_policy_value, warmup_distribution, OptimalQ};
use window_rl_core::{Belief, Error, Exec, FinitePomdp, WindowPolicy};

use crate::config::{sha256_hex, BoundKind, DiscretizationSpec, Experiment};
use crate::Failure;

/// Largest number of deterministic policies enumerated when certifying a
/// generic (window, action) basis.
pub const CERTIFICATE_CAP: usize = 1 << 16;

/// Provenance of one output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub experiment: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub model_sha256: String,
}

fn manifest(exp: &Experiment, command: &str, seed: Option<u64>) -> Manifest {
    Manifest {
        tool: "window-rl".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        experiment: exp.config.name.clone(),
        seed,
        config_sha256: exp.config_sha256.clone(),
        model_sha256: sha256_hex(exp.model.to_json().as_bytes()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf, Failure> {
    fs::write(path, text).map_err(|err| Failure::Config(format!("cannot write {}: {err}", path.display())))?;
    Ok(path.to_path_buf())
}

fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<PathBuf, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_text(path, &String::from_utf8(buf).expect("CSV is UTF-8"))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|err| Failure::Config(format!("cannot create {}: {err}", path.display())))
}

/// Parses a model file without constructing it, then lists every violation.
pub fn validate(path: &Path) -> Result<ValidationReport, Failure> {
    let text = fs::read_to_string(path).map_err(|err| Failure::Config(format!("cannot read {}: {err}", path.display())))?;
    let model: FinitePomdp =
        serde_json::from_str(&text).map_err(|err| Failure::Config(format!("malformed model {}: {err}", path.display())))?;
    Ok(validate_model(&model))
}

/// Stationary chain of the acting policy with the design prior it induces.
struct Stationary {
    chain: JointChain,
    measure: InvariantMeasure,
    prior: Belief,
}

fn stationary(exp: &Experiment, policy: &WindowPolicy) -> Result<Stationary, Failure> {
    let chain = build_joint_chain(&exp.model, policy)?;
    let measure = invariant_measure(&chain)?;
    let prior = exp.design_prior(&measure.state)?;
    Ok(Stationary { chain, measure, prior })
}

/// Certificate for a generic (window, action) basis; indicator bases need none.
fn certificate(exp: &Experiment, features: &FeatureSet, measure: &InvariantMeasure) -> Result<Option<QStabilityReport>, Failure> {
    if features.is_indicator() {
        return Ok(None);
    }
    Ok(Some(check_q_stability(features, measure, exp.model.discount, CERTIFICATE_CAP, Exec::default())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleOutput {
    pub design_prior: Vec<f64>,
    /// J^N of the acting policy on the approximate window MDP.
    pub policy_value: Vec<f64>,
    pub optimal_q: OptimalQ,
    pub invariant: InvariantMeasure,
    /// TD fixed point for the window features.
    pub td_theta_star: ProjectedFixedPoint,
    /// Q fixed point for the window-action features, when it is certified.
    pub q_theta_star: Option<ProjectedFixedPoint>,
    pub q_certificate: Option<QStabilityReport>,
    pub notes: Vec<String>,
}

pub fn compute_oracle(exp: &Experiment) -> Result<OracleOutput, Failure> {
    let st = stationary(exp, &exp.policy)?;
    let mdp = build_window_mdp(&exp.model, &st.prior, exp.space.memory)?;
    let policy_value = exact_policy_value(&mdp, &exp.policy)?;
    let optimal_q = exact_optimal_q(&mdp)?;
    let td_theta_star = td_fixed_point_direct(&exp.window_features()?, &st.chain, &st.measure)?;
    let pair = exp.pair_features()?;
    let q_certificate = certificate(exp, &pair, &st.measure)?;
    let mut notes = Vec::new();
    let q_theta_star = match q_fixed_point_direct(&pair, &mdp, &st.measure, q_certificate.as_ref()) {
        Ok(fp) => Some(fp),
        Err(err @ Error::NoConvergenceCertificate) => {
            notes.push(format!("Q fixed point skipped: {err}"));
            None
        }
        Err(err) => return Err(err.into()),
    };
    Ok(OracleOutput {
        design_prior: st.prior.as_slice().to_vec(),
        policy_value,
        optimal_q,
        invariant: st.measure,
        td_theta_star,
        q_theta_star,
        q_certificate,
        notes,
    })
}

pub fn oracle(exp: &Experiment) -> Result<Vec<PathBuf>, Failure> {
    let out = compute_oracle(exp)?;
    let dir = exp.output_root().join("oracle");
    create_dir(&dir)?;
    let nu = exp.space.n_actions;
    let mut written = vec![write_json(&dir.join("manifest.json"), &manifest(exp, "oracle", None))?];
    written.push(write_json(&dir.join("oracle.json"), &out)?);
    written.push(write_csv(&dir.join("policy_value.csv"), |w| {
        use std::io::Write;
        writeln!(w, "h_index,value")?;
        out.policy_value.iter().enumerate().try_for_each(|(h, v)| writeln!(w, "{h},{v}"))
    })?);
    written.push(write_csv(&dir.join("optimal_q.csv"), |w| {
        use std::io::Write;
        writeln!(w, "h_index,u,q,greedy")?;
        out.optimal_q.q.iter().enumerate().try_for_each(|(p, q)| {
            let (h, u) = (p / nu, p % nu);
            writeln!(w, "{h},{u},{q},{}", u8::from(out.optimal_q.greedy[h] == u))
        })
    })?);
    written.push(write_csv(&dir.join("invariant_measure.csv"), |w| out.invariant.write_csv(w))?);
    written.push(write_json(
        &dir.join("theta_star.json"),
        &ThetaStar { td: out.td_theta_star.theta.clone(), q: out.q_theta_star.as_ref().map(|fp| fp.theta.clone()) },
    )?);
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaStar {
    pub td: Vec<f64>,
    pub q: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Td,
    Q,
}

impl Algorithm {
    fn label(self) -> &'static str {
        match self {
            Algorithm::Td => "td",
            Algorithm::Q => "q",
        }
    }
}

/// Shared summary across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSummary {
    pub algorithm: Algorithm,
    pub experiment: String,
    pub steps: u64,
    pub theta_initial: Vec<f64>,
    /// Oracle fixed point the distances are measured against.
    pub theta_star: Vec<f64>,
    pub runs: Vec<RunSummary>,
    pub max_final_distance: Option<f64>,
}

pub fn learn(exp: &Experiment, algorithm: Algorithm) -> Result<Vec<PathBuf>, Failure> {
    let st = stationary(exp, &exp.policy)?;
    let c = &exp.config;
    let (features, theta_star, cert) = match algorithm {
        Algorithm::Td => {
            let f = exp.window_features()?;
            let fp = td_fixed_point_direct(&f, &st.chain, &st.measure)?;
            (f, fp.theta, None)
        }
        Algorithm::Q => {
            let f = exp.pair_features()?;
            let mdp = build_window_mdp(&exp.model, &st.prior, exp.space.memory)?;
            let cert = certificate(exp, &f, &st.measure)?;
            let fp = q_fixed_point_direct(&f, &mdp, &st.measure, cert.as_ref())?;
            (f, fp.theta, cert)
        }
    };
    let theta_initial = c.theta0.clone().unwrap_or_else(|| vec![0.0; features.d]);
    if theta_initial.len() != features.d {
        return Err(Failure::Config(format!("theta0 has {} entries, features have {}", theta_initial.len(), features.d)));
    }
    let opts = LearnerOptions { theta0: Some(theta_initial.clone()), oracle: Some(theta_star.clone()), thinning: c.thinning };
    let runs: Vec<Result<LearningRun, Error>> = run_seeds(Exec::default(), &c.seeds, |seed| match algorithm {
        Algorithm::Td => td_evaluate(&exp.model, &exp.policy, &features, &c.schedule, c.steps, seed, &exp.warmup, &st.prior, &opts),
        Algorithm::Q => q_learn(&exp.model, &exp.policy, &features, &c.schedule, c.steps, seed, &exp.warmup, &st.prior, &opts, cert.as_ref())
            .map(|(run, _)| run),
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let root = exp.output_root().join(format!("learn-{}", algorithm.label()));
    let mut written = Vec::new();
    for run in &runs {
        let dir = root.join(format!("seed-{}", run.seed));
        create_dir(&dir)?;
        written.push(write_json(&dir.join("manifest.json"), &manifest(exp, &format!("learn {}", algorithm.label()), Some(run.seed)))?);
        written.push(write_csv(&dir.join("trace.csv"), |w| run.write_trace(w))?);
        written.push(write_json(&dir.join("run.json"), &RunSummary::from(run))?);
    }
    let summaries: Vec<RunSummary> = runs.iter().map(RunSummary::from).collect();
    let max_final_distance = summaries.iter().filter_map(|r| r.final_distance).reduce(f64::max);
    let summary = LearnSummary {
        algorithm,
        experiment: c.name.clone(),
        steps: c.steps,
        theta_initial,
        theta_star,
        runs: summaries,
        max_final_distance,
    };
    written.push(write_json(&root.join("summary.json"), &summary)?);
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsOutput {
    pub reports: Vec<BoundReport>,
    /// L_t for the acting policy, when a bound needed it.
    pub stability: Option<FilterStabilityReport>,
    /// L̂_t for the discretization bound, when requested.
    pub stability_hat: Option<FilterStabilityReport>,
}

pub fn compute_bounds(exp: &Experiment) -> Result<BoundsOutput, Failure> {
    let c = &exp.config;
    let wants = |k: BoundKind| c.bounds.contains(&k);
    if wants(BoundKind::QDiscretization) {
        if let DiscretizationSpec::Quantized { alpha_y: None, .. } = c.discretization {
            return Err(Error::MissingLipschitzConstant.into());
        }
    }
    let (model, policy, warmup, mu) = (&exp.model, &exp.policy, &exp.warmup, &exp.mu_init);
    let st = stationary(exp, policy)?;
    let linear = [BoundKind::L2Projection, BoundKind::Uniform, BoundKind::EndToEnd].into_iter().any(wants);
    let ctx = if linear { Some(EvaluationContext::with_prior(model, policy, &exp.window_features()?, &st.prior)?) } else { None };
    let stability = if wants(BoundKind::PolicyApprox) || wants(BoundKind::EndToEnd) {
        Some(filter_stability_default(model, &st.prior, mu, std::slice::from_ref(policy), warmup, &c.stability)?)
    } else {
        None
    };

    let mut reports = Vec::new();
    let mut stability_hat = None;
    let mut kinds = c.bounds.clone();
    kinds.sort();
    kinds.dedup();
    for kind in kinds {
        let report = match kind {
            BoundKind::PolicyApprox => {
                policy_approx_bound(model, policy, &st.prior, mu, warmup, stability.as_ref().expect("computed above"))?
            }
            BoundKind::L2Projection => l2_projection_bound(ctx.as_ref().expect("computed above"))?,
            BoundKind::Uniform => uniform_bound(ctx.as_ref().expect("computed above"))?,
            BoundKind::EndToEnd => {
                end_to_end_policy_bound(ctx.as_ref().expect("computed above"), mu, warmup, stability.as_ref().expect("computed above"))?
            }
            BoundKind::QDiscretization => {
                let learned = fixed_point_greedy_policy(model, policy, &exp.pair_features()?)?;
                let hat = filter_stability_default(model, &st.prior, mu, &[learned.clone(), policy.clone()], warmup, &c.stability)?;
                let warm = warmup_distribution(model, mu, warmup, exp.space.memory)?;
                let reference = optimal_value_reference(model, &warm, c.grid_resolution)?;
                let r = q_discretization_bound(model, &learned, mu, warmup, &hat, &reference, c.discretization.into())?;
                stability_hat = Some(hat);
                r
            }
        };
        reports.push(report);
    }
    Ok(BoundsOutput { reports, stability, stability_hat })
}

pub fn bounds(exp: &Experiment) -> Result<(Vec<PathBuf>, BoundsOutput), Failure> {
    let out = compute_bounds(exp)?;
    let dir = exp.output_root().join("bounds");
    create_dir(&dir)?;
    let mut written = vec![write_json(&dir.join("manifest.json"), &manifest(exp, "bounds", None))?];
    written.push(write_json(&dir.join("bounds.json"), &out)?);
    let table = out.reports.iter().map(BoundReport::to_table).collect::<Vec<_>>().join("\n");
    written.push(write_text(&dir.join("bounds.txt"), &table)?);
    if let Some(s) = &out.stability {
        written.push(write_csv(&dir.join("stability.csv"), |w| s.write_csv(w))?);
    }
    if let Some(s) = &out.stability_hat {
        written.push(write_csv(&dir.join("stability_hat.csv"), |w| s.write_csv(w))?);
    }
    Ok((written, out))
}
