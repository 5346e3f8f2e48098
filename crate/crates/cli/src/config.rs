//! Experiment configuration: one JSON document, unknown keys rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use window_rl_core::bounds::ObservationDiscretization;
use window_rl_core::features::{Domain, FeatureSet};
use window_rl_core::learners::StepSchedule;
use window_rl_core::stability::StabilityOptions;
use window_rl_core::{Belief, FinitePomdp, WindowPolicy, WindowSpace};

use crate::Failure;

/// A window policy given as a table or built from a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    // Empty braces keep unknown keys rejected on tag-only variants.
    Uniform {},
    /// One action for every window.
    Constant { action: usize },
    /// One action per window index.
    Deterministic { actions: Vec<usize> },
    /// One action per latest observation.
    LatestObs { actions: Vec<usize> },
    /// One probability row per window index.
    Table { rows: Vec<Vec<f64>> },
    /// `(1−ε)·base + ε·uniform`.
    EpsilonGreedyAround { base: Box<PolicySpec>, epsilon: f64 },
}

impl PolicySpec {
    pub fn build(&self, space: WindowSpace) -> window_rl_core::Result<WindowPolicy> {
        match self {
            PolicySpec::Uniform {} => Ok(WindowPolicy::uniform(space)),
            PolicySpec::Constant { action } => WindowPolicy::constant(space, *action),
            PolicySpec::Deterministic { actions } => WindowPolicy::deterministic(space, actions),
            PolicySpec::LatestObs { actions } => WindowPolicy::latest_obs(space, actions),
            PolicySpec::Table { rows } => WindowPolicy::from_rows(space, rows.clone()),
            PolicySpec::EpsilonGreedyAround { base, epsilon } => base.build(space)?.epsilon_uniform(*epsilon),
        }
    }
}

/// A feature map; the domain (windows or window-action pairs) comes from
/// where it is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureSpec {
    /// One indicator per point.
    IndicatorFull {},
    /// One indicator per latest observation.
    LatestObs {},
    /// Indicator of `cells[p]` for point `p`.
    Partition { cells: Vec<usize> },
    /// One row of feature values per point.
    Rows { values: Vec<Vec<f64>> },
    /// A feature file, relative to the config file.
    File { path: PathBuf },
}

impl FeatureSpec {
    pub fn build(&self, space: WindowSpace, domain: Domain, base: &Path) -> Result<FeatureSet, Failure> {
        let set = match self {
            FeatureSpec::IndicatorFull {} => FeatureSet::indicator_full(space, domain),
            FeatureSpec::LatestObs {} => FeatureSet::by_latest_obs(space, domain),
            FeatureSpec::Partition { cells } => FeatureSet::indicator(space, domain, cells.clone())?,
            FeatureSpec::Rows { values } => FeatureSet::from_rows(space, domain, values.clone())?,
            FeatureSpec::File { path } => {
                let path = base.join(path);
                if !path.exists() {
                    return Err(Failure::Config(format!("feature file {} does not exist", path.display())));
                }
                FeatureSet::load(space, path)?
            }
        };
        if set.domain != domain {
            return Err(Failure::Config(format!("feature file has domain {:?}, expected {domain:?}", set.domain)));
        }
        Ok(set)
    }
}

/// The prior π used to build the approximate window MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Hidden-state marginal of the stationary chain under the acting policy.
    Stationary {},
    Uniform {},
    Explicit { probs: Vec<f64> },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Stationary {}
    }
}

/// How the finite observation space arose, for the discretization bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscretizationSpec {
    Native {},
    /// Density Lipschitz constant α_Y and largest bin diameter L_Y.
    Quantized { alpha_y: Option<f64>, l_y: f64 },
}

impl From<DiscretizationSpec> for ObservationDiscretization {
    fn from(d: DiscretizationSpec) -> Self {
        match d {
            DiscretizationSpec::Native {} => ObservationDiscretization::Native,
            DiscretizationSpec::Quantized { alpha_y, l_y } => ObservationDiscretization::Quantized { alpha_y, l_y },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    PolicyApprox,
    L2Projection,
    Uniform,
    EndToEnd,
    QDiscretization,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::PolicyApprox,
        BoundKind::L2Projection,
        BoundKind::Uniform,
        BoundKind::EndToEnd,
        BoundKind::QDiscretization,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Names the output subdirectory.
    #[serde(default = "default_name")]
    pub name: String,
    /// Model file, relative to the config file.
    pub model: PathBuf,
    /// Window length N.
    pub memory: usize,
    #[serde(default)]
    pub design_prior: PriorSpec,
    /// Law of `x_{-N}`; uniform when absent.
    #[serde(default)]
    pub initial_prior: Option<Vec<f64>>,
    /// Evaluated policy for TD and the linear bounds; exploration policy for Q-learning.
    pub policy: PolicySpec,
    /// Warm-up policy; the acting policy when absent.
    #[serde(default)]
    pub warmup: Option<PolicySpec>,
    /// Window features for TD and the linear bounds.
    #[serde(default = "default_features")]
    pub features: FeatureSpec,
    /// Window-action features for Q-learning and the discretization bound.
    #[serde(default = "default_features")]
    pub q_features: FeatureSpec,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Initial learner parameter; zero when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Trace thinning; `max(1, steps/10⁴)` when absent.
    #[serde(default)]
    pub thinning: Option<u64>,
    /// Bounds to evaluate; all of them when absent.
    #[serde(default = "default_bounds")]
    pub bounds: Vec<BoundKind>,
    #[serde(default)]
    pub stability: StabilityOptions,
    #[serde(default = "default_discretization")]
    pub discretization: DiscretizationSpec,
    /// Resolution of the belief grid for the optimal-value reference.
    #[serde(default = "default_grid")]
    pub grid_resolution: usize,
    /// Output root, relative to the working directory.
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_features() -> FeatureSpec {
    FeatureSpec::IndicatorFull {}
}

fn default_steps() -> u64 {
    100_000
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_bounds() -> Vec<BoundKind> {
    BoundKind::ALL.to_vec()
}

fn default_discretization() -> DiscretizationSpec {
    DiscretizationSpec::Native {}
}

fn default_grid() -> usize {
    1000
}

fn default_out() -> PathBuf {
    "results".into()
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A parsed config with its model and every derived object resolved.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// SHA-256 of the raw config bytes.
    pub config_sha256: String,
    pub model: FinitePomdp,
    pub space: WindowSpace,
    pub policy: WindowPolicy,
    pub warmup: WindowPolicy,
    pub mu_init: Belief,
    base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|err| Failure::Config(format!("cannot read {what} {}: {err}", path.display())))
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self, Failure> {
        serde_json::from_str(s).map_err(|err| Failure::Config(format!("bad config: {err}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, Failure> {
        let raw = read(path, "config")?;
        let mut config = ExperimentConfig::from_json_str(&raw)?;
        if let Some(seed) = overrides.seed {
            config.seeds = vec![seed];
            config.stability.seed = seed;
        }
        if let Some(steps) = overrides.steps {
            config.steps = steps;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::resolve(config, sha256_hex(raw.as_bytes()), base_dir)
    }

    fn resolve(config: ExperimentConfig, config_sha256: String, base_dir: PathBuf) -> Result<Self, Failure> {
        let distinct: BTreeSet<u64> = config.seeds.iter().copied().collect();
        if config.seeds.is_empty() || distinct.len() != config.seeds.len() {
            return Err(Failure::Config("seeds must be a non-empty list of distinct values".into()));
        }
        if config.memory == 0 {
            return Err(Failure::Config("memory must be at least 1".into()));
        }
        if config.name.is_empty() || config.name.contains(['/', '\\']) || config.name.starts_with('.') {
            return Err(Failure::Config(format!("name {:?} is not a plain directory name", config.name)));
        }
        let model_path = base_dir.join(&config.model);
        let model = FinitePomdp::from_json_str(&read(&model_path, "model")?)?;
        let space = WindowSpace::new(model.n_obs, model.n_actions, config.memory);
        let policy = config.policy.build(space)?;
        let warmup = match &config.warmup {
            Some(w) => w.build(space)?,
            None => policy.clone(),
        };
        let mu_init = match &config.initial_prior {
            Some(p) => Belief::new(p.clone())?,
            None => Belief::uniform(model.n_states),
        };
        if mu_init.len() != model.n_states {
            return Err(Failure::Config(format!("initial_prior has {} entries, model has {} states", mu_init.len(), model.n_states)));
        }
        if let PriorSpec::Explicit { probs } = &config.design_prior {
            if probs.len() != model.n_states {
                return Err(Failure::Config(format!("design_prior has {} entries, model has {} states", probs.len(), model.n_states)));
            }
        }
        Ok(Experiment { config, config_sha256, model, space, policy, warmup, mu_init, base_dir })
    }

    pub fn window_features(&self) -> Result<FeatureSet, Failure> {
        self.config.features.build(self.space, Domain::Window, &self.base_dir)
    }

    pub fn pair_features(&self) -> Result<FeatureSet, Failure> {
        self.config.q_features.build(self.space, Domain::WindowAction, &self.base_dir)
    }

    /// Design prior for a chain driven by `acting`, given its stationary
    /// hidden-state marginal.
    pub fn design_prior(&self, stationary: &[f64]) -> Result<Belief, Failure> {
        Ok(match &self.config.design_prior {
            PriorSpec::Stationary {} => Belief::new(stationary.to_vec())?,
            PriorSpec::Uniform {} => Belief::uniform(self.model.n_states),
            PriorSpec::Explicit { probs } => Belief::new(probs.clone())?,
        })
    }

    pub fn output_root(&self) -> PathBuf {
        self.config.out.join(&self.config.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_greedy_around_mixes_with_uniform() {
        let space = WindowSpace::new(2, 2, 1);
        let spec: PolicySpec = serde_json::from_str(
            r#"{"kind":"epsilon_greedy_around","base":{"kind":"latest_obs","actions":[0,1]},"epsilon":0.3}"#,
        )
        .unwrap();
        let g = spec.build(space).unwrap();
        for h in 0..space.len() {
            let greedy = space.latest_obs(h);
            assert!((g.prob(h, greedy) - 0.85).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_tables_are_checked_against_the_space() {
        let space = WindowSpace::new(2, 2, 1);
        assert!(PolicySpec::Deterministic { actions: vec![0; 3] }.build(space).is_err());
        assert!(PolicySpec::Constant { action: 2 }.build(space).is_err());
        assert!(PolicySpec::Table { rows: vec![vec![0.5, 0.5]; 8] }.build(space).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let base = r#"{"model":"m.json","memory":1,"policy":{"kind":"uniform"#;
        assert!(ExperimentConfig::from_json_str(&format!("{base}\"}}}}")).is_ok());
        assert!(ExperimentConfig::from_json_str(&format!("{base}\",\"eps\":1}}}}")).is_err());
        assert!(ExperimentConfig::from_json_str(&format!("{base}\"}},\"extra\":0}}")).is_err());
        let native = r#"{"model":"m.json","memory":1,"policy":{"kind":"uniform"},"discretization":{"kind":"native","l_y":1}}"#;
        assert!(ExperimentConfig::from_json_str(native).is_err());
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let c = ExperimentConfig::from_json_str(r#"{"model":"m.json","memory":2,"policy":{"kind":"uniform"}}"#).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.bounds, BoundKind::ALL.to_vec());
        assert_eq!(c.design_prior, PriorSpec::Stationary {});
        assert_eq!(c.features, FeatureSpec::IndicatorFull {});
    }
}
