//! Finite POMDP environment: hidden states, observation channel, actions,
//! stage cost and discount.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums when a model or belief is constructed.
pub const CONSTRUCTION_TOL: f64 = 1e-12;
/// Tolerance on row sums of derived quantities.
pub const DERIVED_TOL: f64 = 1e-10;

/// A finite partially observed MDP.
///
/// `transition[u][x][x']` is the probability of moving from `x` to `x'`
/// under action `u`; `channel[x][y]` is the probability of observing `y` in
/// state `x`; `cost[x][u]` is the stage cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinitePomdp {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub channel: Vec<Vec<f64>>,
    pub cost: Vec<Vec<f64>>,
    pub discount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonPositiveDimension { field: String },
    Shape { field: String, expected: String, found: String },
    NegativeEntry { field: String, row: String, col: usize, value: f64 },
    RowSum { field: String, row: String, sum: f64 },
    NonFiniteCost { state: usize, action: usize },
    Discount { value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveDimension { field } => write!(f, "{field} must be positive"),
            Violation::Shape { field, expected, found } => {
                write!(f, "{field} has shape {found}, expected {expected}")
            }
            Violation::NegativeEntry { field, row, col, value } => {
                write!(f, "{field} row {row} column {col} is negative ({value})")
            }
            Violation::RowSum { field, row, sum } => {
                write!(f, "{field} row {row} sums to {sum}, not 1")
            }
            Violation::NonFiniteCost { state, action } => {
                write!(f, "cost at (x={state}, u={action}) is not finite")
            }
            Violation::Discount { value } => write!(f, "discount {value} is not in (0,1)"),
        }
    }
}

/// Every violated invariant of a model; empty iff the model is valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "model is valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_stochastic_row(
    report: &mut ValidationReport,
    field: &str,
    row_label: String,
    row: &[f64],
    width: usize,
) {
    if row.len() != width {
        report.violations.push(Violation::Shape {
            field: format!("{field}[{row_label}]"),
            expected: width.to_string(),
            found: row.len().to_string(),
        });
        return;
    }
    for (col, &p) in row.iter().enumerate() {
        if !(p >= 0.0) || !p.is_finite() {
            report.violations.push(Violation::NegativeEntry {
                field: field.to_string(),
                row: row_label.clone(),
                col,
                value: p,
            });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > CONSTRUCTION_TOL {
        report.violations.push(Violation::RowSum { field: field.to_string(), row: row_label, sum });
    }
}

/// Lists every violated stochasticity or finiteness invariant.
pub fn validate_model(model: &FinitePomdp) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (field, n) in [
        ("n_states", model.n_states),
        ("n_obs", model.n_obs),
        ("n_actions", model.n_actions),
    ] {
        if n == 0 {
            report.violations.push(Violation::NonPositiveDimension { field: field.into() });
        }
    }
    if !report.is_valid() {
        return report;
    }
    if model.transition.len() != model.n_actions {
        report.violations.push(Violation::Shape {
            field: "transition".into(),
            expected: format!("{} action blocks", model.n_actions),
            found: model.transition.len().to_string(),
        });
    } else {
        for (u, block) in model.transition.iter().enumerate() {
            if block.len() != model.n_states {
                report.violations.push(Violation::Shape {
                    field: format!("transition[{u}]"),
                    expected: format!("{} rows", model.n_states),
                    found: block.len().to_string(),
                });
                continue;
            }
            for (x, row) in block.iter().enumerate() {
                check_stochastic_row(
                    &mut report,
                    "transition",
                    format!("(x={x}, u={u})"),
                    row,
                    model.n_states,
                );
            }
        }
    }
    if model.channel.len() != model.n_states {
        report.violations.push(Violation::Shape {
            field: "channel".into(),
            expected: format!("{} rows", model.n_states),
            found: model.channel.len().to_string(),
        });
    } else {
        for (x, row) in model.channel.iter().enumerate() {
            check_stochastic_row(&mut report, "channel", format!("(x={x})"), row, model.n_obs);
        }
    }
    if model.cost.len() != model.n_states
        || model.cost.iter().any(|r| r.len() != model.n_actions)
    {
        report.violations.push(Violation::Shape {
            field: "cost".into(),
            expected: format!("{}x{}", model.n_states, model.n_actions),
            found: format!(
                "{}x{:?}",
                model.cost.len(),
                model.cost.iter().map(Vec::len).collect::<Vec<_>>()
            ),
        });
    } else {
        for (x, row) in model.cost.iter().enumerate() {
            for (u, c) in row.iter().enumerate() {
                if !c.is_finite() {
                    report.violations.push(Violation::NonFiniteCost { state: x, action: u });
                }
            }
        }
    }
    if !(model.discount > 0.0 && model.discount < 1.0) {
        report.violations.push(Violation::Discount { value: model.discount });
    }
    report
}

impl FinitePomdp {
    /// Builds and validates a model.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        channel: Vec<Vec<f64>>,
        cost: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        let model = FinitePomdp {
            n_states: channel.len(),
            n_obs: channel.first().map_or(0, Vec::len),
            n_actions: transition.len(),
            transition,
            channel,
            cost,
            discount,
        };
        model.validated()
    }

    fn validated(self) -> Result<Self> {
        let report = validate_model(&self);
        if report.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let model: FinitePomdp = serde_json::from_str(s)?;
        model.validated()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    #[inline]
    pub fn trans(&self, x: usize, u: usize, next: usize) -> f64 {
        self.transition[u][x][next]
    }

    #[inline]
    pub fn obs_prob(&self, x: usize, y: usize) -> f64 {
        self.channel[x][y]
    }

    #[inline]
    pub fn stage_cost(&self, x: usize, u: usize) -> f64 {
        self.cost[x][u]
    }

    /// ‖c‖_∞ = max |c(x,u)|.
    pub fn cost_sup(&self) -> f64 {
        self.cost.iter().flatten().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    /// max c − min c, used for Lipschitz moduli of value functions.
    pub fn cost_span(&self) -> f64 {
        let (lo, hi) = self
            .cost
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
        hi - lo
    }

    /// Same model with a different stage cost.
    pub fn with_cost(&self, cost: Vec<Vec<f64>>) -> Result<Self> {
        FinitePomdp { cost, ..self.clone() }.validated()
    }

    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        FinitePomdp { discount, ..self.clone() }.validated()
    }
}

/// A probability distribution over hidden states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("belief over an empty state space".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("belief has a negative entry: {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::InvalidArgument(format!("belief sums to {sum}")));
        }
        Ok(Belief(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Belief(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, k: usize) -> Self {
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        Belief(w)
    }

    /// Normalizes nonnegative weights; `None` if their total is not positive.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Some(Belief(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Total variation in the L1 convention, Σ|p−q| ∈ [0,2].
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}
