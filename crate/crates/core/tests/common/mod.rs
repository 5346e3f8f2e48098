//! Random model generators shared by the property tests.

#![allow(dead_code)]

use proptest::prelude::*;
use window_rl_core::{Belief, FinitePomdp, WindowPolicy, WindowSpace};

fn normalize(w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn stochastic_rows(rows: usize, cols: usize, floor: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(floor..1.0f64, cols), rows)
        .prop_map(|rows| rows.into_iter().map(normalize).collect())
}

/// Models with 2–3 states, 2–3 observations and 1–2 actions. Entries are
/// bounded below by `floor`, so `floor > 0` gives full support everywhere.
pub fn model_with_floor(floor: f64) -> impl Strategy<Value = FinitePomdp> {
    (2usize..=3, 2usize..=3, 1usize..=2).prop_flat_map(move |(nx, ny, nu)| {
        (
            prop::collection::vec(stochastic_rows(nx, nx, floor), nu),
            stochastic_rows(nx, ny, floor),
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, nu), nx),
            0.3..0.95f64,
        )
            .prop_map(|(t, o, c, beta)| FinitePomdp::new(t, o, c, beta).expect("generated model is valid"))
    })
}

pub fn model() -> impl Strategy<Value = FinitePomdp> {
    model_with_floor(0.05)
}

pub fn belief(n: usize) -> impl Strategy<Value = Belief> {
    prop::collection::vec(0.05..1.0f64, n).prop_map(|w| Belief::from_unnormalized(w).unwrap())
}

/// Random stochastic window policy with full support.
pub fn policy(space: WindowSpace) -> impl Strategy<Value = WindowPolicy> {
    stochastic_rows(space.len(), space.n_actions, 0.05)
        .prop_map(move |rows| WindowPolicy::from_rows(space, rows).expect("rows are stochastic"))
}

pub fn space_for(model: &FinitePomdp, memory: usize) -> WindowSpace {
    WindowSpace::new(model.n_obs, model.n_actions, memory)
}
