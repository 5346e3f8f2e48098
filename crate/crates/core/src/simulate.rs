//! Seeded trajectory simulation of a POMDP driven by window policies.
//!
//! The hidden state starts at time `-N` from `prior`; a warm-up policy acts
//! on the zero-padded partial windows of the first `N` steps, and the main
//! policy acts from `t = 0` onwards.

use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Belief, FinitePomdp};
use crate::window::{sample_categorical, WindowPolicy, WindowSpace};

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One step of the controlled process observed at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub t: u64,
    pub x: usize,
    pub y: usize,
    pub u: usize,
    pub h: usize,
}

/// A transition `(x_t, h_t, u_t) → (x_{t+1}, h_{t+1})` with its stage cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub x: usize,
    pub h: usize,
    pub u: usize,
    pub cost: f64,
    pub next_x: usize,
    pub next_h: usize,
}

/// Streaming simulator; holds its own generator.
pub struct Simulator<'a> {
    model: &'a FinitePomdp,
    policy: &'a WindowPolicy,
    space: WindowSpace,
    rng: SimRng,
    x: usize,
    h: usize,
    t: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        model: &'a FinitePomdp,
        policy: &'a WindowPolicy,
        prior: &Belief,
        warmup: &WindowPolicy,
        seed: u64,
    ) -> Result<Self> {
        let space = policy.space();
        if warmup.space() != space {
            return Err(Error::InvalidArgument("warm-up and main policy use different windows".into()));
        }
        if space.n_obs != model.n_obs || space.n_actions != model.n_actions || prior.len() != model.n_states {
            return Err(Error::InvalidArgument("policy or prior does not match the model".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut x = sample_categorical(prior.as_slice(), rng.random::<f64>());
        let mut h = space.padded_start(sample_categorical(&model.channel[x], rng.random::<f64>()));
        for _ in 0..space.memory {
            let u = warmup.sample(h, &mut rng);
            x = sample_categorical(&model.transition[u][x], rng.random::<f64>());
            let y = sample_categorical(&model.channel[x], rng.random::<f64>());
            h = space.shift(h, u, y);
        }
        Ok(Simulator { model, policy, space, rng, x, h, t: 0 })
    }

    pub fn state(&self) -> (usize, usize) {
        (self.x, self.h)
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    #[inline]
    pub fn step(&mut self) -> Transition {
        let (x, h) = (self.x, self.h);
        let u = self.policy.sample(h, &mut self.rng);
        let next_x = sample_categorical(&self.model.transition[u][x], self.rng.random::<f64>());
        let y = sample_categorical(&self.model.channel[next_x], self.rng.random::<f64>());
        let next_h = self.space.shift(h, u, y);
        self.x = next_x;
        self.h = next_h;
        self.t += 1;
        Transition { x, h, u, cost: self.model.cost[x][u], next_x, next_h }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// CSV with columns `t,x,y,u,h_index`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x,y,u,h_index")?;
        for s in &self.steps {
            writeln!(out, "{},{},{},{},{}", s.t, s.x, s.y, s.u, s.h)?;
        }
        Ok(())
    }
}

/// Simulates `horizon` steps from `t = 0`.
pub fn simulate(
    model: &FinitePomdp,
    policy: &WindowPolicy,
    prior: &Belief,
    warmup: &WindowPolicy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut sim = Simulator::new(model, policy, prior, warmup, seed)?;
    let space = policy.space();
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let t = sim.time();
        let tr = sim.step();
        steps.push(Step { t, x: tr.x, y: space.latest_obs(tr.h), u: tr.u, h: tr.h });
    }
    Ok(Trajectory { seed, steps })
}
