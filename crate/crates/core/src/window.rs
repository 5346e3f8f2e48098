//! Finite-memory window variables and policies defined on them.
//!
//! A window of memory `N` holds the last `N+1` observations and the `N`
//! actions taken between them. Windows are indexed by the mixed-radix code
//! of the chronological sequence `y_{t-N}, u_{t-N}, ..., u_{t-1}, y_t`, most
//! significant digit first, so the latest observation is `index % n_obs`.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CONSTRUCTION_TOL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpace {
    pub n_obs: usize,
    pub n_actions: usize,
    pub memory: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowState {
    /// `y_{t-N}, ..., y_t`.
    pub obs: Vec<usize>,
    /// `u_{t-N}, ..., u_{t-1}`.
    pub acts: Vec<usize>,
    pub index: usize,
}

impl WindowSpace {
    pub fn new(n_obs: usize, n_actions: usize, memory: usize) -> Self {
        let pair = n_obs * n_actions;
        let len = n_obs * pair.pow(memory as u32);
        WindowSpace { n_obs, n_actions, memory, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of (window, action) pairs.
    pub fn pairs(&self) -> usize {
        self.len * self.n_actions
    }

    pub fn encode(&self, obs: &[usize], acts: &[usize]) -> Result<usize> {
        if obs.len() != self.memory + 1 || acts.len() != self.memory {
            return Err(Error::InvalidArgument(format!(
                "window needs {} observations and {} actions, got {} and {}",
                self.memory + 1,
                self.memory,
                obs.len(),
                acts.len()
            )));
        }
        if obs.iter().any(|&y| y >= self.n_obs) || acts.iter().any(|&u| u >= self.n_actions) {
            return Err(Error::InvalidArgument(format!("window entry out of range: {obs:?} {acts:?}")));
        }
        let mut index = 0;
        for k in 0..self.memory {
            index = (index * self.n_obs + obs[k]) * self.n_actions + acts[k];
        }
        Ok(index * self.n_obs + obs[self.memory])
    }

    pub fn decode(&self, index: usize) -> WindowState {
        assert!(index < self.len, "window index {index} out of range");
        let mut obs = vec![0; self.memory + 1];
        let mut acts = vec![0; self.memory];
        let mut rest = index;
        obs[self.memory] = rest % self.n_obs;
        rest /= self.n_obs;
        for k in (0..self.memory).rev() {
            acts[k] = rest % self.n_actions;
            rest /= self.n_actions;
            obs[k] = rest % self.n_obs;
            rest /= self.n_obs;
        }
        WindowState { obs, acts, index }
    }

    /// Drops the oldest (observation, action) pair and appends `(action, next_obs)`.
    #[inline]
    pub fn shift(&self, index: usize, action: usize, next_obs: usize) -> usize {
        if self.memory == 0 {
            return next_obs;
        }
        let tail = self.len / (self.n_obs * self.n_actions);
        let rest = index % tail;
        (rest * self.n_actions + action) * self.n_obs + next_obs
    }

    #[inline]
    pub fn latest_obs(&self, index: usize) -> usize {
        index % self.n_obs
    }

    /// Window after only `y` has been seen: all earlier slots padded with 0.
    /// Shifting it `N` times yields a genuine window.
    #[inline]
    pub fn padded_start(&self, y: usize) -> usize {
        y
    }
}

/// A randomized finite-memory policy γ(u|h).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    space: WindowSpace,
    probs: Vec<f64>,
}

impl WindowPolicy {
    pub fn from_rows(space: WindowSpace, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != space.len() {
            return Err(Error::InvalidArgument(format!(
                "policy has {} rows, window space has {}",
                rows.len(),
                space.len()
            )));
        }
        let mut probs = Vec::with_capacity(space.pairs());
        for (h, row) in rows.into_iter().enumerate() {
            if row.len() != space.n_actions {
                return Err(Error::InvalidArgument(format!("policy row {h} has wrong width")));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > CONSTRUCTION_TOL {
                return Err(Error::InvalidArgument(format!("policy row {h} is not a distribution")));
            }
            probs.extend(row);
        }
        Ok(WindowPolicy { space, probs })
    }

    pub fn uniform(space: WindowSpace) -> Self {
        WindowPolicy { space, probs: vec![1.0 / space.n_actions as f64; space.pairs()] }
    }

    pub fn deterministic(space: WindowSpace, actions: &[usize]) -> Result<Self> {
        if actions.len() != space.len() || actions.iter().any(|&u| u >= space.n_actions) {
            return Err(Error::InvalidArgument("deterministic policy table has wrong shape".into()));
        }
        let mut probs = vec![0.0; space.pairs()];
        for (h, &u) in actions.iter().enumerate() {
            probs[h * space.n_actions + u] = 1.0;
        }
        Ok(WindowPolicy { space, probs })
    }

    pub fn constant(space: WindowSpace, action: usize) -> Result<Self> {
        Self::deterministic(space, &vec![action; space.len()])
    }

    /// Deterministic policy that looks only at the latest observation.
    pub fn latest_obs(space: WindowSpace, action_for_obs: &[usize]) -> Result<Self> {
        if action_for_obs.len() != space.n_obs {
            return Err(Error::InvalidArgument("need one action per observation".into()));
        }
        let actions: Vec<usize> =
            (0..space.len()).map(|h| action_for_obs[space.latest_obs(h)]).collect();
        Self::deterministic(space, &actions)
    }

    /// `(1-eps)·self + eps·uniform`.
    pub fn epsilon_uniform(&self, eps: f64) -> Result<Self> {
        self.mix(&WindowPolicy::uniform(self.space), eps)
    }

    /// `(1-eps)·self + eps·other`, rowwise.
    pub fn mix(&self, other: &WindowPolicy, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!("mixing weight {eps} not in [0,1]")));
        }
        if self.space != other.space {
            return Err(Error::InvalidArgument("policies live on different window spaces".into()));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (1.0 - eps) * a + eps * b)
            .collect();
        Ok(WindowPolicy { space: self.space, probs })
    }

    pub fn space(&self) -> WindowSpace {
        self.space
    }

    #[inline]
    pub fn prob(&self, h: usize, u: usize) -> f64 {
        self.probs[h * self.space.n_actions + u]
    }

    #[inline]
    pub fn row(&self, h: usize) -> &[f64] {
        let nu = self.space.n_actions;
        &self.probs[h * nu..(h + 1) * nu]
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, h: usize, rng: &mut R) -> usize {
        sample_categorical(self.row(h), rng.random::<f64>())
    }

    /// Largest number of actions with positive probability in any row.
    pub fn max_support(&self) -> usize {
        (0..self.space.len())
            .map(|h| self.row(h).iter().filter(|&&p| p > 0.0).count())
            .max()
            .unwrap_or(0)
    }

    /// The action for each window if the policy is deterministic.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        (0..self.space.len())
            .map(|h| self.row(h).iter().position(|&p| p == 1.0))
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.space.len()).map(|h| self.row(h).to_vec()).collect()
    }
}

/// Inverse-CDF draw from a finite distribution given a uniform `r ∈ [0,1)`.
/// Falls back to the last index with positive mass when rounding leaves
/// the cumulative sum short of `r`.
#[inline]
pub fn sample_categorical(probs: &[f64], r: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if r < acc {
                return i;
            }
        }
    }
    last
}
