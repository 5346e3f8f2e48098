//! Filter-stability constants: the expected L1 gap between the true filter
//! of `x_t` (started from `mu_init` at time `-N`) and the window posterior
//! that substitutes the design prior `pi` for the predictor `N` steps back.
//!
//! The supremum over admissible policies is taken over a finite family.
//! Every family member is preceded by the same warm-up policy on the first
//! `N` (padded) windows.

use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::posterior_or_fallback;
use crate::model::{Belief, FinitePomdp};
use crate::par::{self, Exec};
use crate::quantize::coarsen_observations;
use crate::window::{sample_categorical, WindowPolicy, WindowSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMethod {
    /// Enumerate every realization; fails if any `t ≤ T_max` exceeds the cap.
    Exact,
    MonteCarlo,
    /// Exact while the enumeration fits under the cap, Monte-Carlo after.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityOptions {
    pub t_max: usize,
    pub cap: usize,
    pub samples: usize,
    pub seed: u64,
    pub method: StabilityMethod,
    pub exec: Exec,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            t_max: 50,
            cap: 1 << 20,
            samples: 100_000,
            seed: 0,
            method: StabilityMethod::Auto,
            exec: Exec::default(),
        }
    }
}

const CHUNK: usize = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStabilityReport {
    /// L_t for `t = 0..=t_max`, each in [0,2].
    pub values: Vec<f64>,
    /// Standard error of the maximizing policy's estimate (0 when exact).
    pub stderr: Vec<f64>,
    /// `exact` or `monte-carlo` per t.
    pub methods: Vec<String>,
    /// Index into the family of the maximizing policy per t.
    pub argmax: Vec<usize>,
    pub t_max: usize,
    /// `(2‖c‖_∞/(1−β)²)·β^{T_max+1}`.
    pub tail: f64,
    pub samples: usize,
    pub family_size: usize,
    pub family: String,
    pub discount: f64,
    pub cost_sup: f64,
}

impl FilterStabilityReport {
    /// Truncated `Σ_{t ≤ T_max} β^t L_t`.
    pub fn discounted_sum(&self) -> f64 {
        self.values.iter().enumerate().map(|(t, l)| self.discount.powi(t as i32) * l).sum()
    }

    /// Standard error of [`Self::discounted_sum`] from the Monte-Carlo terms.
    pub fn discounted_sum_stderr(&self) -> f64 {
        self.stderr
            .iter()
            .enumerate()
            .map(|(t, s)| self.discount.powi(t as i32) * s)
            .sum()
    }

    /// Upper bound on `Σ_{t > T_max} β^t L_t`, using `L_t ≤ 2`.
    pub fn series_tail(&self) -> f64 {
        2.0 * self.discount.powi(self.t_max as i32 + 1) / (1.0 - self.discount)
    }

    /// CSV with columns `t,L_t,method,stderr`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,L_t,method,stderr")?;
        for t in 0..self.values.len() {
            writeln!(out, "{},{},{},{}", t, self.values[t], self.methods[t], self.stderr[t])?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// All deterministic policies when there are at most 256 of them, else 64
/// random deterministic ones. `extra` policies are appended unless already
/// present.
pub fn default_family(space: WindowSpace, extra: &[WindowPolicy], seed: u64) -> (Vec<WindowPolicy>, String) {
    let nu = space.n_actions;
    let nw = space.len();
    let count = (nu as f64).powi(nw as i32);
    let mut family = Vec::new();
    let label = if count <= 256.0 {
        for code in 0..count as usize {
            let mut c = code;
            let actions: Vec<usize> = (0..nw)
                .map(|_| {
                    let u = c % nu;
                    c /= nu;
                    u
                })
                .collect();
            family.push(WindowPolicy::deterministic(space, &actions).expect("valid table"));
        }
        format!("all {} deterministic window policies", family.len())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..64 {
            let actions: Vec<usize> = (0..nw).map(|_| rng.random_range(0..nu)).collect();
            family.push(WindowPolicy::deterministic(space, &actions).expect("valid table"));
        }
        "64 random deterministic window policies".to_string()
    };
    let mut added = 0;
    for p in extra {
        if !family.contains(p) {
            family.push(p.clone());
            added += 1;
        }
    }
    (family, format!("{label} plus {added} supplied"))
}

/// Realizations needed to enumerate `t` exactly.
pub fn enumeration_count(space: WindowSpace, policy_support: usize, warmup_support: usize, t: usize) -> f64 {
    let n = space.memory as i32;
    (space.n_obs as f64).powi(t as i32 + n + 1)
        * (warmup_support as f64).powi(n)
        * (policy_support as f64).powi(t as i32)
}

struct Problem<'a> {
    model: &'a FinitePomdp,
    space: WindowSpace,
    /// P^π(x|h) per window.
    reference: Vec<Vec<f64>>,
    mu_init: &'a [f64],
    warmup: &'a WindowPolicy,
}

impl Problem<'_> {
    #[inline]
    fn gap(&self, filter: &[f64], h: usize) -> f64 {
        filter.iter().zip(&self.reference[h]).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Predicted state law and the observation law after action `u`.
    #[inline]
    fn predict(&self, filter: &[f64], u: usize, pred: &mut [f64], obs: &mut [f64]) {
        let m = self.model;
        pred.iter_mut().for_each(|v| *v = 0.0);
        for (x, &w) in filter.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (x2, &p) in m.transition[u][x].iter().enumerate() {
                pred[x2] += w * p;
            }
        }
        obs.iter_mut().for_each(|v| *v = 0.0);
        for (x, &w) in pred.iter().enumerate() {
            for (y, &p) in m.channel[x].iter().enumerate() {
                obs[y] += w * p;
            }
        }
    }

    #[inline]
    fn condition(&self, pred: &[f64], y: usize, q: f64, out: &mut [f64]) {
        for (x, o) in out.iter_mut().enumerate() {
            *o = pred[x] * self.model.channel[x][y] / q;
        }
    }

    fn initial(&self) -> Vec<(f64, Vec<f64>, usize)> {
        let nx = self.model.n_states;
        let mut out = Vec::new();
        for y in 0..self.model.n_obs {
            let q: f64 = (0..nx).map(|x| self.mu_init[x] * self.model.channel[x][y]).sum();
            if q > 0.0 {
                let f = (0..nx).map(|x| self.mu_init[x] * self.model.channel[x][y] / q).collect();
                out.push((q, f, self.space.padded_start(y)));
            }
        }
        out
    }

    /// Adds `P(path)·gap` into `acc[s]` for `s = 0..=depth` over every path.
    fn enumerate(&self, gamma: &WindowPolicy, depth: usize, acc: &mut [f64]) {
        let n = self.space.memory;
        for (p, f, h) in self.initial() {
            self.dfs(gamma, -(n as i64), depth as i64, p, &f, h, acc);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs(&self, gamma: &WindowPolicy, s: i64, depth: i64, p: f64, f: &[f64], h: usize, acc: &mut [f64]) {
        if s >= 0 {
            acc[s as usize] += p * self.gap(f, h);
        }
        if s == depth {
            return;
        }
        let policy = if s < 0 { self.warmup } else { gamma };
        let nx = f.len();
        let mut pred = vec![0.0; nx];
        let mut obs = vec![0.0; self.model.n_obs];
        let mut next = vec![0.0; nx];
        for (u, &pu) in policy.row(h).iter().enumerate() {
            if pu == 0.0 {
                continue;
            }
            self.predict(f, u, &mut pred, &mut obs);
            for (y, &q) in obs.iter().enumerate() {
                if q == 0.0 {
                    continue;
                }
                self.condition(&pred, y, q, &mut next);
                self.dfs(gamma, s + 1, depth, p * pu * q, &next, self.space.shift(h, u, y), acc);
            }
        }
    }

    /// Sum and sum of squares of the gap at `t = from..=to` over `count`
    /// sampled paths.
    fn sample_chunk(&self, gamma: &WindowPolicy, from: usize, to: usize, seed: u64, count: usize) -> (Vec<f64>, Vec<f64>) {
        let width = to + 1 - from;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx = self.model.n_states;
        let mut pred = vec![0.0; nx];
        let mut obs = vec![0.0; self.model.n_obs];
        let mut f = vec![0.0; nx];
        let mut next = vec![0.0; nx];
        let n = self.space.memory as i64;
        for _ in 0..count {
            // Initial observation from the prior.
            self.predict_initial(&mut obs);
            let y = sample_categorical(&obs, rng.random::<f64>());
            let q = obs[y];
            for x in 0..nx {
                f[x] = self.mu_init[x] * self.model.channel[x][y] / q;
            }
            let mut h = self.space.padded_start(y);
            let mut s = -n;
            loop {
                if s >= from as i64 {
                    let g = self.gap(&f, h);
                    let i = s as usize - from;
                    sum[i] += g;
                    sq[i] += g * g;
                }
                if s == to as i64 {
                    break;
                }
                let policy = if s < 0 { self.warmup } else { gamma };
                let u = sample_categorical(policy.row(h), rng.random::<f64>());
                self.predict(&f, u, &mut pred, &mut obs);
                let y = sample_categorical(&obs, rng.random::<f64>());
                self.condition(&pred, y, obs[y], &mut next);
                std::mem::swap(&mut f, &mut next);
                h = self.space.shift(h, u, y);
                s += 1;
            }
        }
        (sum, sq)
    }

    fn predict_initial(&self, obs: &mut [f64]) {
        obs.iter_mut().for_each(|v| *v = 0.0);
        for (x, &w) in self.mu_init.iter().enumerate() {
            for (y, &p) in self.model.channel[x].iter().enumerate() {
                obs[y] += w * p;
            }
        }
    }
}

fn chunk_seed(seed: u64, chunk: usize) -> u64 {
    seed ^ (chunk as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// L_t for `t = 0..=T_max`, maximized over `policies`.
pub fn filter_stability(
    model: &FinitePomdp,
    pi: &Belief,
    mu_init: &Belief,
    policies: &[WindowPolicy],
    warmup: &WindowPolicy,
    opts: &StabilityOptions,
) -> Result<FilterStabilityReport> {
    filter_stability_labeled(model, pi, mu_init, policies, warmup, opts, format!("{} supplied policies", policies.len()))
}

pub(crate) fn filter_stability_labeled(
    model: &FinitePomdp,
    pi: &Belief,
    mu_init: &Belief,
    policies: &[WindowPolicy],
    warmup: &WindowPolicy,
    opts: &StabilityOptions,
    family: String,
) -> Result<FilterStabilityReport> {
    let space = warmup.space();
    if space.n_obs != model.n_obs || space.n_actions != model.n_actions {
        return Err(Error::InvalidArgument("warm-up policy does not match the model".into()));
    }
    if policies.is_empty() || policies.iter().any(|p| p.space() != space) {
        return Err(Error::InvalidArgument("policy family is empty or uses a different window".into()));
    }
    if pi.len() != model.n_states || mu_init.len() != model.n_states {
        return Err(Error::InvalidArgument("prior dimension does not match the model".into()));
    }
    let reference = (0..space.len())
        .map(|h| posterior_or_fallback(model, pi, &space, h).0.into_vec())
        .collect();
    let problem = Problem { model, space, reference, mu_init: mu_init.as_slice(), warmup };
    let t_max = opts.t_max;
    let ws = warmup.max_support();

    // Deepest t that every policy can enumerate under the cap.
    let fits = |t: usize| {
        policies
            .iter()
            .all(|g| enumeration_count(space, g.max_support(), ws, t) <= opts.cap as f64)
    };
    let exact_depth: Option<usize> = match opts.method {
        StabilityMethod::MonteCarlo => None,
        StabilityMethod::Exact => {
            if !fits(t_max) {
                let worst = policies.iter().map(|g| g.max_support()).max().unwrap_or(1);
                return Err(Error::EnumerationTooLarge {
                    required: enumeration_count(space, worst, ws, t_max),
                    cap: opts.cap,
                });
            }
            Some(t_max)
        }
        StabilityMethod::Auto => (0..=t_max).take_while(|&t| fits(t)).last(),
    };
    let mc_from = exact_depth.map_or(0, |d| d + 1);
    let chunks = opts.samples.div_ceil(CHUNK);
    let samples = if mc_from <= t_max { chunks * CHUNK } else { 0 };
    if mc_from <= t_max && samples == 0 {
        return Err(Error::InvalidArgument("Monte-Carlo needs at least one sample".into()));
    }

    let per_policy: Vec<(Vec<f64>, Vec<f64>)> = par::map_slice(opts.exec, policies, |g| {
        let mut mean = vec![0.0; t_max + 1];
        let mut se = vec![0.0; t_max + 1];
        if let Some(d) = exact_depth {
            problem.enumerate(g, d, &mut mean[..=d]);
        }
        if mc_from <= t_max {
            let width = t_max + 1 - mc_from;
            let mut sum = vec![0.0; width];
            let mut sq = vec![0.0; width];
            for c in 0..chunks {
                let (s, q) = problem.sample_chunk(g, mc_from, t_max, chunk_seed(opts.seed, c), CHUNK);
                for i in 0..width {
                    sum[i] += s[i];
                    sq[i] += q[i];
                }
            }
            let n = samples as f64;
            for i in 0..width {
                let m = sum[i] / n;
                let var = (sq[i] / n - m * m).max(0.0);
                mean[mc_from + i] = m;
                se[mc_from + i] = (var / (n - 1.0).max(1.0)).sqrt();
            }
        }
        (mean, se)
    });

    let mut values = vec![0.0; t_max + 1];
    let mut stderr = vec![0.0; t_max + 1];
    let mut argmax = vec![0; t_max + 1];
    for t in 0..=t_max {
        for (k, (m, s)) in per_policy.iter().enumerate() {
            if k == 0 || m[t] > values[t] {
                values[t] = m[t];
                stderr[t] = s[t];
                argmax[t] = k;
            }
        }
        values[t] = values[t].clamp(0.0, 2.0);
    }
    let methods = (0..=t_max)
        .map(|t| if t < mc_from { "exact".to_string() } else { "monte-carlo".to_string() })
        .collect();
    let beta = model.discount;
    let cost_sup = model.cost_sup();
    Ok(FilterStabilityReport {
        values,
        stderr,
        methods,
        argmax,
        t_max,
        tail: 2.0 * cost_sup / (1.0 - beta).powi(2) * beta.powi(t_max as i32 + 1),
        samples,
        family_size: policies.len(),
        family,
        discount: beta,
        cost_sup,
    })
}

/// Filter stability over the default family for `space`, with `extra`
/// policies (e.g. the evaluated policy) always included.
pub fn filter_stability_default(
    model: &FinitePomdp,
    pi: &Belief,
    mu_init: &Belief,
    extra: &[WindowPolicy],
    warmup: &WindowPolicy,
    opts: &StabilityOptions,
) -> Result<FilterStabilityReport> {
    let (family, label) = default_family(warmup.space(), extra, opts.seed);
    filter_stability_labeled(model, pi, mu_init, &family, warmup, opts, label)
}

/// L̂_t: filter stability of the model whose observations are first merged
/// into the cells of `cells` (one cell index per original observation).
/// Policies act on the coarse windows.
pub fn quantized_filter_stability(
    model: &FinitePomdp,
    cells: &[usize],
    pi: &Belief,
    mu_init: &Belief,
    policies: &[WindowPolicy],
    warmup: &WindowPolicy,
    opts: &StabilityOptions,
) -> Result<FilterStabilityReport> {
    let coarse = coarsen_observations(model, cells)?;
    filter_stability(&coarse, pi, mu_init, policies, warmup, opts)
}
