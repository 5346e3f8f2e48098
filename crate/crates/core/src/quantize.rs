//! Observation quantization: axis-aligned bins on a compact box, coarsening
//! of finite observation alphabets, and compilation of continuous-observation
//! models into finite ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FinitePomdp;

/// Product partition of a box in ℝⁿ. Each axis is cut at increasing edges;
/// cells are left-closed `[e_k, e_{k+1})` except the last, which also
/// contains the upper end. Bins are numbered row-major over the axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    edges: Vec<Vec<f64>>,
}

impl Quantizer {
    pub fn from_edges(edges: Vec<Vec<f64>>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::BadPartition("quantizer needs at least one axis".into()));
        }
        for (axis, e) in edges.iter().enumerate() {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) || e.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadPartition(format!("axis {axis} edges must be finite and increasing")));
            }
        }
        Ok(Quantizer { edges })
    }

    /// `bins[i]` equal cells on `[lo_i, hi_i]`.
    pub fn uniform(ranges: &[(f64, f64)], bins: &[usize]) -> Result<Self> {
        if ranges.len() != bins.len() {
            return Err(Error::BadPartition("one bin count per axis".into()));
        }
        let edges = ranges
            .iter()
            .zip(bins)
            .map(|(&(lo, hi), &m)| {
                let m = m.max(1);
                (0..=m).map(|k| if k == m { hi } else { lo + (hi - lo) * k as f64 / m as f64 }).collect()
            })
            .collect();
        Self::from_edges(edges)
    }

    pub fn dims(&self) -> usize {
        self.edges.len()
    }

    pub fn n_bins(&self) -> usize {
        self.edges.iter().map(|e| e.len() - 1).product()
    }

    pub fn edges(&self, axis: usize) -> &[f64] {
        &self.edges[axis]
    }

    fn axis_cell(edges: &[f64], v: f64) -> Option<usize> {
        let m = edges.len() - 1;
        if !(v >= edges[0] && v <= edges[m]) {
            return None;
        }
        // Last edge ≤ v, clamped so the upper end falls in the last cell.
        let k = edges.partition_point(|&e| e <= v);
        Some((k - 1).min(m - 1))
    }

    /// Index of the bin containing `y`.
    pub fn quantize(&self, y: &[f64]) -> Result<usize> {
        if y.len() != self.dims() {
            return Err(Error::OutOfRange { point: y.to_vec() });
        }
        let mut index = 0;
        for (e, &v) in self.edges.iter().zip(y) {
            let cell = Self::axis_cell(e, v).ok_or_else(|| Error::OutOfRange { point: y.to_vec() })?;
            index = index * (e.len() - 1) + cell;
        }
        Ok(index)
    }

    /// Euclidean diameter of every bin, in bin order.
    pub fn diameters(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for e in &self.edges {
            let widths: Vec<f64> = e.windows(2).map(|w| w[1] - w[0]).collect();
            out = out.iter().flat_map(|d2| widths.iter().map(move |w| d2 + w * w)).collect();
        }
        out.into_iter().map(f64::sqrt).collect()
    }

    /// `L_Y`: the largest bin diameter.
    pub fn max_diameter(&self) -> f64 {
        self.diameters().into_iter().fold(0.0, f64::max)
    }

    /// Bin bounds along each axis for bin `index`.
    pub fn bin_bounds(&self, index: usize) -> Vec<(f64, f64)> {
        let mut rest = index;
        let mut out = vec![(0.0, 0.0); self.dims()];
        for (axis, e) in self.edges.iter().enumerate().rev() {
            let m = e.len() - 1;
            let k = rest % m;
            rest /= m;
            out[axis] = (e[k], e[k + 1]);
        }
        out
    }
}

/// Merges finite observations into cells: `cells[y]` is the cell of `y`.
/// Cells must be numbered `0..M` and each must be non-empty.
pub fn coarsen_observations(model: &FinitePomdp, cells: &[usize]) -> Result<FinitePomdp> {
    if cells.len() != model.n_obs {
        return Err(Error::BadPartition(format!(
            "{} cell labels for {} observations",
            cells.len(),
            model.n_obs
        )));
    }
    let m = cells.iter().max().map_or(0, |c| c + 1);
    if (0..m).any(|c| !cells.contains(&c)) {
        return Err(Error::BadPartition("cell labels must be 0..M with no gaps".into()));
    }
    let channel = model
        .channel
        .iter()
        .map(|row| {
            let mut out = vec![0.0; m];
            for (y, p) in row.iter().enumerate() {
                out[cells[y]] += p;
            }
            out
        })
        .collect();
    Ok(FinitePomdp { n_obs: m, channel, ..model.clone() })
}

/// Observation densities `g(x, ·)` on a one-dimensional compact interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationDensity {
    /// Normal density with per-state mean, renormalized to `[low, high]`.
    TruncatedGaussian { means: Vec<f64>, std_dev: f64, low: f64, high: f64 },
}

const NORMALIZER_POINTS: usize = 100_000;

impl ObservationDensity {
    fn raw(&self, x: usize, y: f64) -> f64 {
        match self {
            ObservationDensity::TruncatedGaussian { means, std_dev, .. } => {
                let z = (y - means[x]) / std_dev;
                (-0.5 * z * z).exp() / (std_dev * (2.0 * std::f64::consts::PI).sqrt())
            }
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            ObservationDensity::TruncatedGaussian { low, high, .. } => (*low, *high),
        }
    }

    /// Mass of the untruncated density on the support, by the midpoint rule.
    fn truncation_mass(&self, x: usize) -> f64 {
        let (lo, hi) = self.support();
        let w = (hi - lo) / NORMALIZER_POINTS as f64;
        (0..NORMALIZER_POINTS).map(|k| self.raw(x, lo + (k as f64 + 0.5) * w)).sum::<f64>() * w
    }

    pub fn density(&self, x: usize, y: f64) -> f64 {
        self.raw(x, y) / self.truncation_mass(x)
    }

    /// `α_Y` with `|g(x,y) − g(x,y')| ≤ α_Y |y − y'|` for all states.
    pub fn lipschitz_constant(&self, n_states: usize) -> f64 {
        match self {
            ObservationDensity::TruncatedGaussian { std_dev, .. } => {
                // sup |φ'| of N(m, σ²) is attained at m ± σ.
                let slope = 1.0 / (std_dev * std_dev * (2.0 * std::f64::consts::PI * std::f64::consts::E).sqrt());
                (0..n_states).map(|x| slope / self.truncation_mass(x)).fold(0.0, f64::max)
            }
        }
    }
}

/// POMDP with a finite state and action space and a density channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousObsModel {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub cost: Vec<Vec<f64>>,
    pub discount: f64,
    pub density: ObservationDensity,
}

/// Sub-points per bin for the midpoint rule.
pub const MIDPOINT_RESOLUTION: usize = 10;

impl ContinuousObsModel {
    /// Finite model whose channel is `O(B_i|x) = ∫_{B_i} g(x,y) dy`, computed by
    /// the midpoint rule with [`MIDPOINT_RESOLUTION`] sub-points per bin and
    /// renormalized per state.
    pub fn compile(&self, quantizer: &Quantizer) -> Result<FinitePomdp> {
        if quantizer.dims() != 1 {
            return Err(Error::BadPartition("continuous observations are one-dimensional".into()));
        }
        let (lo, hi) = self.density.support();
        let e = quantizer.edges(0);
        if (e[0] - lo).abs() > 1e-12 || (e[e.len() - 1] - hi).abs() > 1e-12 {
            return Err(Error::BadPartition("quantizer must cover the observation support exactly".into()));
        }
        let channel = (0..self.n_states)
            .map(|x| {
                let masses: Vec<f64> = e
                    .windows(2)
                    .map(|w| {
                        let step = (w[1] - w[0]) / MIDPOINT_RESOLUTION as f64;
                        (0..MIDPOINT_RESOLUTION)
                            .map(|k| self.density.raw(x, w[0] + (k as f64 + 0.5) * step))
                            .sum::<f64>()
                            * step
                    })
                    .collect();
                let total: f64 = masses.iter().sum();
                masses.into_iter().map(|m| m / total).collect()
            })
            .collect();
        FinitePomdp::new(self.transition.clone(), channel, self.cost.clone(), self.discount)
    }

    pub fn lipschitz_constant(&self) -> f64 {
        self.density.lipschitz_constant(self.n_states)
    }
}
