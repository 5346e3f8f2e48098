//! Feature sets on windows or on (window, action) pairs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::window::WindowSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Points are windows `h`.
    Window,
    /// Points are pairs at `h·|𝕌| + u`.
    WindowAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Generic,
    /// Feature `i` is the indicator of cell `i`; `cells[p]` is the cell of point `p`.
    Indicator { cells: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub space: WindowSpace,
    pub domain: Domain,
    pub d: usize,
    pub kind: FeatureKind,
    /// Φ(p)_i at `p·d + i`.
    table: Vec<f64>,
}

/// On-disk feature table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFile {
    pub domain: Domain,
    pub d: usize,
    /// One row of `d` values per point.
    pub values: Vec<Vec<f64>>,
}

pub fn domain_size(space: WindowSpace, domain: Domain) -> usize {
    match domain {
        Domain::Window => space.len(),
        Domain::WindowAction => space.pairs(),
    }
}

impl FeatureSet {
    /// Generic features from one row of `d` values per point; every value
    /// must lie in [-1, 1].
    pub fn from_rows(space: WindowSpace, domain: Domain, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = domain_size(space, domain);
        if rows.len() != n || n == 0 {
            return Err(Error::InvalidArgument(format!("feature table needs {n} rows, got {}", rows.len())));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("feature rows must share a positive width".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::InvalidArgument("feature values must be finite and bounded by 1".into()));
        }
        Ok(FeatureSet { space, domain, d, kind: FeatureKind::Generic, table: rows.concat() })
    }

    pub fn from_file(space: WindowSpace, file: FeatureFile) -> Result<Self> {
        let f = Self::from_rows(space, file.domain, file.values)?;
        if f.d != file.d {
            return Err(Error::InvalidArgument(format!("declared d = {} but rows have {}", file.d, f.d)));
        }
        Ok(f)
    }

    pub fn load(space: WindowSpace, path: impl AsRef<Path>) -> Result<Self> {
        let file: FeatureFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(space, file)
    }

    /// Indicator features of a partition given as a cell index per point.
    pub fn indicator(space: WindowSpace, domain: Domain, cells: Vec<usize>) -> Result<Self> {
        let n = domain_size(space, domain);
        if cells.len() != n {
            return Err(Error::BadPartition(format!("cell map has {} entries, domain has {n}", cells.len())));
        }
        let d = cells.iter().copied().max().map_or(0, |m| m + 1);
        let mut used = vec![false; d];
        for &c in &cells {
            used[c] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::BadPartition(format!("cell {empty} is empty")));
        }
        let mut table = vec![0.0; n * d];
        for (p, &c) in cells.iter().enumerate() {
            table[p * d + c] = 1.0;
        }
        Ok(FeatureSet { space, domain, d, kind: FeatureKind::Indicator { cells }, table })
    }

    /// One cell per point.
    pub fn indicator_full(space: WindowSpace, domain: Domain) -> Self {
        Self::indicator(space, domain, (0..domain_size(space, domain)).collect()).expect("identity partition")
    }

    /// Cells keyed by the latest observation (and the action, on pairs).
    pub fn by_latest_obs(space: WindowSpace, domain: Domain) -> Self {
        let cells = match domain {
            Domain::Window => (0..space.len()).map(|h| space.latest_obs(h)).collect(),
            Domain::WindowAction => (0..space.pairs())
                .map(|p| space.latest_obs(p / space.n_actions) * space.n_actions + p % space.n_actions)
                .collect(),
        };
        Self::indicator(space, domain, cells).expect("every observation appears last in some window")
    }

    pub fn len(&self) -> usize {
        domain_size(self.space, self.domain)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self.kind, FeatureKind::Indicator { .. })
    }

    pub fn cells(&self) -> Option<&[usize]> {
        match &self.kind {
            FeatureKind::Indicator { cells } => Some(cells),
            FeatureKind::Generic => None,
        }
    }

    #[inline]
    pub fn phi(&self, p: usize) -> &[f64] {
        &self.table[p * self.d..(p + 1) * self.d]
    }

    #[inline]
    pub fn phi_pair(&self, h: usize, u: usize) -> &[f64] {
        self.phi(h * self.space.n_actions + u)
    }

    #[inline]
    pub fn value(&self, theta: &[f64], p: usize) -> f64 {
        self.phi(p).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    /// θᵀΦ at every point.
    pub fn evaluate(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|p| self.value(theta, p)).collect()
    }

    /// max |φ^i|.
    pub fn sup_bound(&self) -> f64 {
        self.table.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.table.chunks(self.d).map(|c| c.to_vec()).collect()
    }

    pub fn to_file(&self) -> FeatureFile {
        FeatureFile { domain: self.domain, d: self.d, values: self.rows() }
    }
}
