//! Realization sequences: transition matrices with designed eigenvalues and markers.

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::matrix::Matrix;

/// One transition matrix `A_n : Z^{f(n)} -> Z^{f(n+1)}` and its designed sum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(with = "io::int_matrix")]
    pub matrix: Matrix<BigInt>,
    #[serde(with = "io::int")]
    pub p: BigInt,
}

/// Properties a realization claims to have.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    #[serde(default)]
    pub ecs: bool,
    #[serde(default)]
    pub ers: bool,
    #[serde(default)]
    pub ecrs: bool,
    #[serde(default)]
    pub primitive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RealizationError {
    /// A stage does not have as many columns as the previous one has rows.
    #[error("stage {0} does not chain: {1}")]
    Chain(usize, String),
    /// There is not one marker per level.
    #[error("expected {expected} markers, found {found}")]
    MarkerCount { expected: usize, found: usize },
}

/// Finite prefix of a realization `G = lim A_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RealizationSeq {
    pub stages: Vec<Stage>,
    pub flags: Flags,
    /// Marker vector `h_j` at each level, with `A_n h_n = p_n h_{n+1}`.
    pub markers: Option<Vec<Vec<BigInt>>>,
}

impl RealizationSeq {
    pub fn new(stages: Vec<Stage>, flags: Flags, markers: Option<Vec<Vec<BigInt>>>) -> Result<Self, RealizationError> {
        for (n, w) in stages.windows(2).enumerate() {
            if w[0].matrix.rows() != w[1].matrix.cols() {
                return Err(RealizationError::Chain(
                    n + 1,
                    format!("{} rows feed a matrix with {} columns", w[0].matrix.rows(), w[1].matrix.cols()),
                ));
            }
        }
        if let Some(m) = &markers {
            let expected = stages.len() + 1;
            if m.len() != expected {
                return Err(RealizationError::MarkerCount { expected, found: m.len() });
            }
        }
        Ok(RealizationSeq { stages, flags, markers })
    }

    pub fn matrices(&self) -> Vec<Matrix<BigInt>> {
        self.stages.iter().map(|s| s.matrix.clone()).collect()
    }

    /// Size of the group at 1-based level `j`.
    pub fn level_size(&self, j: usize) -> Option<usize> {
        if j == 0 || j > self.stages.len() + 1 {
            return None;
        }
        if j <= self.stages.len() {
            Some(self.stages[j - 1].matrix.cols())
        } else {
            self.stages.last().map(|s| s.matrix.rows())
        }
    }

    /// Composes stages between cut points: cuts `c_0 < c_1 < ...` index levels from 0.
    pub fn telescope(&self, cuts: &[usize]) -> Option<RealizationSeq> {
        if cuts.len() < 2 || cuts.windows(2).any(|w| w[0] >= w[1]) || *cuts.last()? > self.stages.len() {
            return None;
        }
        let stages = cuts
            .windows(2)
            .map(|w| {
                let mut m = self.stages[w[0]].matrix.clone();
                let mut p = self.stages[w[0]].p.clone();
                for s in &self.stages[w[0] + 1..w[1]] {
                    m = s.matrix.mul(&m);
                    p *= &s.p;
                }
                Stage { matrix: m, p }
            })
            .collect();
        let markers = self.markers.as_ref().map(|m| cuts.iter().map(|&c| m[c].clone()).collect());
        Some(RealizationSeq { stages, flags: self.flags, markers })
    }
}
