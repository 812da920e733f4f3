//! Structured sparsity penalty on input weight matrices.
//!
//! Each targeted layer's input weights are penalized with two terms:
//!
//! * an elementwise ℓ1 term that drives individual connections to zero, and
//! * a grouped ℓ2,1 term: the rows of each input matrix are partitioned into
//!   `k` contiguous groups, and for every group the penalty adds the ℓ2 norms
//!   of that group's *columns* (one column per input channel), summed over
//!   columns and groups.
//!
//! The ℓ2,1 term is what couples connections: all weights from one input
//! channel into one group share a norm, so the subgradient pushes whole
//! channel-to-group bundles toward zero together. Input channels that a group
//! of cells does not need go silent as a block, leaving visible column
//! structure in the trained weights.

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Partition of a layer's `n` rows (cells) into contiguous groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    n: usize,
    boundaries: Vec<Range<usize>>,
}

impl GroupSpec {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn boundaries(&self) -> &[Range<usize>] {
        &self.boundaries
    }

    pub fn group_count(&self) -> usize {
        self.boundaries.len()
    }

    /// The group containing row `i`.
    pub fn group_of(&self, i: usize) -> &Range<usize> {
        assert!(i < self.n, "row {i} out of range for {} rows", self.n);
        self.boundaries
            .iter()
            .find(|r| r.contains(&i))
            .expect("groups cover every row")
    }
}

/// Split `n` rows into `k` contiguous groups: every group has ⌈n/k⌉ rows
/// except the last, which takes the remainder. Groups that would be empty
/// (possible when ⌈n/k⌉·(k-1) ≥ n) are dropped, so all returned ranges are
/// nonempty, disjoint, ordered, and cover exactly `0..n`.
pub fn partition_groups(n: usize, k: usize) -> Result<GroupSpec> {
    if k == 0 {
        return Err(Error::Config("group count must be positive".into()));
    }
    if n == 0 {
        return Err(Error::Config("cannot partition zero rows".into()));
    }
    if k > n {
        return Err(Error::Config(format!(
            "group count {k} exceeds row count {n}"
        )));
    }
    let len = n.div_ceil(k);
    let mut boundaries = Vec::with_capacity(k);
    let mut start = 0;
    while start < n {
        let end = (start + len).min(n);
        boundaries.push(start..end);
        start = end;
    }
    Ok(GroupSpec { n, boundaries })
}

/// Sum over columns of the ℓ2 norm of the column restricted to `rows`:
/// Σ_j sqrt(Σ_{i ∈ rows} w[i,j]²). Panics on an empty or out-of-range row
/// range.
pub fn l21_of_transpose(w: &Matrix, rows: &Range<usize>) -> f64 {
    assert!(
        !rows.is_empty() && rows.end <= w.rows(),
        "row range {rows:?} invalid for a matrix with {} rows",
        w.rows()
    );
    let mut total = 0.0;
    for j in 0..w.cols() {
        let mut sq = 0.0;
        for i in rows.clone() {
            let v = w.get(i, j);
            sq += v * v;
        }
        total += sq.sqrt();
    }
    total
}

/// Elementwise ℓ1 norm of a matrix.
pub fn l1_norm(w: &Matrix) -> f64 {
    w.data().iter().map(|v| v.abs()).sum()
}

/// One layer's contribution to the penalty: its input weight matrices (all
/// gates for a recurrent layer, the single matrix for a feedforward layer)
/// and the row partition they share.
pub struct PenalizedLayer<'a> {
    pub matrices: Vec<&'a Matrix>,
    pub groups: &'a GroupSpec,
}

/// Total penalty `λ1 · Σ ℓ1 + λ2 · Σ_groups ℓ2,1` over the given layers.
pub fn penalty_value(layers: &[PenalizedLayer<'_>], lambda1: f64, lambda2: f64) -> f64 {
    let mut total = 0.0;
    for layer in layers {
        for w in &layer.matrices {
            assert_eq!(
                w.rows(),
                layer.groups.n(),
                "matrix with {} rows does not match group partition over {} rows",
                w.rows(),
                layer.groups.n()
            );
            total += lambda1 * l1_norm(w);
            for range in layer.groups.boundaries() {
                total += lambda2 * l21_of_transpose(w, range);
            }
        }
    }
    total
}

/// Subgradient of the penalty for one matrix. Entry `(i, j)` is
/// `λ1 · sign(w[i,j]) + λ2 · w[i,j] / ‖column j of i's group‖₂`, with the
/// convention that `sign(0) = 0` and a zero-norm column contributes 0, so the
/// subgradient is always finite.
pub fn penalty_subgradient(w: &Matrix, groups: &GroupSpec, lambda1: f64, lambda2: f64) -> Matrix {
    assert_eq!(
        w.rows(),
        groups.n(),
        "matrix with {} rows does not match group partition over {} rows",
        w.rows(),
        groups.n()
    );
    let mut out = Matrix::zeros(w.rows(), w.cols());
    for range in groups.boundaries() {
        for j in 0..w.cols() {
            let mut sq = 0.0;
            for i in range.clone() {
                let v = w.get(i, j);
                sq += v * v;
            }
            let norm = sq.sqrt();
            for i in range.clone() {
                let v = w.get(i, j);
                let mut grad = lambda1 * sign(v);
                if norm > 0.0 {
                    grad += lambda2 * v / norm;
                }
                out.set(i, j, grad);
            }
        }
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Root-mean-square weight magnitude for every (group, input channel) cell:
/// entry `(k, j)` is the RMS of column `j` restricted to group `k`. This is
/// the summary visualized to inspect which input channels a trained layer
/// actually uses.
pub fn group_column_rms(w: &Matrix, groups: &GroupSpec) -> Matrix {
    assert_eq!(w.rows(), groups.n(), "matrix rows do not match group partition");
    let mut out = Matrix::zeros(groups.group_count(), w.cols());
    for (k, range) in groups.boundaries().iter().enumerate() {
        let len = range.len() as f64;
        for j in 0..w.cols() {
            let mut sq = 0.0;
            for i in range.clone() {
                let v = w.get(i, j);
                sq += v * v;
            }
            out.set(k, j, (sq / len).sqrt());
        }
    }
    out
}

/// Configuration of the sparsity penalty.
///
/// `target_layers` lists network layer indices (0-based, in stack order) to
/// penalize; `groups_per_layer` gives the group count for each, so both lists
/// must have the same length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    #[serde(default = "default_lambda")]
    pub lambda1: f64,
    #[serde(default = "default_lambda")]
    pub lambda2: f64,
    #[serde(default)]
    pub target_layers: Vec<usize>,
    #[serde(default)]
    pub groups_per_layer: Vec<usize>,
}

fn default_lambda() -> f64 {
    5e-4
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            lambda1: default_lambda(),
            lambda2: default_lambda(),
            target_layers: Vec::new(),
            groups_per_layer: Vec::new(),
        }
    }
}

impl RegConfig {
    /// A configuration with no penalized layers (and therefore zero penalty).
    pub fn off() -> Self {
        RegConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            target_layers: Vec::new(),
            groups_per_layer: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config(format!(
                "penalty weights must be nonnegative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::Config("penalty weights must be finite".into()));
        }
        if self.target_layers.len() != self.groups_per_layer.len() {
            return Err(Error::Config(format!(
                "target_layers has {} entries but groups_per_layer has {}",
                self.target_layers.len(),
                self.groups_per_layer.len()
            )));
        }
        let mut seen = self.target_layers.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.target_layers.len() {
            return Err(Error::Config("target_layers contains duplicates".into()));
        }
        Ok(())
    }

    /// Group count configured for network layer `layer_index`, if penalized.
    pub fn groups_for_layer(&self, layer_index: usize) -> Option<usize> {
        self.target_layers
            .iter()
            .position(|&l| l == layer_index)
            .map(|pos| self.groups_per_layer[pos])
    }
}
