//! Denominator degrees of freedom for tests of a cluster-level coefficient.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{hcat, numerical_rank};
use crate::model::{ColumnLevel, DesignMatrices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DdfKind {
    Residual,
    Containment,
    Bw1,
    Bw2,
}

impl DdfKind {
    pub const ALL: [DdfKind; 4] = [DdfKind::Residual, DdfKind::Containment, DdfKind::Bw1, DdfKind::Bw2];

    pub fn as_str(self) -> &'static str {
        match self {
            DdfKind::Residual => "residual",
            DdfKind::Containment => "containment",
            DdfKind::Bw1 => "bw1",
            DdfKind::Bw2 => "bw2",
        }
    }
}

impl fmt::Display for DdfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DdfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DdfKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown ddf kind `{s}`")))
    }
}

/// The four denominator degrees of freedom; `None` marks an undefined value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdfSet {
    pub residual: Option<f64>,
    pub containment: Option<f64>,
    pub bw1: Option<f64>,
    pub bw2: Option<f64>,
    /// Set when `K - rank([1 X_c])` differs from `K - rank(X_c) - 1`, i.e.
    /// the cluster-level columns already span the intercept.
    pub bw2_conventions_disagree: bool,
}

impl DdfSet {
    pub fn get(&self, kind: DdfKind) -> Option<f64> {
        match kind {
            DdfKind::Residual => self.residual,
            DdfKind::Containment => self.containment,
            DdfKind::Bw1 => self.bw1,
            DdfKind::Bw2 => self.bw2,
        }
    }

    /// Checks the ordering relations that hold for every well-formed design.
    pub fn ordering_holds(&self) -> bool {
        let le = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        };
        le(self.containment, self.residual) && le(self.bw1, self.bw2) && le(self.bw2, self.residual)
    }
}

fn defined(v: i64) -> Option<f64> {
    (v > 0).then_some(v as f64)
}

/// Residual, containment, BW1 and BW2 degrees of freedom for the
/// coefficient in column `coef_of_interest`.
///
/// The coefficient is expected to be cluster-level, so no random effect
/// contains it and containment falls back to `N - rank([X Z])`.
pub fn compute_ddfs(design: &DesignMatrices, coef_of_interest: usize) -> Result<DdfSet> {
    if coef_of_interest >= design.n_fixed() {
        return Err(Error::Dimension(format!(
            "coefficient {coef_of_interest} out of range for {} columns",
            design.n_fixed()
        )));
    }
    let n = design.n_obs as i64;
    let k = design.n_clusters as i64;
    let rank_x = numerical_rank(&design.x, None)? as i64;
    let rank_xz = numerical_rank(&hcat(&design.x, &design.z), None)? as i64;

    let cluster_cols: Vec<usize> = design
        .column_levels
        .iter()
        .enumerate()
        .filter(|(_, l)| **l == ColumnLevel::Cluster)
        .map(|(j, _)| j)
        .collect();
    let xc = select_columns(&design.x, &cluster_cols);
    let rank_xc = numerical_rank(&xc, None)? as i64;
    let has_intercept = design.intercept_index.is_some();
    let bw2 = k - rank_xc - i64::from(has_intercept);

    let bw2_conventions_disagree = if has_intercept {
        let with_one = hcat(&DMatrix::from_element(design.n_obs, 1, 1.0), &xc);
        k - numerical_rank(&with_one, None)? as i64 != bw2
    } else {
        false
    };

    Ok(DdfSet {
        residual: defined(n - rank_x),
        containment: defined(n - rank_xz),
        bw1: defined(k - rank_x),
        bw2: defined(bw2),
        bw2_conventions_disagree,
    })
}

fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}
