//! Clustered trial data, model specifications and design-matrix assembly.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Outcome distribution with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    BernoulliLogit,
    PoissonLog,
    GaussianIdentity,
}

impl Family {
    /// Checks the outcome vector against the family's support.
    pub fn validate_outcomes(self, y: &[f64]) -> Result<()> {
        for (i, &v) in y.iter().enumerate() {
            let ok = match self {
                Family::BernoulliLogit => v == 0.0 || v == 1.0,
                Family::PoissonLog => v >= 0.0 && v.fract() == 0.0 && v.is_finite(),
                Family::GaussianIdentity => v.is_finite(),
            };
            if !ok {
                return Err(Error::Validation(format!(
                    "outcome {v} at row {i} is outside the support of {self}"
                )));
            }
        }
        Ok(())
    }

    /// Whether the family carries a free dispersion parameter.
    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::GaussianIdentity)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::BernoulliLogit => "bernoulli-logit",
            Family::PoissonLog => "poisson-log",
            Family::GaussianIdentity => "gaussian-identity",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli-logit" | "binomial" | "bernoulli" | "binary" => Ok(Family::BernoulliLogit),
            "poisson-log" | "poisson" | "count" => Ok(Family::PoissonLog),
            "gaussian-identity" | "gaussian" => Ok(Family::GaussianIdentity),
            other => Err(Error::Validation(format!("unknown family `{other}`"))),
        }
    }
}

/// Level at which a covariate is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovariateLevel {
    Person,
    Cluster,
}

impl FromStr for CovariateLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "person" => Ok(CovariateLevel::Person),
            "cluster" => Ok(CovariateLevel::Cluster),
            other => Err(Error::Validation(format!("unknown covariate level `{other}`"))),
        }
    }
}

/// Level tag of a fixed-effect design column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnLevel {
    Intercept,
    Cluster,
    Person,
}

impl fmt::Display for ColumnLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnLevel::Intercept => "intercept",
            ColumnLevel::Cluster => "cluster",
            ColumnLevel::Person => "person",
        })
    }
}

/// One person in a clustered trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub cluster_id: i64,
    pub outcome: f64,
    pub treatment: u8,
    /// Values in the order of [`ClusteredDataset::covariate_names`].
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredDataset {
    covariate_names: Vec<String>,
    covariate_levels: Vec<CovariateLevel>,
    rows: Vec<Row>,
}

impl ClusteredDataset {
    /// Validates and wraps person rows.
    ///
    /// Treatment and every cluster-tagged covariate must be constant within
    /// each cluster.
    pub fn new(
        covariate_names: Vec<String>,
        covariate_levels: Vec<CovariateLevel>,
        rows: Vec<Row>,
    ) -> Result<Self> {
        if covariate_names.len() != covariate_levels.len() {
            return Err(Error::Dimension(format!(
                "{} covariate names but {} levels",
                covariate_names.len(),
                covariate_levels.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate covariate `{name}`")));
            }
        }
        let mut first_in_cluster: BTreeMap<i64, usize> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            if row.covariates.len() != covariate_names.len() {
                return Err(Error::Dimension(format!(
                    "row {i} has {} covariates, expected {}",
                    row.covariates.len(),
                    covariate_names.len()
                )));
            }
            if row.treatment > 1 {
                return Err(Error::Validation(format!("row {i}: treatment must be 0 or 1")));
            }
            if !row.outcome.is_finite() || row.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("row {i} has non-finite values")));
            }
            let first = *first_in_cluster.entry(row.cluster_id).or_insert(i);
            let head = &rows[first];
            if head.treatment != row.treatment {
                return Err(Error::Validation(format!(
                    "treatment varies within cluster {}",
                    row.cluster_id
                )));
            }
            for (k, level) in covariate_levels.iter().enumerate() {
                if *level == CovariateLevel::Cluster && head.covariates[k] != row.covariates[k] {
                    return Err(Error::Validation(format!(
                        "cluster-level covariate `{}` varies within cluster {}",
                        covariate_names[k], row.cluster_id
                    )));
                }
            }
        }
        Ok(Self {
            covariate_names,
            covariate_levels,
            rows,
        })
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_levels(&self) -> &[CovariateLevel] {
        &self.covariate_levels
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.outcome).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Distinct cluster ids in ascending order.
    pub fn cluster_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.rows.iter().map(|r| r.cluster_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_ids().len()
    }

    /// Same data with rows reordered by `perm` (row `i` of the result is row `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            covariate_names: self.covariate_names.clone(),
            covariate_levels: self.covariate_levels.clone(),
            rows: perm.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Reads the `cluster,treatment,y,<covariates...>` format.
    ///
    /// Covariate levels are inferred by within-cluster constancy with a
    /// relative tolerance of `1e-12`; `overrides` pins specific columns.
    pub fn read_csv<R: Read>(
        reader: R,
        overrides: &BTreeMap<String, CovariateLevel>,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["cluster", "treatment", "y"];
        if headers.len() < 3 || headers.iter().take(3).ne(expected.iter().copied()) {
            return Err(Error::Validation(
                "csv header must start with `cluster,treatment,y`".into(),
            ));
        }
        let names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
        for key in overrides.keys() {
            if !names.contains(key) {
                return Err(Error::UnknownCovariate(key.clone()));
            }
        }
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let field = |k: usize| -> Result<&str> {
                record.get(k).ok_or_else(|| {
                    Error::Validation(format!("data row {}: missing field {}", line + 1, k + 1))
                })
            };
            let parse_f = |k: usize| -> Result<f64> {
                let s = field(k)?;
                s.parse::<f64>().map_err(|_| {
                    Error::Validation(format!("data row {}: cannot parse `{s}`", line + 1))
                })
            };
            let cluster_id = field(0)?.parse::<i64>().map_err(|_| {
                Error::Validation(format!("data row {}: cluster must be an integer", line + 1))
            })?;
            let treatment = match field(1)? {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Validation(format!(
                        "data row {}: treatment must be 0 or 1, got `{other}`",
                        line + 1
                    )))
                }
            };
            let outcome = parse_f(2)?;
            let covariates = (0..names.len())
                .map(|k| parse_f(k + 3))
                .collect::<Result<Vec<_>>>()?;
            rows.push(Row {
                cluster_id,
                outcome,
                treatment,
                covariates,
            });
        }
        if rows.is_empty() {
            return Err(Error::Validation("csv has no data rows".into()));
        }
        let levels = names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                overrides.get(name).copied().unwrap_or_else(|| {
                    let col: Vec<f64> = rows.iter().map(|r| r.covariates[k]).collect();
                    let ids: Vec<i64> = rows.iter().map(|r| r.cluster_id).collect();
                    if constant_within_clusters(&col, &ids, CSV_LEVEL_TOLERANCE) {
                        CovariateLevel::Cluster
                    } else {
                        CovariateLevel::Person
                    }
                })
            })
            .collect();
        Self::new(names, levels, rows)
    }

    /// Writes the dataset in the CSV format accepted by [`Self::read_csv`].
    /// Floats use shortest round-trip formatting, so reading back is exact.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster".to_string(), "treatment".into(), "y".into()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.cluster_id.to_string(),
                row.treatment.to_string(),
                row.outcome.to_string(),
            ];
            rec.extend(row.covariates.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative tolerance for level detection on ingested data.
pub const CSV_LEVEL_TOLERANCE: f64 = 1e-12;

fn constant_within_clusters(col: &[f64], cluster_ids: &[i64], rel_tol: f64) -> bool {
    let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = if scale > 0.0 { rel_tol * scale } else { 0.0 };
    let mut first: BTreeMap<i64, f64> = BTreeMap::new();
    col.iter().zip(cluster_ids).all(|(&v, id)| {
        let head = *first.entry(*id).or_insert(v);
        (v - head).abs() <= tol
    })
}

/// Which fixed effects enter the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub include_intercept: bool,
    pub include_treatment: bool,
    pub adjusted_covariates: Vec<String>,
}

impl ModelSpec {
    pub fn new(family: Family, adjusted_covariates: Vec<String>) -> Self {
        Self {
            family,
            include_intercept: true,
            include_treatment: true,
            adjusted_covariates,
        }
    }

    /// The same model without the treatment column.
    pub fn without_treatment(&self) -> Self {
        Self {
            include_treatment: false,
            ..self.clone()
        }
    }
}

/// Fixed- and random-effect design for a random-intercept model.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    /// `N x p`: intercept, treatment, adjusted covariates in spec order.
    pub x: DMatrix<f64>,
    /// `N x K` cluster indicators; column `k` is the `k`-th smallest cluster id.
    pub z: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub column_levels: Vec<ColumnLevel>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    /// Cluster index (`0..K`) of each row.
    pub cluster_of_row: Vec<usize>,
    /// Row indices of each cluster, in row order.
    pub cluster_rows: Vec<Vec<usize>>,
    pub intercept_index: Option<usize>,
    pub treatment_index: Option<usize>,
}

impl DesignMatrices {
    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    /// Copy of the design with fixed-effect column `col` removed.
    pub fn drop_column(&self, col: usize) -> Self {
        let shift = |idx: Option<usize>| match idx {
            Some(i) if i == col => None,
            Some(i) if i > col => Some(i - 1),
            other => other,
        };
        let mut names = self.column_names.clone();
        names.remove(col);
        let mut levels = self.column_levels.clone();
        levels.remove(col);
        Self {
            x: self.x.clone().remove_column(col),
            column_names: names,
            column_levels: levels,
            intercept_index: shift(self.intercept_index),
            treatment_index: shift(self.treatment_index),
            ..self.clone()
        }
    }

    /// Builds a design directly from matrices; `cluster_of_row` indexes `0..K`.
    /// Column levels are detected from the data (exact within-cluster constancy).
    pub fn from_parts(
        x: DMatrix<f64>,
        column_names: Vec<String>,
        cluster_of_row: Vec<usize>,
        intercept_index: Option<usize>,
        treatment_index: Option<usize>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Validation("empty design".into()));
        }
        if cluster_of_row.len() != n || column_names.len() != x.ncols() {
            return Err(Error::Dimension("design parts disagree in size".into()));
        }
        let k = cluster_of_row.iter().max().map_or(0, |m| m + 1);
        let mut cluster_rows = vec![Vec::new(); k];
        for (i, &c) in cluster_of_row.iter().enumerate() {
            cluster_rows[c].push(i);
        }
        if let Some(empty) = cluster_rows.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!("cluster {empty} has zero rows")));
        }
        let ids: Vec<i64> = cluster_of_row.iter().map(|&c| c as i64).collect();
        let column_levels = (0..x.ncols())
            .map(|j| {
                if Some(j) == intercept_index {
                    ColumnLevel::Intercept
                } else {
                    let col: Vec<f64> = x.column(j).iter().copied().collect();
                    if constant_within_clusters(&col, &ids, 0.0) {
                        ColumnLevel::Cluster
                    } else {
                        ColumnLevel::Person
                    }
                }
            })
            .collect();
        let z = DMatrix::from_fn(n, k, |i, c| if cluster_of_row[i] == c { 1.0 } else { 0.0 });
        Ok(Self {
            x,
            z,
            column_names,
            column_levels,
            n_obs: n,
            n_clusters: k,
            cluster_sizes: cluster_rows.iter().map(Vec::len).collect(),
            cluster_of_row,
            cluster_rows,
            intercept_index,
            treatment_index,
        })
    }
}

/// Assembles `X` and `Z` for `spec` on generated data: a column is tagged
/// cluster-level when it is exactly constant within every cluster.
pub fn build_design(dataset: &ClusteredDataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    build_design_with_tolerance(dataset, spec, 0.0)
}

/// As [`build_design`], with a relative tolerance for the level detection
/// (use [`CSV_LEVEL_TOLERANCE`] for ingested data).
pub fn build_design_with_tolerance(
    dataset: &ClusteredDataset,
    spec: &ModelSpec,
    level_tolerance: f64,
) -> Result<DesignMatrices> {
    let rows = dataset.rows();
    if rows.is_empty() {
        return Err(Error::Validation("dataset is empty".into()));
    }
    let mut seen = HashSet::new();
    let mut cov_idx = Vec::with_capacity(spec.adjusted_covariates.len());
    for name in &spec.adjusted_covariates {
        if !seen.insert(name.as_str()) {
            return Err(Error::Validation(format!("covariate `{name}` listed twice")));
        }
        cov_idx.push(
            dataset
                .covariate_index(name)
                .ok_or_else(|| Error::UnknownCovariate(name.clone()))?,
        );
    }

    let ids = dataset.cluster_ids();
    let index_of: BTreeMap<i64, usize> = ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let cluster_of_row: Vec<usize> = rows.iter().map(|r| index_of[&r.cluster_id]).collect();
    let row_ids: Vec<i64> = rows.iter().map(|r| r.cluster_id).collect();

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut intercept_index = None;
    let mut treatment_index = None;
    if spec.include_intercept {
        intercept_index = Some(columns.len());
        names.push("(intercept)".to_string());
        columns.push(vec![1.0; rows.len()]);
    }
    if spec.include_treatment {
        treatment_index = Some(columns.len());
        names.push("treatment".to_string());
        columns.push(rows.iter().map(|r| f64::from(r.treatment)).collect());
    }
    for (name, &k) in spec.adjusted_covariates.iter().zip(&cov_idx) {
        names.push(name.clone());
        columns.push(rows.iter().map(|r| r.covariates[k]).collect());
    }

    let levels: Vec<ColumnLevel> = columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            if Some(j) == intercept_index {
                ColumnLevel::Intercept
            } else if constant_within_clusters(col, &row_ids, level_tolerance) {
                ColumnLevel::Cluster
            } else {
                ColumnLevel::Person
            }
        })
        .collect();

    let n = rows.len();
    let p = columns.len();
    let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let mut design = DesignMatrices::from_parts(x, names, cluster_of_row, intercept_index, treatment_index)?;
    design.column_levels = levels;
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hcat, numerical_rank};

    fn toy(person_constant: bool) -> ClusteredDataset {
        let rows = (0..4)
            .map(|i| Row {
                cluster_id: (i / 2) as i64 + 1,
                outcome: (i % 2) as f64,
                treatment: (i / 2) as u8,
                covariates: vec![if person_constant { (i / 2) as f64 } else { i as f64 * 0.5 }],
            })
            .collect();
        ClusteredDataset::new(vec!["age".into()], vec![CovariateLevel::Person], rows).unwrap()
    }

    #[test]
    fn unadjusted_design_shapes_and_levels() {
        let d = build_design(&toy(false), &ModelSpec::new(Family::BernoulliLogit, vec![])).unwrap();
        assert_eq!((d.x.nrows(), d.x.ncols()), (4, 2));
        assert_eq!((d.z.nrows(), d.z.ncols()), (4, 2));
        assert_eq!(d.column_levels, vec![ColumnLevel::Intercept, ColumnLevel::Cluster]);
        assert_eq!(d.cluster_sizes, vec![2, 2]);
    }

    #[test]
    fn varying_covariate_is_person_level() {
        let spec = ModelSpec::new(Family::BernoulliLogit, vec!["age".into()]);
        let d = build_design(&toy(false), &spec).unwrap();
        assert_eq!(d.column_levels[2], ColumnLevel::Person);
    }

    #[test]
    fn constant_person_covariate_is_detected_as_cluster_level() {
        let data = toy(true);
        let spec = ModelSpec::new(Family::BernoulliLogit, vec!["age".into()]);
        let d = build_design(&data, &spec).unwrap();
        // within-cluster variance of the column, computed directly
        for rows in &d.cluster_rows {
            let vals: Vec<f64> = rows.iter().map(|&i| d.x[(i, 2)]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
            assert_eq!(var, 0.0);
        }
        assert_eq!(d.column_levels[2], ColumnLevel::Cluster);
    }

    #[test]
    fn unknown_covariate_is_an_error() {
        let spec = ModelSpec::new(Family::BernoulliLogit, vec!["bmi".into()]);
        assert!(matches!(
            build_design(&toy(false), &spec),
            Err(Error::UnknownCovariate(name)) if name == "bmi"
        ));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = ClusteredDataset::new(vec![], vec![], vec![]).unwrap();
        let spec = ModelSpec::new(Family::BernoulliLogit, vec![]);
        assert!(build_design(&data, &spec).is_err());
    }

    #[test]
    fn treatment_varying_within_cluster_is_rejected() {
        let rows = vec![
            Row { cluster_id: 1, outcome: 0.0, treatment: 0, covariates: vec![] },
            Row { cluster_id: 1, outcome: 1.0, treatment: 1, covariates: vec![] },
        ];
        assert!(ClusteredDataset::new(vec![], vec![], rows).is_err());
    }

    #[test]
    fn indicators_span_cluster_level_columns() {
        // K = 4, X = [intercept, treatment]: both lie in the span of Z.
        let rows = (0..12)
            .map(|i| Row {
                cluster_id: (i / 3) as i64,
                outcome: 0.0,
                treatment: ((i / 3) % 2) as u8,
                covariates: vec![],
            })
            .collect();
        let data = ClusteredDataset::new(vec![], vec![], rows).unwrap();
        let d = build_design(&data, &ModelSpec::new(Family::BernoulliLogit, vec![])).unwrap();
        assert_eq!(numerical_rank(&hcat(&d.x, &d.z), None).unwrap(), 4);
    }

    #[test]
    fn csv_round_trip_preserves_values_and_levels() {
        let data = toy(false);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = ClusteredDataset::read_csv(buf.as_slice(), &BTreeMap::new()).unwrap();
        assert_eq!(back.rows(), data.rows());
        assert_eq!(back.covariate_levels(), &[CovariateLevel::Person]);
    }

    #[test]
    fn csv_level_override_and_bad_header() {
        let text = "cluster,treatment,y,a\n1,0,1,0.5\n1,0,0,0.5\n2,1,1,2\n2,1,0,2\n";
        let auto = ClusteredDataset::read_csv(text.as_bytes(), &BTreeMap::new()).unwrap();
        assert_eq!(auto.covariate_levels(), &[CovariateLevel::Cluster]);
        let mut ov = BTreeMap::new();
        ov.insert("a".to_string(), CovariateLevel::Person);
        let forced = ClusteredDataset::read_csv(text.as_bytes(), &ov).unwrap();
        assert_eq!(forced.covariate_levels(), &[CovariateLevel::Person]);

        let bad = "id,treatment,y\n1,0,1\n";
        assert!(ClusteredDataset::read_csv(bad.as_bytes(), &BTreeMap::new()).is_err());
    }

    #[test]
    fn family_support_checks() {
        assert!(Family::BernoulliLogit.validate_outcomes(&[0.0, 1.0]).is_ok());
        assert!(Family::BernoulliLogit.validate_outcomes(&[0.5]).is_err());
        assert!(Family::PoissonLog.validate_outcomes(&[2.0, 0.0]).is_ok());
        assert!(Family::PoissonLog.validate_outcomes(&[-1.0]).is_err());
        assert!(Family::PoissonLog.validate_outcomes(&[1.5]).is_err());
        assert!(Family::GaussianIdentity.validate_outcomes(&[f64::NAN]).is_err());
    }
}
