//! Simulation scenarios: designs, data-generating models and fitted models.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{CovariateLevel, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Binary,
    Count,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::Binary, Outcome::Count];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Binary => "binary",
            Outcome::Count => "count",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Outcome::Binary => Family::BernoulliLogit,
            Outcome::Count => Family::PoissonLog,
        }
    }
}

/// Which simulation study a scenario belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Design {
    /// Two person-level and two cluster-level covariates.
    Sim1,
    /// Four person-level and two cluster-level covariates.
    Sim2,
    /// `Sim2` with halved coefficients and a low-prevalence binary intercept.
    Sensitivity,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::Sim1, Design::Sim2, Design::Sensitivity];

    pub fn as_str(self) -> &'static str {
        match self {
            Design::Sim1 => "sim1",
            Design::Sim2 => "sim2",
            Design::Sensitivity => "sensitivity",
        }
    }

    pub fn allowed_dgms(self) -> &'static [Dgm] {
        match self {
            Design::Sim1 => &[Dgm::A, Dgm::B, Dgm::C, Dgm::D],
            Design::Sim2 | Design::Sensitivity => &[Dgm::B, Dgm::D],
        }
    }

    /// Covariates generated for every dataset, in dataset column order.
    pub fn covariates(self) -> &'static [CovariateSpec] {
        use CovariateDist::{Bernoulli, Normal};
        use CovariateLevel::{Cluster, Person};
        const SIM1: [CovariateSpec; 4] = [
            CovariateSpec { name: "xp1", level: Person, dist: Normal },
            CovariateSpec { name: "xp2", level: Person, dist: Normal },
            CovariateSpec { name: "xc1", level: Cluster, dist: Bernoulli },
            CovariateSpec { name: "xc2", level: Cluster, dist: Bernoulli },
        ];
        const SIM2: [CovariateSpec; 6] = [
            CovariateSpec { name: "xp1", level: Person, dist: Normal },
            CovariateSpec { name: "xp2", level: Person, dist: Normal },
            CovariateSpec { name: "xp3", level: Person, dist: Bernoulli },
            CovariateSpec { name: "xp4", level: Person, dist: Normal },
            CovariateSpec { name: "xc1", level: Cluster, dist: Bernoulli },
            CovariateSpec { name: "xc2", level: Cluster, dist: Bernoulli },
        ];
        match self {
            Design::Sim1 => &SIM1,
            Design::Sim2 | Design::Sensitivity => &SIM2,
        }
    }

    fn person_coefficients(self) -> &'static [(&'static str, f64)] {
        match self {
            Design::Sim1 => &[("xp1", 0.7)],
            Design::Sim2 => &[("xp1", 0.7), ("xp2", -0.75), ("xp3", -1.0)],
            Design::Sensitivity => &[("xp1", 0.35), ("xp2", -0.375), ("xp3", -0.5)],
        }
    }

    fn cluster_coefficient(self) -> f64 {
        match self {
            Design::Sim1 | Design::Sim2 => 0.8,
            Design::Sensitivity => 0.4,
        }
    }

    fn redundant_person(self) -> &'static str {
        match self {
            Design::Sim1 => "xp2",
            Design::Sim2 | Design::Sensitivity => "xp4",
        }
    }
}

/// Data-generating model: which covariates carry non-zero coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dgm {
    /// None.
    A,
    /// Person-level only.
    B,
    /// Cluster-level only.
    C,
    /// Both.
    D,
}

impl Dgm {
    pub const ALL: [Dgm; 4] = [Dgm::A, Dgm::B, Dgm::C, Dgm::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Dgm::A => "A",
            Dgm::B => "B",
            Dgm::C => "C",
            Dgm::D => "D",
        }
    }

    fn has_person(self) -> bool {
        matches!(self, Dgm::B | Dgm::D)
    }

    fn has_cluster(self) -> bool {
        matches!(self, Dgm::C | Dgm::D)
    }
}

macro_rules! name_enum {
    ($ty:ident, $what:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $ty::ALL
                    .into_iter()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s))
                    .ok_or_else(|| Error::Validation(format!("unknown {} `{s}`", $what)))
            }
        }
    };
}

name_enum!(Outcome, "outcome");
name_enum!(Design, "design");
name_enum!(Dgm, "data-generating model");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateDist {
    /// Standard normal.
    Normal,
    /// Bernoulli(0.5).
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovariateSpec {
    pub name: &'static str,
    pub level: CovariateLevel,
    pub dist: CovariateDist,
}

/// A data-generating term: covariate distribution and coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub dist: CovariateDist,
    pub coef: f64,
}

/// One cell of the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub design: Design,
    pub outcome: Outcome,
    pub k: usize,
    pub mean_size: f64,
    pub cv: f64,
    pub icc: f64,
    pub dgm: Dgm,
    /// 1: data-generating covariates only; 2: plus the redundant person-level
    /// covariate; 3: plus the redundant cluster-level covariate; 4: both.
    pub fitted_model: u8,
    /// Marginal prevalence the binary intercept is tuned to. Defaults to 0.081
    /// for binary sensitivity scenarios and is unused otherwise.
    pub prevalence_target: Option<f64>,
}

pub const SENSITIVITY_PREVALENCE: f64 = 0.081;

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        design: Design,
        outcome: Outcome,
        k: usize,
        mean_size: f64,
        cv: f64,
        icc: f64,
        dgm: Dgm,
        fitted_model: u8,
    ) -> Result<Self> {
        let prevalence_target =
            (design == Design::Sensitivity && outcome == Outcome::Binary).then_some(SENSITIVITY_PREVALENCE);
        let s = Self { design, outcome, k, mean_size, cv, icc, dgm, fitted_model, prevalence_target };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 4 || self.k % 2 == 1 {
            return Err(Error::Scenario(format!("K must be an even number >= 4, got {}", self.k)));
        }
        if !(self.mean_size > 5.0 && self.mean_size.is_finite()) {
            return Err(Error::Scenario(format!("mean cluster size must exceed 5, got {}", self.mean_size)));
        }
        if !(self.cv >= 0.0 && self.cv.is_finite()) {
            return Err(Error::Scenario(format!("cv must be >= 0, got {}", self.cv)));
        }
        if self.cv == 0.0 && self.mean_size.fract() != 0.0 {
            return Err(Error::Scenario(format!(
                "equal cluster sizes need an integer mean size, got {}",
                self.mean_size
            )));
        }
        if !(self.icc > 0.0 && self.icc < 1.0) {
            return Err(Error::Scenario(format!("icc must lie in (0, 1), got {}", self.icc)));
        }
        if !self.design.allowed_dgms().contains(&self.dgm) {
            return Err(Error::Scenario(format!(
                "data-generating model {} is not part of design {}",
                self.dgm, self.design
            )));
        }
        if !(1..=4).contains(&self.fitted_model) {
            return Err(Error::Scenario(format!("fitted model must be 1-4, got {}", self.fitted_model)));
        }
        if let Some(p) = self.prevalence_target {
            if self.outcome != Outcome::Binary || !(p > 0.0 && p < 1.0) {
                return Err(Error::Scenario(format!("invalid prevalence target {p}")));
            }
        }
        Ok(())
    }

    /// Stable identifier of the full scenario, fitted model included.
    pub fn id(&self) -> String {
        format!("{}-m{}", self.data_key(), self.fitted_model)
    }

    /// Identifier of the data-generating part; scenarios that differ only in
    /// the fitted model share it, and therefore share simulated datasets.
    pub fn data_key(&self) -> String {
        let mut key = format!(
            "{}-{}-K{}-s{}-cv{}-icc{}-{}",
            self.design, self.outcome, self.k, self.mean_size, self.cv, self.icc, self.dgm
        );
        if let Some(p) = self.prevalence_target {
            key.push_str(&format!("-p{p}"));
        }
        key
    }

    /// Non-zero data-generating terms, by covariate name.
    pub fn active_terms(&self) -> Vec<(&'static str, Term)> {
        let specs = self.design.covariates();
        let dist_of = |name: &str| specs.iter().find(|c| c.name == name).expect("known covariate").dist;
        let mut terms = Vec::new();
        if self.dgm.has_person() {
            for &(name, coef) in self.design.person_coefficients() {
                terms.push((name, Term { dist: dist_of(name), coef }));
            }
        }
        if self.dgm.has_cluster() {
            terms.push(("xc1", Term { dist: dist_of("xc1"), coef: self.design.cluster_coefficient() }));
        }
        terms
    }

    /// Covariates in the data-generating model.
    pub fn dgm_covariates(&self) -> Vec<String> {
        self.active_terms().into_iter().map(|(n, _)| n.to_string()).collect()
    }

    /// Covariates adjusted for by the fitted model, person-level first.
    pub fn fitted_covariates(&self) -> Vec<String> {
        let mut covs = self.dgm_covariates();
        if matches!(self.fitted_model, 2 | 4) {
            covs.push(self.design.redundant_person().to_string());
        }
        if matches!(self.fitted_model, 3 | 4) {
            covs.push("xc2".to_string());
        }
        let level = |n: &String| {
            self.design
                .covariates()
                .iter()
                .find(|c| c.name == n)
                .map_or(CovariateLevel::Person, |c| c.level)
        };
        covs.sort_by_key(|n| level(n) == CovariateLevel::Cluster);
        covs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(design: Design, dgm: Dgm, fit: u8) -> Scenario {
        Scenario::new(design, Outcome::Binary, 10, 50.0, 0.0, 0.05, dgm, fit).unwrap()
    }

    #[test]
    fn fitted_covariate_sets() {
        assert!(scenario(Design::Sim1, Dgm::A, 1).fitted_covariates().is_empty());
        assert_eq!(scenario(Design::Sim1, Dgm::D, 4).fitted_covariates(), ["xp1", "xp2", "xc1", "xc2"]);
        assert_eq!(scenario(Design::Sim1, Dgm::C, 2).fitted_covariates(), ["xp2", "xc1"]);
        assert_eq!(
            scenario(Design::Sim2, Dgm::D, 4).fitted_covariates(),
            ["xp1", "xp2", "xp3", "xp4", "xc1", "xc2"]
        );
    }

    #[test]
    fn coefficient_presets() {
        let d = scenario(Design::Sim2, Dgm::D, 1).active_terms();
        let coefs: Vec<f64> = d.iter().map(|(_, t)| t.coef).collect();
        assert_eq!(coefs, [0.7, -0.75, -1.0, 0.8]);
        let s = scenario(Design::Sensitivity, Dgm::D, 1).active_terms();
        for ((_, a), (_, b)) in d.iter().zip(&s) {
            assert_eq!(a.coef / 2.0, b.coef);
        }
        assert!(scenario(Design::Sim1, Dgm::A, 1).active_terms().is_empty());
    }

    #[test]
    fn validation() {
        assert!(Scenario::new(Design::Sim1, Outcome::Count, 9, 50.0, 0.0, 0.05, Dgm::A, 1).is_err());
        assert!(Scenario::new(Design::Sim1, Outcome::Count, 10, 5.0, 0.0, 0.05, Dgm::A, 1).is_err());
        assert!(Scenario::new(Design::Sim1, Outcome::Count, 10, 50.0, 0.0, 1.0, Dgm::A, 1).is_err());
        assert!(Scenario::new(Design::Sim2, Outcome::Count, 10, 50.0, 0.0, 0.05, Dgm::A, 1).is_err());
        assert!(Scenario::new(Design::Sim1, Outcome::Count, 10, 50.0, 0.0, 0.05, Dgm::A, 5).is_err());
        assert!(Scenario::new(Design::Sim1, Outcome::Count, 10, 50.5, 0.0, 0.05, Dgm::A, 1).is_err());
    }

    #[test]
    fn ids_separate_fitted_models_but_share_data_keys() {
        let a = scenario(Design::Sim1, Dgm::D, 1);
        let b = scenario(Design::Sim1, Dgm::D, 3);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.data_key(), b.data_key());
        let s = Scenario::new(Design::Sensitivity, Outcome::Binary, 10, 50.0, 0.0, 0.05, Dgm::D, 1).unwrap();
        assert_eq!(s.prevalence_target, Some(SENSITIVITY_PREVALENCE));
    }

    #[test]
    fn names_parse() {
        assert_eq!("Sensitivity".parse::<Design>().unwrap(), Design::Sensitivity);
        assert_eq!("d".parse::<Dgm>().unwrap(), Dgm::D);
        assert!("ordinal".parse::<Outcome>().is_err());
    }
}
