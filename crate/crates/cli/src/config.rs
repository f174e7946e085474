//! Run configuration: a versioned TOML file describing a scenario grid.
//!
//! ```toml
//! version = 1
//! design = "sim1"
//! outcomes = ["binary", "count"]
//! k = [10, 20]
//! mean_size = [50, 100]
//! cv = [0, 0.75, 1.5]
//! icc = [0.001, 0.01, 0.05, 0.1, 0.2]
//! dgm = ["A", "B", "C", "D"]
//! fitted_model = [1, 2, 3, 4]
//! n_reps = 1000
//! master_seed = 20240101
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crt_glmm::sim::{Design, Dgm, Outcome, Scenario};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

fn default_output_dir() -> String {
    "results".into()
}

fn default_alpha() -> f64 {
    crt_glmm::harness::DEFAULT_ALPHA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub design: String,
    pub outcomes: Vec<String>,
    pub k: Vec<usize>,
    pub mean_size: Vec<f64>,
    pub cv: Vec<f64>,
    pub icc: Vec<f64>,
    pub dgm: Vec<String>,
    pub fitted_model: Vec<u8>,
    pub n_reps: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Binary prevalence target; only meaningful for the sensitivity design.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prevalence_target: Option<f64>,
    /// Written by `simulate`; ignored when the manifest is read back as a config.
    #[serde(default, skip_serializing)]
    pub manifest: Option<ManifestSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSection {
    pub config_hash: String,
    pub tool_version: String,
    pub master_seed: u64,
    pub n_scenarios: usize,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<String>,
    pub alpha: Option<f64>,
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::input(format!("config key `{key}`: {msg}"))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::input(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(r) = o.reps {
            self.n_reps = r;
        }
        if let Some(t) = o.threads {
            self.parallelism = t;
        }
        if let Some(out) = &o.out {
            self.output_dir.clone_from(out);
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        self.validate()
    }

    pub fn design(&self) -> Result<Design, CliError> {
        self.design.parse().map_err(|e| invalid("design", e))
    }

    /// Checks every axis value on its own, then every grid cell.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", format!("unsupported version {}, expected {CONFIG_VERSION}", self.version)));
        }
        let design = self.design()?;
        for (key, empty) in [
            ("outcomes", self.outcomes.is_empty()),
            ("k", self.k.is_empty()),
            ("mean_size", self.mean_size.is_empty()),
            ("cv", self.cv.is_empty()),
            ("icc", self.icc.is_empty()),
            ("dgm", self.dgm.is_empty()),
            ("fitted_model", self.fitted_model.is_empty()),
        ] {
            if empty {
                return Err(invalid(key, "must list at least one value"));
            }
        }
        for o in &self.outcomes {
            o.parse::<Outcome>().map_err(|e| invalid("outcomes", e))?;
        }
        for &k in &self.k {
            if k < 4 || k % 2 == 1 {
                return Err(invalid("k", format!("{k} is not an even number >= 4")));
            }
        }
        for &s in &self.mean_size {
            if !(s > 5.0 && s.is_finite()) {
                return Err(invalid("mean_size", format!("{s} must exceed 5")));
            }
        }
        for &cv in &self.cv {
            if !(cv >= 0.0 && cv.is_finite()) {
                return Err(invalid("cv", format!("{cv} must be >= 0")));
            }
        }
        if self.cv.contains(&0.0) {
            if let Some(s) = self.mean_size.iter().find(|s| s.fract() != 0.0) {
                return Err(invalid("mean_size", format!("{s} must be an integer when cv = 0 is on the grid")));
            }
        }
        for &icc in &self.icc {
            if !(icc > 0.0 && icc < 1.0) {
                return Err(invalid("icc", format!("{icc} must lie in (0, 1)")));
            }
        }
        for d in &self.dgm {
            let dgm: Dgm = d.parse().map_err(|e| invalid("dgm", e))?;
            if !design.allowed_dgms().contains(&dgm) {
                return Err(invalid("dgm", format!("{dgm} is not available in design {design}")));
            }
        }
        for &m in &self.fitted_model {
            if !(1..=4).contains(&m) {
                return Err(invalid("fitted_model", format!("{m} must be 1-4")));
            }
        }
        if self.n_reps == 0 {
            return Err(invalid("n_reps", "must be at least 1"));
        }
        if i64::try_from(self.master_seed).is_err() {
            return Err(invalid("master_seed", "must fit in a signed 64-bit integer"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid("alpha", format!("{} must lie in (0, 1)", self.alpha)));
        }
        if let Some(p) = self.prevalence_target {
            if design != Design::Sensitivity {
                return Err(invalid("prevalence_target", "only the sensitivity design takes a prevalence target"));
            }
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid("prevalence_target", format!("{p} must lie in (0, 1)")));
            }
        }
        self.scenarios().map(|_| ())
    }

    /// Cartesian product of the axes, outcome slowest and fitted model fastest.
    pub fn scenarios(&self) -> Result<Vec<Scenario>, CliError> {
        let design = self.design()?;
        let mut out = Vec::new();
        for o in &self.outcomes {
            let outcome: Outcome = o.parse().map_err(|e| invalid("outcomes", e))?;
            for &k in &self.k {
                for &s in &self.mean_size {
                    for &cv in &self.cv {
                        for &icc in &self.icc {
                            for d in &self.dgm {
                                let dgm: Dgm = d.parse().map_err(|e| invalid("dgm", e))?;
                                for &m in &self.fitted_model {
                                    let mut sc = Scenario::new(design, outcome, k, s, cv, icc, dgm, m)
                                        .map_err(|e| CliError::input(format!("invalid grid cell: {e}")))?;
                                    if let (Some(p), Outcome::Binary) = (self.prevalence_target, outcome) {
                                        sc.prevalence_target = Some(p);
                                    }
                                    out.push(sc);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// The configuration as TOML, without any manifest section.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Config plus a `[manifest]` table; loadable again with [`Self::load`].
    pub fn manifest(&self, n_scenarios: usize) -> String {
        let section = ManifestSection {
            config_hash: self.hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: self.master_seed,
            n_scenarios,
        };
        #[derive(Serialize)]
        struct Wrapper<'a> {
            manifest: &'a ManifestSection,
        }
        format!("{}\n{}", self.to_toml(), toml::to_string(&Wrapper { manifest: &section }).expect("manifest serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
version = 1
design = "sim1"
outcomes = ["binary"]
k = [10]
mean_size = [50]
cv = [0]
icc = [0.05]
dgm = ["D"]
fitted_model = [1, 2]
n_reps = 5
master_seed = 3
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.parallelism, 0);
        assert_eq!(cfg.scenarios().unwrap().len(), 2);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str(&format!("{BASE}colour = 1\n")).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("colour"), "{}", err.message);
    }

    #[test]
    fn bad_values_name_their_key() {
        for (from, to, key) in [
            ("k = [10]", "k = [9]", "k"),
            ("icc = [0.05]", "icc = [1.5]", "icc"),
            ("dgm = [\"D\"]", "dgm = [\"E\"]", "dgm"),
            ("version = 1", "version = 2", "version"),
            ("fitted_model = [1, 2]", "fitted_model = [5]", "fitted_model"),
            ("n_reps = 5", "n_reps = 0", "n_reps"),
        ] {
            let err = RunConfig::from_toml_str(&BASE.replace(from, to)).unwrap_err();
            assert!(err.message.contains(&format!("`{key}`")), "{}", err.message);
        }
        let sim2 = BASE.replace("sim1", "sim2").replace("\"D\"", "\"A\"");
        assert!(RunConfig::from_toml_str(&sim2).unwrap_err().message.contains("`dgm`"));
    }

    #[test]
    fn manifest_reads_back_as_the_same_config() {
        let cfg = RunConfig::from_toml_str(BASE).unwrap();
        let text = cfg.manifest(2);
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(back.manifest.unwrap().config_hash, cfg.hash());
    }
}
