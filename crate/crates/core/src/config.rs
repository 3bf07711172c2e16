//! Run configuration, read from one TOML file per run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariance::Component;
use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec, Prior, INTERCEPT};
use crate::search::{AcceptRule, Acceptance, SearchConfig};
use crate::synth::{ReefParams, RiverParams};
use crate::utility::{PosteriorMethod, Summary};
use crate::windows::Normalisation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    River,
    Reef,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub edges: Option<PathBuf>,
    pub sites: Option<PathBuf>,
    pub neighbourhoods: Option<PathBuf>,
    pub reef: Option<PathBuf>,
    /// Design the windows are added to or built around.
    pub current_design: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default)]
    pub river: RiverParams,
    #[serde(default)]
    pub reef: ReefParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Option<Family>,
    pub fixed_effects: Option<Vec<String>>,
    pub components: Option<Vec<Component>>,
    pub trials: Option<u64>,
    pub marginal_draws: Option<usize>,
    #[serde(default)]
    pub method: PosteriorMethod,
    #[serde(default)]
    pub priors: BTreeMap<String, Prior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReefSection {
    pub grid: [usize; 2],
    pub length: f64,
    pub spacing: f64,
    /// Candidate midpoints per axis, spread evenly inside the reef.
    pub midpoint_grid: [usize; 2],
    /// Candidate angles in degrees.
    pub angles: Vec<f64>,
}

impl Default for ReefSection {
    fn default() -> Self {
        Self { grid: [10, 10], length: 500.0, spacing: 5.0, midpoint_grid: [3, 3], angles: vec![0.0, 45.0, 90.0, 135.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub gamma: usize,
    /// Exchangeable site ids; all non-existing sites when absent.
    pub candidates: Option<Vec<u64>>,
    /// Sites already sampled, kept in every design.
    pub existing: Vec<u64>,
    pub k: usize,
    pub t: usize,
    pub m: usize,
    pub b: usize,
    pub b_final: usize,
    pub acceptance: Acceptance,
    pub summary: Summary,
    pub rule: AcceptRule,
    pub crn: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        let c = SearchConfig::default();
        Self {
            gamma: 3,
            candidates: None,
            existing: Vec::new(),
            k: c.k,
            t: c.t,
            m: c.m,
            b: c.b,
            b_final: c.b_final,
            acceptance: c.acceptance,
            summary: c.summary,
            rule: c.rule,
            crn: c.crn,
        }
    }
}

impl SearchSection {
    pub fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            k: self.k,
            t: self.t,
            m: self.m,
            b: self.b,
            b_final: self.b_final,
            acceptance: self.acceptance,
            summary: self.summary,
            rule: self.rule,
            crn: self.crn,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormalisationMode {
    #[default]
    Argmax,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowsSection {
    pub m: usize,
    /// Neighbourhood names (river); all in file order when empty.
    pub windows: Vec<String>,
    pub train_levels: usize,
    pub predict_levels: usize,
    pub thresholds: Vec<f64>,
    pub normalisation: NormalisationMode,
    /// Baseline utility; estimated from the current design when absent.
    pub baseline: Option<f64>,
    pub replicates: usize,
    /// Largest transect radius (reef).
    pub r_max: f64,
    pub zeta_levels: usize,
}

impl Default for WindowsSection {
    fn default() -> Self {
        Self {
            m: 30,
            windows: Vec::new(),
            train_levels: 5,
            predict_levels: 21,
            thresholds: vec![0.8, 0.9, 0.95, 0.99],
            normalisation: NormalisationMode::Argmax,
            baseline: None,
            replicates: 3,
            r_max: 50.0,
            zeta_levels: 9,
        }
    }
}

impl WindowsSection {
    pub fn normalisation(&self, baseline: f64) -> Normalisation {
        match self.normalisation {
            NormalisationMode::Argmax => Normalisation::Argmax,
            NormalisationMode::Baseline => Normalisation::Baseline(baseline),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    pub designs: usize,
    pub design_size: usize,
    pub m: usize,
    pub mh_iterations: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { designs: 20, design_size: 4, m: 20, mh_iterations: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    pub port: u16,
    pub surface: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self { port: 8080, surface: None }
    }
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub data: DataFiles,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub reef: ReefSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub windows: WindowsSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub serve: ServeSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.base = base.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file and returns it with its raw bytes.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::parse(&text, &base)?, bytes))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Resolved path of a required data file; missing entries and files are errors.
    pub fn data_file(&self, field: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        let p = value.as_ref().ok_or_else(|| Error::Config(format!("data.{field} is required for this command")))?;
        let full = self.resolve(p);
        if !full.exists() {
            return Err(Error::MissingFile(full));
        }
        Ok(full)
    }

    /// Collects every problem before reporting.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if let Err(e) = self.model_spec() {
            problems.push(e.to_string());
        }
        let s = &self.search;
        if s.gamma < 1 {
            problems.push("search.gamma must be at least 1".into());
        }
        if let Err(Error::Config(msg)) = s.search_config(self.seed).validate() {
            problems.extend(msg.split("; ").map(|m| format!("search.{m}")));
        }
        let w = &self.windows;
        if w.m < 1 {
            problems.push("windows.m must be at least 1".into());
        }
        if w.train_levels < 2 {
            problems.push("windows.train_levels must be at least 2".into());
        }
        if w.predict_levels < 2 {
            problems.push("windows.predict_levels must be at least 2".into());
        }
        if !(w.r_max >= 0.0) {
            problems.push("windows.r_max must be non-negative".into());
        }
        if matches!(w.baseline, Some(b) if !(b > 0.0)) {
            problems.push("windows.baseline must be positive".into());
        }
        let v = &self.validate;
        if v.designs < 3 || v.design_size < 1 || v.m < 1 || v.mh_iterations < 10 {
            problems.push("validate needs designs >= 3, design_size >= 1, m >= 1 and mh_iterations >= 10".into());
        }
        let r = &self.reef;
        if r.grid.contains(&0) || r.midpoint_grid.contains(&0) || r.angles.is_empty() {
            problems.push("reef grids need positive sizes and at least one angle".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n  ")))
        }
    }

    /// Model with the configured family, effects and priors on top of
    /// per-problem defaults.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let (family, effects, comps, range) = match self.problem {
            ProblemKind::River => (Family::Gaussian, vec![INTERCEPT, "elevation", "air_temp"], vec![Component::TailDown], 2000.0f64),
            ProblemKind::Reef => (Family::Binomial, vec![INTERCEPT, "depth"], vec![Component::Euclidean], 500.0),
        };
        let mut spec = ModelSpec::new(
            m.family.unwrap_or(family),
            m.fixed_effects.clone().unwrap_or_else(|| effects.iter().map(|s| s.to_string()).collect()),
            m.components.clone().unwrap_or(comps),
        )?;
        if let Some(t) = m.trials {
            spec.trials = t;
        }
        if let Some(d) = m.marginal_draws {
            if d < 1 {
                return Err(Error::Config("model.marginal_draws must be at least 1".into()));
            }
            spec.marginal_draws = d;
        }
        // ranges default to the scale of the problem's distances
        let comps = spec.components.clone();
        for c in comps {
            spec.set_prior(&format!("{}.range", c.tag()), Prior::Lognormal { meanlog: range.ln(), sdlog: 0.5 })?;
        }
        spec.set_priors(&m.priors)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_river_config() {
        let c = Config::parse("problem = \"river\"\n", Path::new("/tmp")).unwrap();
        assert_eq!(c.seed, 1);
        let spec = c.model_spec().unwrap();
        assert_eq!(spec.family, Family::Gaussian);
        assert_eq!(spec.components, vec![Component::TailDown]);
        assert_eq!(c.resolve(Path::new("a.csv")), PathBuf::from("/tmp/a.csv"));
    }

    #[test]
    fn full_config() {
        let text = r#"
problem = "reef"
seed = 9
[data]
reef = "reef.csv"
[model]
components = ["euc"]
trials = 10
priors = { "beta.depth" = { dist = "normal", mean = 0.0, sd = 0.0 } }
[search]
gamma = 2
k = 2
acceptance = "ace"
summary = "mean"
[windows]
normalisation = "baseline"
baseline = 1.5
"#;
        let c = Config::parse(text, Path::new(".")).unwrap();
        let spec = c.model_spec().unwrap();
        assert_eq!(spec.trials, 10);
        assert!(!spec.free_params().any(|p| p.name == "beta.depth"));
        assert_eq!(c.search.search_config(3).acceptance, Acceptance::Ace);
        assert_eq!(c.windows.normalisation(1.5), Normalisation::Baseline(1.5));
    }

    #[test]
    fn all_problems_reported_together() {
        let text = "problem = \"river\"\n[search]\ngamma = 0\nb = 1\n[windows]\nm = 0\n";
        let msg = Config::parse(text, Path::new(".")).unwrap_err().to_string();
        assert!(msg.contains("gamma") && msg.contains("search.b must") && msg.contains("windows.m"), "{msg}");
        assert!(Config::parse("problem = \"river\"\nbogus = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn missing_data_file_is_named() {
        let c = Config::parse("problem = \"river\"\n[data]\nedges = \"nope.csv\"\n", Path::new("/nonexistent")).unwrap();
        match c.data_file("edges", &c.data.edges) {
            Err(Error::MissingFile(p)) => assert_eq!(p, PathBuf::from("/nonexistent/nope.csv")),
            other => panic!("{other:?}"),
        }
    }
}
