//! Run configuration files.
//!
//! A TOML document with a `version = 1` header:
//!
//! ```toml
//! version = 1
//!
//! [population]            # exactly one of `file` or `[population.model]`
//! file = "units.csv"
//!
//! [design]
//! kind = "complete"       # complete | stratified | matched-pairs | cluster
//! n1 = 4                  # stratified: [design.treated] table; cluster: m1
//!
//! [study]
//! mode = "decomposition"  # decomposition | coverage | unbiasedness
//! n = 8
//! replications = 10000
//! alpha = 0.05
//! target = "tau"          # tau | tau_S
//! band = 3.0
//!
//! [run]
//! seed = 42
//! cap = 10000000
//! threads = 8
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::design::{Design, DEFAULT_CAP};
use crate::error::{Error, Result};
use crate::model::SuperPopulationModel;
use crate::study::{StudyConfig, StudyMode, Target};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSource {
    pub file: Option<PathBuf>,
    pub model: Option<SuperPopulationModel>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub mode: Option<StudyMode>,
    pub n: Option<usize>,
    pub replications: Option<usize>,
    pub alpha: Option<f64>,
    pub target: Option<Target>,
    pub band: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub cap: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub population: PopulationSource,
    pub design: Option<Design>,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            population: PopulationSource::default(),
            design: None,
            study: StudySection::default(),
            run: RunSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                cfg.version
            )));
        }
        if cfg.population.file.is_some() && cfg.population.model.is_some() {
            return Err(Error::Config(
                "[population] takes either `file` or a `model` table, not both".into(),
            ));
        }
        Ok(cfg)
    }

    /// Reads a config file; a relative `population.file` resolves against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(file), Some(dir)) = (&cfg.population.file, path.parent()) {
            if file.is_relative() {
                cfg.population.file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn cap(&self) -> u64 {
        self.run.cap.unwrap_or(DEFAULT_CAP)
    }

    /// The study this config describes. The design must be complete.
    pub fn study_config(&self) -> Result<StudyConfig> {
        let missing = |what: &str| Error::Config(format!("study requires {what}"));
        let model = self
            .population
            .model
            .clone()
            .ok_or_else(|| missing("a [population.model] table"))?;
        let n1 = match &self.design {
            Some(Design::Complete { n1 }) => *n1,
            Some(other) => {
                return Err(Error::Config(format!("study supports complete designs only, got {other}")))
            }
            None => return Err(missing("[design] with kind = \"complete\"")),
        };
        let defaults = StudyConfig::new(model, 2, 1, 0);
        let cfg = StudyConfig {
            n: self.study.n.ok_or_else(|| missing("study.n"))?,
            n1,
            mode: self.study.mode.unwrap_or(defaults.mode),
            replications: self.study.replications.unwrap_or(defaults.replications),
            alpha: self.study.alpha.unwrap_or(defaults.alpha),
            target: self.study.target.unwrap_or(defaults.target),
            band: self.study.band.unwrap_or(defaults.band),
            master_seed: self.run.seed.ok_or_else(|| missing("a seed (run.seed or --seed)"))?,
            cap: self.cap(),
            threads: self.run.threads,
            ..defaults
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
