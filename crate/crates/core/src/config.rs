//! The single declarative run configuration (TOML) covering every stage.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::ingest::{ScdSchema, StudyWeek};
use crate::labeler::RuleConfig;
use crate::taz::{LanduseClass, VoteConfig};

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub scd: Option<PathBuf>,
    pub platforms: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub taz: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    /// Ground truth from the synthetic generator, for recovery metrics.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub study_week_start: NaiveDate,
    pub schema: ScdSchema,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            study_week_start: StudyWeek::default().start,
            schema: ScdSchema::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub variance_floor: f64,
    pub n_init: usize,
}

impl Default for EmSection {
    fn default() -> Self {
        let d = EmConfig::default();
        EmSection {
            k: d.k,
            tol: d.tol,
            max_iter: d.max_iter,
            variance_floor: d.variance_floor,
            n_init: d.n_init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoiSection {
    pub radius_m: f64,
    /// Landmarks farther than this from every clustered platform are ignored.
    pub landmark_radius_m: f64,
}

impl Default for PoiSection {
    fn default() -> Self {
        PoiSection {
            radius_m: 500.0,
            landmark_radius_m: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TazSection {
    pub min_platforms: usize,
    pub min_support: u64,
    pub top_n: usize,
    pub accuracy_classes: Vec<LanduseClass>,
}

impl Default for TazSection {
    fn default() -> Self {
        let v = VoteConfig::default();
        TazSection {
            min_platforms: v.min_platforms,
            min_support: v.min_support,
            top_n: 50,
            accuracy_classes: vec![LanduseClass::Public, LanduseClass::Residential],
        }
    }
}

impl TazSection {
    pub fn vote(&self) -> VoteConfig {
        VoteConfig {
            min_platforms: self.min_platforms,
            min_support: self.min_support,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root of all randomness in a run.
    pub seed: u64,
    /// Worker threads; 0 picks one per core. Never changes outputs.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub inputs: Inputs,
    pub ingest: IngestSection,
    pub features: FeatureConfig,
    pub em: EmSection,
    pub poi: PoiSection,
    pub rules: RuleConfig,
    pub taz: TazSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            workers: 0,
            out_dir: None,
            inputs: Inputs::default(),
            ingest: IngestSection::default(),
            features: FeatureConfig::default(),
            em: EmSection::default(),
            poi: PoiSection::default(),
            rules: RuleConfig::default(),
            taz: TazSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.em.k == 0 {
            return bad("em.k must be at least 1");
        }
        if !(self.features.epsilon > 0.0) {
            return bad("features.epsilon must be positive");
        }
        if !(self.poi.radius_m > 0.0) {
            return bad("poi.radius_m must be positive");
        }
        if !(self.em.tol > 0.0) || self.em.max_iter == 0 {
            return bad("em.tol must be positive and em.max_iter at least 1");
        }
        if self.taz.top_n == 0 {
            return bad("taz.top_n must be at least 1");
        }
        crate::features::HourWindow::new(
            self.features.hour_window.first,
            self.features.hour_window.last,
        )?;
        Ok(())
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            k: self.em.k,
            seed: self.seed,
            tol: self.em.tol,
            max_iter: self.em.max_iter,
            variance_floor: self.em.variance_floor,
            n_init: self.em.n_init,
        }
    }

    pub fn week(&self) -> StudyWeek {
        StudyWeek {
            start: self.ingest.study_week_start,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(self.out_dir.as_deref().unwrap_or(Path::new("out")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved path of a required input; a config error names the field when
    /// it is unset or the file does not exist.
    pub fn require(&self, field: &'static str) -> Result<PathBuf> {
        self.optional(field)?
            .ok_or_else(|| Error::Config(format!("inputs.{field} is not set")))
    }

    /// Resolved path of an optional input; set but missing is still an error.
    pub fn optional(&self, field: &'static str) -> Result<Option<PathBuf>> {
        let raw = match field {
            "scd" => &self.inputs.scd,
            "platforms" => &self.inputs.platforms,
            "pois" => &self.inputs.pois,
            "taz" => &self.inputs.taz,
            "landmarks" => &self.inputs.landmarks,
            "truth" => &self.inputs.truth,
            _ => unreachable!("unknown input field {field}"),
        };
        let Some(raw) = raw else { return Ok(None) };
        let path = self.resolve(raw);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "inputs.{field}: file not found: {}",
                path.display()
            )));
        }
        Ok(Some(path))
    }

    /// Settings that determine outputs: everything except thread count and
    /// output location.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("workers");
            o.remove("out_dir");
        }
        v
    }
}
