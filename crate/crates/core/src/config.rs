//! Run configuration file: one TOML table per mode. Every key is optional;
//! command-line flags take precedence over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Statistic, VarianceMethod};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub test: TestSection,
    pub montecarlo: MonteCarloSection,
    pub power: PowerSection,
    pub densities: DensitySection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    pub panel: Option<PathBuf>,
    pub instruments: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub stats: Option<Vec<Statistic>>,
    pub var_methods: Option<Vec<VarianceMethod>>,
    pub draws: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub k_star: Option<usize>,
    pub subsample_m: Option<usize>,
    pub subsample_b: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub dgp: Option<u8>,
    pub grid: Option<PathBuf>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerSection {
    pub t_minus_k: Option<usize>,
    pub alpha: Option<f64>,
    pub a_max: Option<f64>,
    pub grid_points: Option<usize>,
    pub eta_star: Option<f64>,
    pub phi: Option<f64>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    pub family: Option<String>,
    /// `START:END:POINTS`.
    pub grid: Option<String>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a file; relative paths inside it are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text).map_err(|e| e.context(path.display().to_string()))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.test.panel);
        fix(&mut self.test.instruments);
        fix(&mut self.test.out);
        fix(&mut self.montecarlo.grid);
        fix(&mut self.montecarlo.out);
        fix(&mut self.power.out);
        fix(&mut self.densities.out);
    }
}
