//! Run configuration as a flat key-value file (TOML syntax, one `key = value`
//! per line). Every setting can come from three layers, highest first:
//! command-line flag, config file, built-in default.
//!
//! ```text
//! queries = "queries.hatv"
//! gallery = "gallery.hatv"
//! task = "v2t"
//! batch_size = 16
//! tau = 0.02
//! lr = 3e-4
//! alpha = 100.0
//! ```
//!
//! Relative paths in a file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::TaskMode;
use crate::pipeline::StreamConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub queries: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    /// File with one gallery index per query; identity when absent.
    pub ground_truth: Option<PathBuf>,
    pub task: Option<TaskMode>,
    pub batch_size: Option<usize>,
    pub tau: Option<f64>,
    pub t: Option<f64>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub m: Option<f64>,
    pub memory: Option<usize>,
    pub rm_capacity: Option<usize>,
    pub kappa: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub hub_k: Option<usize>,
    pub rank_after_update: Option<bool>,
    /// Provenance of generated data; informational.
    pub generator: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        ConfigLayer { $($field: $top.$field.or($base.$field)),* }
    };
}

impl ConfigLayer {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut layer = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut layer.queries, &mut layer.gallery, &mut layer.ground_truth]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(layer)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `self` wins wherever it has a value.
    pub fn over(self, base: ConfigLayer) -> ConfigLayer {
        let top = self;
        overlay!(base, top;
            queries, gallery, ground_truth, task, batch_size, tau, t, lr, weight_decay,
            alpha, beta, m, memory, rm_capacity, kappa, lambda, seed, hub_k,
            rank_after_update, generator,
        )
    }

    /// Fills unset values from the defaults of the (possibly overridden)
    /// task mode; the learning-rate default depends on the mode.
    pub fn stream_config(&self) -> Result<StreamConfig> {
        let mut c = StreamConfig::for_mode(self.task.unwrap_or_default());
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.tau {
            c.loss.tau = v;
        }
        if let Some(v) = self.t {
            c.loss.uniformity.temperature = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.weight_decay {
            c.adam.weight_decay = v;
        }
        if let Some(v) = self.alpha {
            c.hsm.alpha = v;
        }
        if let Some(v) = self.beta {
            c.hsm.beta = v;
        }
        if let Some(v) = self.m {
            c.hsm.m = v;
        }
        if let Some(v) = self.memory {
            c.hsm.capacity = v;
        }
        if let Some(v) = self.rm_capacity {
            c.rm.capacity = v;
        }
        if let Some(v) = self.kappa {
            c.rm.kappa = v;
        }
        if let Some(v) = self.lambda {
            c.rm.lambda = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.hub_k {
            c.hubness.k = v;
        }
        if let Some(v) = self.rank_after_update {
            c.rank_after_update = v;
        }
        c.validate()?;
        Ok(c)
    }
}
