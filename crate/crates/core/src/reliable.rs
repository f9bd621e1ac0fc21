//! Reliable memory: a small store of confident pseudo query/gallery pairs
//! supplying the alignment targets and the entropy threshold `E_m`.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::{argmax, entropy, softmax_in_place, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::losses::cross_covariance;

/// Smallest threshold ever handed out, so `E_m > 0` holds even when every
/// stored entropy is zero or the gallery has a single item.
const MIN_E_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoPositive {
    pub query_index: usize,
    pub gallery_index: usize,
}

/// A pseudo-positive with the entropy of its refined row (lower is more
/// confident).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub pair: PseudoPositive,
    pub confidence: f64,
}

/// Per row: argmax gallery item of the refined scores (lowest index on ties)
/// and the entropy of `softmax(row / τ)`.
pub fn select_pseudo_positives(refined: &SimilarityMatrix, tau: f64) -> Vec<Selection> {
    refined
        .scores
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut p = row.to_vec();
            softmax_in_place(&mut p, 1.0 / tau);
            Selection {
                pair: PseudoPositive {
                    query_index: i,
                    gallery_index: argmax(row),
                },
                confidence: entropy(&p),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmEntry {
    pub query: Array1<f64>,
    pub gallery: Array1<f64>,
    pub entropy: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmConfig {
    pub capacity: usize,
    /// `E_m = kappa · mean stored entropy`.
    pub kappa: f64,
    /// Fallback `E_m = lambda · ln N_G` while fewer than two entries exist.
    pub lambda: f64,
}

impl Default for RmConfig {
    fn default() -> Self {
        Self {
            capacity: 16,
            kappa: 1.0,
            lambda: 0.5,
        }
    }
}

impl RmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("reliable memory capacity must be positive".into()));
        }
        if !(self.kappa > 0.0) || !(self.lambda > 0.0) {
            return Err(Error::Config("kappa and lambda must be positive".into()));
        }
        Ok(())
    }
}

/// Statistics of the current batch, used as targets while the memory is too
/// small to provide its own (making the alignment losses vanish).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStatistics {
    pub gap: f64,
    pub cov: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmTargets {
    pub gap: f64,
    pub cov: Array2<f64>,
    pub e_m: f64,
    /// True when the batch fallback was used.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct ReliableMemory {
    entries: Vec<RmEntry>,
    config: RmConfig,
}

impl ReliableMemory {
    pub fn new(config: RmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            entries: Vec::with_capacity(config.capacity),
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RmEntry] {
        &self.entries
    }

    pub fn config(&self) -> &RmConfig {
        &self.config
    }

    pub fn mean_entropy(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(|e| e.entropy).sum::<f64>() / self.entries.len() as f64)
    }

    /// Merges candidates and keeps the `capacity` lowest-entropy entries,
    /// preferring newer steps on ties.
    pub fn update(&mut self, candidates: impl IntoIterator<Item = RmEntry>) {
        self.entries.extend(candidates);
        self.entries
            .sort_by(|a, b| a.entropy.total_cmp(&b.entropy).then(b.step.cmp(&a.step)));
        self.entries.truncate(self.config.capacity);
    }

    /// Targets for the alignment losses and the entropy threshold.
    pub fn targets(&self, n_gallery: usize, batch: &BatchStatistics) -> RmTargets {
        if self.entries.len() < 2 {
            let e_m = (self.config.lambda * (n_gallery as f64).ln()).max(MIN_E_M);
            return RmTargets {
                gap: batch.gap,
                cov: batch.cov.clone(),
                e_m,
                fallback: true,
            };
        }
        let queries = self.stack(|e| &e.query);
        let gallery = self.stack(|e| &e.gallery);
        let diff = queries.mean_axis(Axis(0)).expect("non-empty") - gallery.mean_axis(Axis(0)).expect("non-empty");
        let cov = cross_covariance(queries.view(), gallery.view()).expect("at least two entries");
        let mean_entropy = self.mean_entropy().expect("non-empty");
        RmTargets {
            gap: diff.dot(&diff).sqrt(),
            cov,
            e_m: (self.config.kappa * mean_entropy).max(MIN_E_M),
            fallback: false,
        }
    }

    fn stack(&self, field: impl Fn(&RmEntry) -> &Array1<f64>) -> Array2<f64> {
        let d = field(&self.entries[0]).len();
        let mut out = Array2::zeros((self.entries.len(), d));
        for (mut row, e) in out.rows_mut().into_iter().zip(&self.entries) {
            row.assign(field(e));
        }
        out
    }
}
