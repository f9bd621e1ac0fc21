//! Hubness suppression memory.
//!
//! A FIFO of the `K − 1` most recent raw similarity matrices. Together with
//! the current batch it forms a window of `K` matrices whose concatenation
//! `S̄` drives a bilateral reweighting:
//!
//! ```text
//! W_gallery = softmax over rows    of α·S̄   (per gallery column)
//! W_query   = softmax over columns of β·S̄   (per query row)
//! Ŝ         = m·(S̄ ⊙ W_gallery) + (1 − m)·(S̄ ⊙ W_query)
//! ```
//!
//! Only the rows belonging to the current batch are returned. A gallery item
//! that scores highly against many recent queries spreads its column mass
//! thin, so its weight for any single query shrinks.

use std::collections::VecDeque;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::SimilarityMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsmConfig {
    /// Scale of the gallery-axis (column) softmax.
    pub alpha: f64,
    /// Scale of the query-axis (row) softmax.
    pub beta: f64,
    /// Blend weight of the gallery-centric term.
    pub m: f64,
    /// Window size `K`, counting the current batch.
    pub capacity: usize,
}

impl Default for HsmConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 10.0,
            m: 0.5,
            capacity: 100,
        }
    }
}

impl HsmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.m) {
            return Err(Error::Config(format!("m must lie in [0, 1], got {}", self.m)));
        }
        if self.capacity == 0 {
            return Err(Error::Config("memory capacity K must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sliding window of past similarity matrices for one stream.
#[derive(Debug, Clone)]
pub struct HubnessMemory {
    queue: VecDeque<SimilarityMatrix>,
    capacity: usize,
    n_gallery: usize,
}

impl HubnessMemory {
    /// Memory for a window of `capacity` matrices (so `capacity − 1` stored).
    pub fn new(capacity: usize, n_gallery: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory capacity K must be at least 1".into()));
        }
        if n_gallery == 0 {
            return Err(Error::Shape("gallery must be non-empty".into()));
        }
        Ok(Self {
            queue: VecDeque::with_capacity(capacity - 1),
            capacity,
            n_gallery,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_gallery(&self) -> usize {
        self.n_gallery
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Stored matrices, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &SimilarityMatrix> {
        self.queue.iter()
    }

    fn check(&self, s: &SimilarityMatrix) -> Result<()> {
        if s.n_gallery() != self.n_gallery {
            return Err(Error::GalleryMismatch {
                expected: self.n_gallery,
                got: s.n_gallery(),
            });
        }
        Ok(())
    }

    /// Appends `s`, evicting the oldest entry once `K − 1` are held.
    pub fn push(&mut self, s: SimilarityMatrix) -> Result<()> {
        self.check(&s)?;
        if self.capacity == 1 {
            return Ok(());
        }
        if self.queue.len() == self.capacity - 1 {
            self.queue.pop_front();
        }
        self.queue.push_back(s);
        Ok(())
    }

    /// `S̄`: the current batch followed by stored matrices, most recent first.
    pub fn aggregate(&self, current: &SimilarityMatrix) -> Result<SimilarityMatrix> {
        self.check(current)?;
        let mut views: Vec<ArrayView2<'_, f64>> = Vec::with_capacity(self.queue.len() + 1);
        views.push(current.scores.view());
        views.extend(self.queue.iter().rev().map(|s| s.scores.view()));
        let scores = concatenate(Axis(0), &views).expect("column counts checked");
        Ok(SimilarityMatrix {
            scores,
            batch_index: current.batch_index,
        })
    }
}

/// Per-column log-sum-exp pieces of `softmax_col(scale · s)`: (max, Σ exp).
fn column_softmax_stats(s: &Array2<f64>, scale: f64) -> (Array1<f64>, Array1<f64>) {
    let n = s.ncols();
    let mut max = Array1::from_elem(n, f64::NEG_INFINITY);
    for row in s.rows() {
        for (m, &x) in max.iter_mut().zip(row.iter()) {
            *m = m.max(x);
        }
    }
    let mut sum = Array1::zeros(n);
    for row in s.rows() {
        for ((acc, &x), &m) in sum.iter_mut().zip(row.iter()).zip(max.iter()) {
            *acc += ((x - m) * scale).exp();
        }
    }
    (max, sum)
}

/// Hub-suppressed scores for the current batch.
///
/// Memory is read, not modified; call [`HubnessMemory::push`] afterwards to
/// advance the window.
pub fn refine(current: &SimilarityMatrix, memory: &HubnessMemory, config: &HsmConfig) -> Result<SimilarityMatrix> {
    config.validate()?;
    let aggregated = memory.aggregate(current)?;
    let s_bar = &aggregated.scores;
    let (col_max, col_sum) = column_softmax_stats(s_bar, config.alpha);

    let b = current.n_rows();
    let mut out = Array2::zeros((b, current.n_gallery()));
    for (i, mut out_row) in out.rows_mut().into_iter().enumerate() {
        let row = s_bar.row(i);
        let row_max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let row_sum: f64 = row.iter().map(|&x| ((x - row_max) * config.beta).exp()).sum();
        for (j, o) in out_row.iter_mut().enumerate() {
            let x = row[j];
            let w_gallery = ((x - col_max[j]) * config.alpha).exp() / col_sum[j];
            let w_query = ((x - row_max) * config.beta).exp() / row_sum;
            *o = config.m * x * w_gallery + (1.0 - config.m) * x * w_query;
        }
    }
    Ok(SimilarityMatrix {
        scores: out,
        batch_index: current.batch_index,
    })
}

/// Memoryless baseline: `s ⊙ softmax_col(scale · s)`.
pub fn dsl_rerank(s: &SimilarityMatrix, scale: f64) -> Result<SimilarityMatrix> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    let (col_max, col_sum) = column_softmax_stats(&s.scores, scale);
    let mut out = s.scores.clone();
    for mut row in out.rows_mut() {
        for (j, x) in row.iter_mut().enumerate() {
            *x *= ((*x - col_max[j]) * scale).exp() / col_sum[j];
        }
    }
    Ok(SimilarityMatrix {
        scores: out,
        batch_index: s.batch_index,
    })
}
