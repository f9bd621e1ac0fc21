//! The online loop. Each batch takes two paths from one similarity matrix:
//! the retrieval path refines it with the hubness memory and ranks the
//! gallery; the adaptation path evaluates the combined objective and takes
//! one optimizer step on the query adapter. The batch is ranked with the
//! adapter state it entered with, so the update only affects later batches.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::adapter::{apply_adapter, AdamConfig, AdapterParams};
use crate::diagnostics::{hubness_report, HubnessConfig, HubnessReport};
use crate::embedding::{cosine_similarity, entropy, l2_normalize, EmbeddingSet, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::hsm::{refine, HsmConfig, HubnessMemory};
use crate::losses::{
    batch_gap, correspondence_probabilities, frame_cross_covariance, total_loss, LossBreakdown, LossConfig, LossInputs,
    TaskMode,
};
use crate::reliable::{select_pseudo_positives, BatchStatistics, ReliableMemory, RmConfig, RmEntry};
use crate::synth::PairedDataset;

pub const DEFAULT_LR_V2T: f64 = 3e-4;
pub const DEFAULT_LR_T2V: f64 = 3e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub batch_size: usize,
    pub loss: LossConfig,
    pub lr: f64,
    pub adam: AdamConfig,
    pub hsm: HsmConfig,
    pub rm: RmConfig,
    pub seed: u64,
    /// Rank each batch with the post-step adapter instead (ablation).
    pub rank_after_update: bool,
    pub hubness: HubnessConfig,
    pub recall_ks: Vec<usize>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self::for_mode(TaskMode::V2t)
    }
}

impl StreamConfig {
    pub fn for_mode(mode: TaskMode) -> Self {
        Self {
            batch_size: 16,
            loss: LossConfig {
                mode,
                ..LossConfig::default()
            },
            lr: match mode {
                TaskMode::V2t => DEFAULT_LR_V2T,
                TaskMode::T2v => DEFAULT_LR_T2V,
            },
            adam: AdamConfig::default(),
            hsm: HsmConfig::default(),
            rm: RmConfig::default(),
            seed: 42,
            rank_after_update: false,
            hubness: HubnessConfig::default(),
            recall_ks: vec![1, 5, 10],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.loss.tau > 0.0) || !(self.loss.uniformity.temperature > 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.hubness.k == 0 {
            return Err(Error::Config("hubness k must be positive".into()));
        }
        if self.recall_ks.contains(&0) {
            return Err(Error::Config("recall K values must be positive".into()));
        }
        self.hsm.validate()?;
        self.rm.validate()
    }
}

/// Mutable state of one stream.
#[derive(Debug, Clone)]
pub struct StreamState {
    pub params: AdapterParams,
    pub memory: HubnessMemory,
    pub reliable: ReliableMemory,
    pub step: usize,
}

impl StreamState {
    pub fn new(config: &StreamConfig, dim: usize, n_gallery: usize) -> Result<Self> {
        Ok(Self {
            params: AdapterParams::identity(dim),
            memory: HubnessMemory::new(config.hsm.capacity, n_gallery)?,
            reliable: ReliableMemory::new(config.rm)?,
            step: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub batch_index: usize,
    /// Full gallery permutations from the refined scores.
    pub rankings: Vec<Vec<usize>>,
    /// Same from the unrefined scores.
    pub raw_rankings: Vec<Vec<usize>>,
    pub loss: LossBreakdown,
    /// Adapter fingerprint after this batch's update.
    pub adapter_hash: String,
    /// Entropy of each row's correspondence distribution.
    pub entropies: Vec<f64>,
    pub pseudo_positives: Vec<usize>,
    pub rm_fallback: bool,
    pub rm_len: usize,
    pub e_m: f64,
}

fn similarity(adapted: &EmbeddingSet, gallery: &EmbeddingSet, step: usize) -> Result<SimilarityMatrix> {
    let mut s = cosine_similarity(adapted, gallery)?;
    s.batch_index = step;
    Ok(s)
}

/// One online step. `gallery` must already be unit-normalized.
pub fn process_batch(
    state: &mut StreamState,
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    config: &StreamConfig,
) -> Result<BatchResult> {
    let step = state.step;
    let mode = config.loss.mode;

    // (1)-(3) adapted embeddings, raw and refined similarities
    let adapted = apply_adapter(&state.params, queries)?;
    let s_t = similarity(&adapted.embeddings, gallery, step)?;
    let refined = refine(&s_t, &state.memory, &config.hsm)?;

    // (4) hubness-aware pseudo-positives feed the reliable memory
    let selections = select_pseudo_positives(&refined, config.loss.tau);
    let global = adapted.embeddings.data();
    let gallery_rows = gallery.data();
    let pseudo_idx: Vec<usize> = selections.iter().map(|s| s.pair.gallery_index).collect();
    let pseudo_gallery = gallery_rows.select(Axis(0), &pseudo_idx);
    state.reliable.update(selections.iter().map(|s| RmEntry {
        query: global.row(s.pair.query_index).to_owned(),
        gallery: gallery_rows.row(s.pair.gallery_index).to_owned(),
        entropy: s.confidence,
        step,
    }));

    let frames = adapted.frames();
    let (b, t, d) = frames.dim();
    let batch_cov = if mode == TaskMode::V2t && b * t >= 2 {
        frame_cross_covariance(frames.view(), pseudo_gallery.view())?
    } else {
        Array2::zeros((d, d))
    };
    let batch = BatchStatistics {
        gap: batch_gap(global.view(), pseudo_gallery.view()),
        cov: batch_cov,
    };
    let targets = state.reliable.targets(gallery.len(), &batch);

    // (5) objective, gradient through the adapter, one optimizer step
    let inputs = LossInputs {
        global: global.view(),
        frames: (mode == TaskMode::V2t).then(|| frames.view()),
        pseudo_gallery: pseudo_gallery.view(),
        gallery: gallery_rows.view(),
        target_gap: targets.gap,
        target_cov: targets.cov.view(),
        e_m: targets.e_m,
    };
    let (loss, breakdown) = total_loss(&inputs, &config.loss)?;
    let grad = adapted.backprop(&loss.grad_global, loss.grad_frames.as_ref());
    state.params.step(&grad, config.lr, &config.adam);

    let entropies = correspondence_probabilities(global.view(), gallery_rows.view(), config.loss.tau)
        .rows()
        .into_iter()
        .map(|p| entropy(p.as_slice().expect("standard layout")))
        .collect();

    // (7) rankings, from the pre-step state unless the ablation asks otherwise
    let (rankings, raw_rankings) = if config.rank_after_update {
        let post = apply_adapter(&state.params, queries)?;
        let s_post = similarity(&post.embeddings, gallery, step)?;
        let r = refine(&s_post, &state.memory, &config.hsm)?;
        (r.rankings(), s_post.rankings())
    } else {
        (refined.rankings(), s_t.rankings())
    };

    // (6) the raw matrix joins the window for later batches
    state.memory.push(s_t)?;
    state.step += 1;

    Ok(BatchResult {
        batch_index: step,
        rankings,
        raw_rankings,
        loss: breakdown,
        adapter_hash: state.params.snapshot_hash(),
        entropies,
        pseudo_positives: pseudo_idx,
        rm_fallback: targets.fallback,
        rm_len: state.reliable.len(),
        e_m: targets.e_m,
    })
}

/// Per-batch entry of the stream timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_index: usize,
    pub size: usize,
    pub loss: LossBreakdown,
    pub mean_entropy: f64,
    pub e_m: f64,
    pub rm_len: usize,
    pub rm_fallback: bool,
    pub adapter_hash: String,
    /// Recall@1 over all queries seen so far, refined and raw paths.
    pub running_r1: f64,
    pub running_r1_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub config: StreamConfig,
    pub n_queries: usize,
    pub n_gallery: usize,
    pub n_batches: usize,
    pub recall: BTreeMap<usize, f64>,
    pub recall_raw: BTreeMap<usize, f64>,
    pub hubness: HubnessReport,
    pub hubness_raw: HubnessReport,
    pub final_adapter_hash: String,
    pub timeline: Vec<BatchRecord>,
}

/// Report plus the truncated ranking lists behind it, in query order.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub report: StreamReport,
    pub rankings: Vec<Vec<usize>>,
    pub raw_rankings: Vec<Vec<usize>>,
}

/// Single pass over `dataset` in batches of `config.batch_size`, in query
/// order.
pub fn run_stream(dataset: &PairedDataset, config: &StreamConfig) -> Result<StreamOutcome> {
    config.validate()?;
    let queries = &dataset.queries;
    if queries.is_empty() || dataset.gallery.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.ground_truth.len() != queries.len() {
        return Err(Error::MissingGroundTruth(dataset.ground_truth.len().min(queries.len())));
    }
    if queries.dim() != dataset.gallery.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.gallery.dim(),
            got: queries.dim(),
        });
    }
    let gallery = l2_normalize(&dataset.gallery)?;
    let n_gallery = gallery.len();
    if let Some(&bad) = dataset.ground_truth.iter().find(|&&g| g >= n_gallery) {
        return Err(Error::Config(format!(
            "ground-truth index {bad} outside gallery of {n_gallery}"
        )));
    }
    let keep = config
        .recall_ks
        .iter()
        .copied()
        .chain([config.hubness.k])
        .max()
        .unwrap_or(1)
        .min(n_gallery);

    let mut state = StreamState::new(config, queries.dim(), n_gallery)?;
    let mut rankings = Vec::with_capacity(queries.len());
    let mut raw_rankings = Vec::with_capacity(queries.len());
    let mut timeline = Vec::new();
    let (mut hits, mut hits_raw) = (0usize, 0usize);

    let mut start = 0;
    while start < queries.len() {
        let end = (start + config.batch_size).min(queries.len());
        let batch = queries.slice_rows(start, end);
        let result = process_batch(&mut state, &batch, &gallery, config)?;
        for (offset, (r, raw)) in result.rankings.iter().zip(&result.raw_rankings).enumerate() {
            let truth = dataset.ground_truth[start + offset];
            hits += usize::from(r[0] == truth);
            hits_raw += usize::from(raw[0] == truth);
            rankings.push(r[..keep].to_vec());
            raw_rankings.push(raw[..keep].to_vec());
        }
        let seen = end as f64;
        timeline.push(BatchRecord {
            batch_index: result.batch_index,
            size: end - start,
            loss: result.loss,
            mean_entropy: result.entropies.iter().sum::<f64>() / result.entropies.len() as f64,
            e_m: result.e_m,
            rm_len: result.rm_len,
            rm_fallback: result.rm_fallback,
            adapter_hash: result.adapter_hash,
            running_r1: 100.0 * hits as f64 / seen,
            running_r1_raw: 100.0 * hits_raw as f64 / seen,
        });
        start = end;
    }

    let gt = &dataset.ground_truth[..];
    let hubness = hubness_report(&rankings, n_gallery, &config.hubness, Some(gt), &config.recall_ks)?;
    let hubness_raw = hubness_report(&raw_rankings, n_gallery, &config.hubness, Some(gt), &config.recall_ks)?;
    let report = StreamReport {
        config: config.clone(),
        n_queries: queries.len(),
        n_gallery,
        n_batches: timeline.len(),
        recall: hubness.recall_at.clone(),
        recall_raw: hubness_raw.recall_at.clone(),
        hubness,
        hubness_raw,
        final_adapter_hash: state.params.snapshot_hash(),
        timeline,
    };
    Ok(StreamOutcome {
        report,
        rankings,
        raw_rankings,
    })
}
