//! Dense embedding containers and the numeric primitives shared by every
//! other module: normalization, pooling, cosine similarity, tempered softmax
//! and Shannon entropy.
//!
//! All arithmetic is carried out in `f64`. Softmax temperatures are always
//! passed as *multiplicative* scale factors: a caller wanting `softmax(x / τ)`
//! passes `1.0 / τ`.

use ndarray::{Array2, Array3, ArrayView1, ArrayViewMut1, Axis};

use crate::error::{Error, Result};

/// Rows whose Euclidean norm falls below this are rejected by [`l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// `N×D` global embeddings, optionally backed by `N×T×D` frame features.
///
/// When frames are present, `data` is their mean over the frame axis (or that
/// mean re-normalized, after [`l2_normalize`]).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Array2<f64>,
    frames: Option<Array3<f64>>,
    ids: Option<Vec<String>>,
}

impl EmbeddingSet {
    /// Global-only embeddings.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!("embedding matrix must be non-empty, got {n}x{d}")));
        }
        Ok(Self {
            data,
            frames: None,
            ids: None,
        })
    }

    /// Frame-level embeddings; the global rows are the frame means.
    pub fn from_frames(frames: Array3<f64>) -> Result<Self> {
        let (n, t, d) = frames.dim();
        if n == 0 || t == 0 || d == 0 {
            return Err(Error::Shape(format!("frame tensor must be non-empty, got {n}x{t}x{d}")));
        }
        let data = mean_pool(&frames);
        Ok(Self {
            data,
            frames: Some(frames),
            ids: None,
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::Shape(format!("{} ids for {} embeddings", ids.len(), self.len())));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Frames per item; 1 when the set is global-only.
    pub fn n_frames(&self) -> usize {
        self.frames.as_ref().map_or(1, |f| f.dim().1)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn frames(&self) -> Option<&Array3<f64>> {
        self.frames.as_ref()
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Frame tensor, or the global rows viewed as single-frame items.
    pub fn frames_or_global(&self) -> Array3<f64> {
        match &self.frames {
            Some(f) => f.clone(),
            None => self.data.clone().insert_axis(Axis(1)),
        }
    }

    /// Rows `range` as a new set (frames and ids follow).
    pub fn slice_rows(&self, start: usize, end: usize) -> EmbeddingSet {
        let data = self.data.slice(ndarray::s![start..end, ..]).to_owned();
        let frames = self
            .frames
            .as_ref()
            .map(|f| f.slice(ndarray::s![start..end, .., ..]).to_owned());
        let ids = self.ids.as_ref().map(|ids| ids[start..end].to_vec());
        EmbeddingSet { data, frames, ids }
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> EmbeddingSet {
        let data = self.data.select(Axis(0), indices);
        let frames = self.frames.as_ref().map(|f| f.select(Axis(0), indices));
        let ids = self
            .ids
            .as_ref()
            .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect());
        EmbeddingSet { data, frames, ids }
    }

    /// Replaces the global rows, e.g. with normalized pooled frames.
    pub(crate) fn with_global(mut self, data: Array2<f64>) -> Self {
        debug_assert_eq!(data.dim(), self.data.dim());
        self.data = data;
        self
    }

    pub fn into_parts(self) -> (Array2<f64>, Option<Array3<f64>>) {
        (self.data, self.frames)
    }
}

/// `B×N_G` similarity scores for the batch observed at step `batch_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub scores: Array2<f64>,
    pub batch_index: usize,
}

impl SimilarityMatrix {
    pub fn new(scores: Array2<f64>, batch_index: usize) -> Result<Self> {
        let (b, n) = scores.dim();
        if b == 0 || n == 0 {
            return Err(Error::Shape(format!(
                "similarity matrix must be non-empty, got {b}x{n}"
            )));
        }
        Ok(Self { scores, batch_index })
    }

    pub fn n_rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_gallery(&self) -> usize {
        self.scores.ncols()
    }

    /// Per-row gallery permutation, best score first.
    pub fn rankings(&self) -> Vec<Vec<usize>> {
        self.scores.rows().into_iter().map(|row| rank_descending(row)).collect()
    }
}

/// A categorical distribution over the gallery and its entropy in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    pub p: Vec<f64>,
    pub entropy: f64,
}

impl ProbabilityRow {
    /// `softmax(scale · logits)` together with its entropy.
    pub fn from_scores(scores: &[f64], scale: f64) -> Result<Self> {
        let p = softmax(scores, scale)?;
        let entropy = entropy(&p);
        Ok(Self { p, entropy })
    }
}

fn row_norm(row: ArrayView1<'_, f64>) -> f64 {
    row.dot(&row).sqrt()
}

fn normalize_row(mut row: ArrayViewMut1<'_, f64>, index: usize) -> Result<()> {
    let norm = row_norm(row.view());
    if !(norm >= MIN_NORM) {
        return Err(Error::ZeroNormRow(index));
    }
    row.mapv_inplace(|x| x / norm);
    Ok(())
}

/// Unit-normalizes every global row and, when present, every frame row.
pub fn l2_normalize(e: &EmbeddingSet) -> Result<EmbeddingSet> {
    let mut data = e.data.clone();
    for (i, row) in data.rows_mut().into_iter().enumerate() {
        normalize_row(row, i)?;
    }
    let frames = match &e.frames {
        Some(frames) => {
            let mut frames = frames.clone();
            for (i, mut item) in frames.outer_iter_mut().enumerate() {
                for row in item.rows_mut() {
                    normalize_row(row, i)?;
                }
            }
            Some(frames)
        }
        None => None,
    };
    Ok(EmbeddingSet {
        data,
        frames,
        ids: e.ids.clone(),
    })
}

/// Arithmetic mean over the frame axis: `N×T×D → N×D`.
pub fn mean_pool(frames: &Array3<f64>) -> Array2<f64> {
    let (n, t, d) = frames.dim();
    let mut out = Array2::zeros((n, d));
    for (i, item) in frames.outer_iter().enumerate() {
        let mut acc = out.row_mut(i);
        for f in item.rows() {
            acc += &f;
        }
        acc.mapv_inplace(|x| x / t as f64);
    }
    out
}

/// `scores[i][j] = ⟨q_i, g_j⟩`; equals cosine similarity for unit rows.
pub fn cosine_similarity(q: &EmbeddingSet, g: &EmbeddingSet) -> Result<SimilarityMatrix> {
    if q.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: q.dim(),
        });
    }
    SimilarityMatrix::new(q.data.dot(&g.data.t()), 0)
}

/// Tempered softmax `exp(scale·v_j) / Σ exp(scale·v_k)`, max-subtracted.
pub fn softmax(v: &[f64], scale: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Config(format!(
            "softmax scale must be positive and finite, got {scale}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out, scale);
    Ok(out)
}

/// In-place softmax over a finite slice. No validation.
pub(crate) fn softmax_in_place(v: &mut [f64], scale: f64) {
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = ((*x - max) * scale).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Shannon entropy `−Σ p ln p` in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Indices sorted by descending value; ties keep the lower index first.
pub fn rank_descending(row: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}
