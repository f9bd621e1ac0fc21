//! Seeded synthetic paired datasets and embedding-level query shifts.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`; the paired data
//! is drawn from stream 0 and shifts from stream 1, with Gaussian variates
//! from `rand_distr::StandardNormal`. The same seed therefore reproduces the
//! same dataset on every platform.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSet, MIN_NORM};
use crate::error::{Error, Result};

/// Generator description recorded in dataset manifests.
pub const GENERATOR: &str =
    "ChaCha8Rng::seed_from_u64(seed); stream 0 = paired data, stream 1 = shift; rand_distr::StandardNormal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    #[default]
    None,
    Gaussian,
    HubAttractor,
    FrameShuffle,
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ShiftKind::None),
            "gaussian" => Ok(ShiftKind::Gaussian),
            "hub_attractor" | "hub-attractor" => Ok(ShiftKind::HubAttractor),
            "frame_shuffle" | "frame-shuffle" => Ok(ShiftKind::FrameShuffle),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShiftKind::None => "none",
            ShiftKind::Gaussian => "gaussian",
            ShiftKind::HubAttractor => "hub_attractor",
            ShiftKind::FrameShuffle => "frame_shuffle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_items: usize,
    pub dim: usize,
    pub n_frames: usize,
    pub shift: ShiftKind,
    /// Gaussian: per-coordinate noise std. Hub attractor: blend weight.
    /// Frame shuffle: probability that an item's frames are permuted.
    pub strength: f64,
    pub n_hubs: usize,
    pub seed: u64,
    /// Norm-scale of the query-vs-gallery perturbation.
    pub jitter: f64,
    /// Norm-scale of the per-frame perturbation around the item query.
    pub frame_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_items: 256,
            dim: 32,
            n_frames: 4,
            shift: ShiftKind::None,
            strength: 0.0,
            n_hubs: 5,
            seed: 42,
            jitter: 0.5,
            frame_jitter: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.dim == 0 || self.n_frames == 0 {
            return Err(Error::Config("n_items, dim and n_frames must be positive".into()));
        }
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(Error::Config(format!("strength must be >= 0, got {}", self.strength)));
        }
        if !(self.jitter >= 0.0) || !(self.frame_jitter >= 0.0) {
            return Err(Error::Config("jitter values must be >= 0".into()));
        }
        if self.shift == ShiftKind::HubAttractor && self.n_hubs == 0 {
            return Err(Error::Config("hub_attractor needs n_hubs >= 1".into()));
        }
        Ok(())
    }
}

/// Queries (with frames), gallery, and the query → gallery ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub queries: EmbeddingSet,
    pub gallery: EmbeddingSet,
    pub ground_truth: Vec<usize>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal))
}

fn unit(mut v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm >= MIN_NORM {
        v /= norm;
    }
    v
}

fn unit_random(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = gaussian_vec(rng, dim);
        if v.dot(&v).sqrt() >= MIN_NORM {
            return unit(v);
        }
    }
}

/// Normalized frames plus normalized pooled global rows.
fn assemble(frames: Array3<f64>) -> Result<EmbeddingSet> {
    let mut frames = frames;
    for mut item in frames.outer_iter_mut() {
        for mut row in item.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if !(norm >= MIN_NORM) {
                return Err(Error::ZeroNormRow(0));
            }
            row /= norm;
        }
    }
    let pooled = frames.mean_axis(Axis(1)).expect("t >= 1");
    let mut global = pooled;
    for (i, mut row) in global.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= MIN_NORM) {
            return Err(Error::ZeroNormRow(i));
        }
        row /= norm;
    }
    let set = EmbeddingSet::from_frames(frames)?;
    Ok(set.with_global(global))
}

/// Gallery rows i.i.d. standard normal, normalized; query `i` is gallery `i`
/// plus jitter, expanded into frames with per-frame jitter. Ground truth is
/// the identity.
pub fn make_paired(spec: &SynthSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let mut rng = rng_stream(spec.seed, 0);
    let (n, d, t) = (spec.n_items, spec.dim, spec.n_frames);
    let per_coord = 1.0 / (d as f64).sqrt();

    let mut gallery = Array2::zeros((n, d));
    for mut row in gallery.rows_mut() {
        row.assign(&unit_random(&mut rng, d));
    }
    let mut frames = Array3::zeros((n, t, d));
    for i in 0..n {
        let base = &gallery.row(i) + &(gaussian_vec(&mut rng, d) * (spec.jitter * per_coord));
        for f in 0..t {
            let frame = &base + &(gaussian_vec(&mut rng, d) * (spec.frame_jitter * per_coord));
            frames.slice_mut(ndarray::s![i, f, ..]).assign(&frame);
        }
    }
    Ok(PairedDataset {
        queries: assemble(frames)?,
        gallery: EmbeddingSet::new(gallery)?,
        ground_truth: (0..n).collect(),
    })
}

/// Fixed unit hub directions (stream 1, drawn first).
pub fn hub_vectors(spec: &SynthSpec) -> Array2<f64> {
    let mut rng = rng_stream(spec.seed, 1);
    let mut hubs = Array2::zeros((spec.n_hubs, spec.dim));
    for mut row in hubs.rows_mut() {
        row.assign(&unit_random(&mut rng, spec.dim));
    }
    hubs
}

/// Applies the configured query shift to every frame, then re-pools.
///
/// * gaussian: `N(0, strength²)` added per coordinate of each frame;
/// * hub_attractor: each item is assigned one of `n_hubs` fixed unit vectors
///   `h` and every frame becomes `normalize((1 − s)·f + s·h)`;
/// * frame_shuffle: each item's frames are permuted with probability
///   `min(strength, 1)`.
///
/// Strength 0 is the identity for every kind.
pub fn apply_shift(queries: &EmbeddingSet, spec: &SynthSpec) -> Result<EmbeddingSet> {
    spec.validate()?;
    if spec.shift == ShiftKind::None || spec.strength == 0.0 {
        return Ok(queries.clone());
    }
    if queries.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: queries.dim(),
        });
    }
    let mut frames = queries.frames_or_global();
    let (n, t, d) = frames.dim();
    let s = spec.strength;
    match spec.shift {
        ShiftKind::None => unreachable!(),
        ShiftKind::Gaussian => {
            let mut rng = rng_stream(spec.seed, 1);
            frames.mapv_inplace(|x| x + s * rng.sample::<f64, _>(StandardNormal));
        }
        ShiftKind::HubAttractor => {
            let hubs = hub_vectors(spec);
            let mut rng = rng_stream(spec.seed, 1);
            // skip the variates used by hub_vectors
            for _ in 0..spec.n_hubs {
                let _ = unit_random(&mut rng, d);
            }
            for i in 0..n {
                let h = hubs.row(rng.random_range(0..spec.n_hubs));
                for f in 0..t {
                    let mut row = frames.slice_mut(ndarray::s![i, f, ..]);
                    let blended = &row * (1.0 - s) + &(&h * s);
                    row.assign(&blended);
                }
            }
        }
        ShiftKind::FrameShuffle => {
            let mut rng = rng_stream(spec.seed, 1);
            let p = s.min(1.0);
            for i in 0..n {
                if rng.random::<f64>() >= p {
                    continue;
                }
                let mut order: Vec<usize> = (0..t).collect();
                order.shuffle(&mut rng);
                let item = frames.index_axis(Axis(0), i).select(Axis(0), &order);
                frames.index_axis_mut(Axis(0), i).assign(&item);
            }
        }
    }
    let shifted = assemble(frames)?;
    if queries.frames().is_some() {
        Ok(shifted)
    } else {
        let (global, _) = shifted.into_parts();
        EmbeddingSet::new(global)
    }
}

/// `make_paired` followed by `apply_shift`.
pub fn make_shifted(spec: &SynthSpec) -> Result<PairedDataset> {
    let mut data = make_paired(spec)?;
    data.queries = apply_shift(&data.queries, spec)?;
    Ok(data)
}
