//! Query-side adapter: a per-dimension scale and shift applied to raw frame
//! features before normalization and pooling, trained online with Adam.

use ndarray::{Array1, Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbeddingSet, MIN_NORM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adapter parameters with their optimizer state. Moment arrays are `D×2`,
/// column 0 for the scale and column 1 for the shift.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub first_moment: Array2<f64>,
    pub second_moment: Array2<f64>,
    pub step_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrad {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

impl AdapterParams {
    /// Identity adapter: scale 1, shift 0.
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: Array1::ones(dim),
            shift: Array1::zeros(dim),
            first_moment: Array2::zeros((dim, 2)),
            second_moment: Array2::zeros((dim, 2)),
            step_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// One Adam step. A zero gradient leaves the parameters unchanged as
    /// long as weight decay is off.
    pub fn step(&mut self, grad: &AdapterGrad, lr: f64, adam: &AdamConfig) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - adam.beta1.powi(t);
        let bias2 = 1.0 - adam.beta2.powi(t);
        for (col, (params, g)) in [(&mut self.scale, &grad.scale), (&mut self.shift, &grad.shift)]
            .into_iter()
            .enumerate()
        {
            let mut m = self.first_moment.column_mut(col);
            let mut v = self.second_moment.column_mut(col);
            Zip::from(&mut **params)
                .and(g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
                    *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= lr * (m_hat / (v_hat.sqrt() + adam.eps) + adam.weight_decay * *p);
                });
        }
    }

    /// Short stable fingerprint of the scale and shift values.
    pub fn snapshot_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for x in self.scale.iter().chain(self.shift.iter()) {
            hasher.update(x.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Output of [`apply_adapter`] plus what backpropagation needs.
#[derive(Debug, Clone)]
pub struct AdaptedBatch {
    /// Unit global rows and unit frame rows.
    pub embeddings: EmbeddingSet,
    raw: Array3<f64>,
    frame_norms: Array2<f64>,
    pooled_norms: Array1<f64>,
}

/// `z'_d = γ_d·z_d + δ_d` on every frame (global rows count as one frame),
/// then per-frame normalization, mean pooling and normalization of the
/// pooled rows.
pub fn apply_adapter(params: &AdapterParams, e: &EmbeddingSet) -> Result<AdaptedBatch> {
    if e.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: e.dim(),
        });
    }
    let raw = e.frames_or_global();
    let (n, t, _) = raw.dim();
    let mut frames = raw.clone();
    for mut item in frames.outer_iter_mut() {
        for mut row in item.rows_mut() {
            Zip::from(&mut row)
                .and(&params.scale)
                .and(&params.shift)
                .for_each(|x, &g, &s| *x = g * *x + s);
        }
    }
    let mut frame_norms = Array2::zeros((n, t));
    for (i, mut item) in frames.outer_iter_mut().enumerate() {
        for (f, mut row) in item.rows_mut().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm >= MIN_NORM) {
                return Err(Error::ZeroNormRow(i));
            }
            row /= norm;
            frame_norms[[i, f]] = norm;
        }
    }
    let mut pooled = frames.mean_axis(Axis(1)).expect("t >= 1");
    let mut pooled_norms = Array1::zeros(n);
    for (i, mut row) in pooled.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= MIN_NORM) {
            return Err(Error::ZeroNormRow(i));
        }
        row /= norm;
        pooled_norms[i] = norm;
    }
    let embeddings = if e.frames().is_some() {
        EmbeddingSet::from_frames(frames)?.with_global(pooled)
    } else {
        EmbeddingSet::new(pooled)?
    };
    Ok(AdaptedBatch {
        embeddings,
        raw,
        frame_norms,
        pooled_norms,
    })
}

impl AdaptedBatch {
    /// Unit frame features; global-only input yields a single frame per item.
    pub fn frames(&self) -> Array3<f64> {
        self.embeddings.frames_or_global()
    }

    /// Chains gradients w.r.t. the unit global rows and unit frames back to
    /// the adapter's scale and shift.
    pub fn backprop(&self, grad_global: &Array2<f64>, grad_frames: Option<&Array3<f64>>) -> AdapterGrad {
        let global = self.embeddings.data();
        let frames = self.frames();
        let (n, t, d) = frames.dim();

        // through pooled-row normalization
        let mut grad_pooled = Array2::zeros((n, d));
        for i in 0..n {
            let z = global.row(i);
            let g = grad_global.row(i);
            let radial = z.dot(&g);
            let mut out = grad_pooled.row_mut(i);
            out.assign(&((&g - &(&z * radial)) / self.pooled_norms[i]));
        }

        let mut scale = Array1::zeros(d);
        let mut shift = Array1::zeros(d);
        for i in 0..n {
            for f in 0..t {
                let mut g = grad_pooled.row(i).to_owned() / t as f64;
                if let Some(gf) = grad_frames {
                    g += &gf.slice(ndarray::s![i, f, ..]);
                }
                let u = frames.slice(ndarray::s![i, f, ..]);
                let radial = u.dot(&g);
                let grad_adapted = (&g - &(&u * radial)) / self.frame_norms[[i, f]];
                let x = self.raw.slice(ndarray::s![i, f, ..]);
                scale += &(&grad_adapted * &x);
                shift += &grad_adapted;
            }
        }
        AdapterGrad { scale, shift }
    }
}
