//! Adaptation objectives and their analytic gradients with respect to the
//! batch query embeddings.
//!
//! * uniformity: `inter` scatters global rows from the batch mean, `intra`
//!   scatters each item's frames from that item's frame mean;
//! * cross-modal alignment: `global` matches the batch modality gap to a
//!   target, `frame` matches the frame/gallery cross-covariance to a target;
//! * `na`: entropy minimization weighted by `max(1 − η/E_m, 0)`.
//!
//! Gallery embeddings and all targets are constants: gradients only flow to
//! query-side inputs. Where a Euclidean norm is evaluated at zero its
//! subgradient is taken as zero.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::{entropy, softmax_in_place};
use crate::error::{Error, Result};

/// Loss value plus gradients w.r.t. the global rows and, for losses that
/// read frame features, w.r.t. the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_global: Array2<f64>,
    pub grad_frames: Option<Array3<f64>>,
    /// Set when every sample was filtered out and the loss was skipped.
    pub skipped: bool,
}

impl LossValue {
    fn global(value: f64, grad: Array2<f64>) -> Self {
        Self {
            value,
            grad_global: grad,
            grad_frames: None,
            skipped: false,
        }
    }

    fn frames(value: f64, n_items: usize, dim: usize, grad: Array3<f64>) -> Self {
        Self {
            value,
            grad_global: Array2::zeros((n_items, dim)),
            grad_frames: Some(grad),
            skipped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityConfig {
    pub temperature: f64,
}

impl Default for UniformityConfig {
    fn default() -> Self {
        Self { temperature: 10.0 }
    }
}

/// Retrieval direction. Text queries (`t2v`) carry no frame features, so the
/// intra-item and frame-level terms are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    #[default]
    V2t,
    T2v,
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v2t" => Ok(TaskMode::V2t),
            "t2v" => Ok(TaskMode::T2v),
            other => Err(Error::Config(format!("unknown task mode `{other}` (v2t|t2v)"))),
        }
    }
}

impl std::fmt::Display for TaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskMode::V2t => "v2t",
            TaskMode::T2v => "t2v",
        })
    }
}

/// Shared kernel of the two uniformity terms for one group of rows:
/// adds `weight · exp(−‖x_k − x̄‖/t)` summed over `k`, and its gradient.
fn scatter_from_mean(rows: ArrayView2<'_, f64>, t: f64, weight: f64, grad: &mut Array2<f64>) -> f64 {
    let mean = rows.mean_axis(Axis(0)).expect("non-empty group");
    let mut value = 0.0;
    let mut v = Array2::zeros(rows.raw_dim());
    for (k, row) in rows.rows().into_iter().enumerate() {
        let diff = &row - &mean;
        let r = diff.dot(&diff).sqrt();
        let e = (-r / t).exp();
        value += weight * e;
        if r > 0.0 {
            let coeff = -weight * e / (t * r);
            v.row_mut(k).assign(&(&diff * coeff));
        }
    }
    // the mean depends on every row: subtract the average of the per-row terms
    let v_mean = v.mean_axis(Axis(0)).expect("non-empty group");
    for (mut g, vk) in grad.rows_mut().into_iter().zip(v.rows()) {
        g += &vk;
        g -= &v_mean;
    }
    value
}

/// `(1/B) Σ_i exp(−‖z_i − z̄‖₂ / t)`.
pub fn loss_inter(z: ArrayView2<'_, f64>, t: f64) -> LossValue {
    let b = z.nrows();
    let mut grad = Array2::zeros(z.raw_dim());
    let value = scatter_from_mean(z, t, 1.0 / b as f64, &mut grad);
    LossValue::global(value, grad)
}

/// `(1/B) Σ_i (1/T) Σ_f exp(−‖z_{i,f} − mean_f z_{i,·}‖₂ / t)`.
pub fn loss_intra(frames: ArrayView3<'_, f64>, t: f64) -> LossValue {
    let (b, n_frames, d) = frames.dim();
    let weight = 1.0 / (b * n_frames) as f64;
    let mut grad = Array3::zeros((b, n_frames, d));
    let mut value = 0.0;
    for (item, mut g) in frames.outer_iter().zip(grad.outer_iter_mut()) {
        let mut g_item = Array2::zeros(item.raw_dim());
        value += scatter_from_mean(item, t, weight, &mut g_item);
        g.assign(&g_item);
    }
    LossValue::frames(value, b, d, grad)
}

/// `‖mean(zq) − mean(zg)‖₂`.
pub fn batch_gap(zq: ArrayView2<'_, f64>, zg: ArrayView2<'_, f64>) -> f64 {
    let diff = zq.mean_axis(Axis(0)).expect("non-empty") - zg.mean_axis(Axis(0)).expect("non-empty");
    diff.dot(&diff).sqrt()
}

/// `(‖mean(zq) − mean(zg)‖₂ − target_gap)²`, differentiated w.r.t. `zq`.
pub fn loss_global(zq: ArrayView2<'_, f64>, zg: ArrayView2<'_, f64>, target_gap: f64) -> Result<LossValue> {
    if zq.dim() != zg.dim() {
        return Err(Error::Shape(format!(
            "query batch {:?} and pseudo-positive gallery {:?} differ",
            zq.dim(),
            zg.dim()
        )));
    }
    let b = zq.nrows() as f64;
    let diff = zq.mean_axis(Axis(0)).expect("non-empty") - zg.mean_axis(Axis(0)).expect("non-empty");
    let gap = diff.dot(&diff).sqrt();
    let residual = gap - target_gap;
    let mut grad = Array2::zeros(zq.raw_dim());
    if gap > 0.0 {
        let row = diff * (2.0 * residual / (gap * b));
        for mut g in grad.rows_mut() {
            g.assign(&row);
        }
    }
    Ok(LossValue::global(residual * residual, grad))
}

/// Unbiased cross-covariance `(1/(n−1)) · x̃ᵀ ỹ` of column-centered inputs.
pub fn cross_covariance(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "cross-covariance needs paired rows, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    let xc = &x - &x.mean_axis(Axis(0)).expect("n >= 2");
    let yc = &y - &y.mean_axis(Axis(0)).expect("n >= 2");
    Ok(xc.t().dot(&yc) / (n - 1) as f64)
}

/// Flattens `B×T×D` frames to `(B·T)×D` and repeats each gallery row `T`
/// times so every frame is paired with its own item's pseudo-positive.
fn pair_frames(frames: ArrayView3<'_, f64>, zg: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (b, t, d) = frames.dim();
    if zg.dim() != (b, d) {
        return Err(Error::Shape(format!(
            "frames {:?} do not pair with gallery rows {:?}",
            frames.dim(),
            zg.dim()
        )));
    }
    let flat = frames.to_owned().into_shape_with_order((b * t, d)).expect("contiguous");
    let repeated = Array2::from_shape_fn((b * t, d), |(k, j)| zg[[k / t, j]]);
    Ok((flat, repeated))
}

/// Frame/gallery cross-covariance of a batch, as consumed by [`loss_frame`].
pub fn frame_cross_covariance(frames: ArrayView3<'_, f64>, zg: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (flat, repeated) = pair_frames(frames, zg)?;
    cross_covariance(flat.view(), repeated.view())
}

/// Mean squared difference between the batch frame/gallery cross-covariance
/// and `target_cov`, differentiated w.r.t. the frames.
pub fn loss_frame(
    frames: ArrayView3<'_, f64>,
    zg: ArrayView2<'_, f64>,
    target_cov: ArrayView2<'_, f64>,
) -> Result<LossValue> {
    let (b, t, d) = frames.dim();
    if target_cov.dim() != (d, d) {
        return Err(Error::Shape(format!(
            "target covariance must be {d}x{d}, got {:?}",
            target_cov.dim()
        )));
    }
    let (flat, repeated) = pair_frames(frames, zg)?;
    let n = flat.nrows();
    let cov = cross_covariance(flat.view(), repeated.view())?;
    let residual = &cov - &target_cov;
    let value = residual.iter().map(|r| r * r).sum::<f64>() / (d * d) as f64;

    // dL/dC = 2R/D², dC_ab/dx_ka = ỹ_kb/(n−1)  ⇒  dL/dx = ỹ · (dL/dC)ᵀ / (n−1)
    let y_centered = &repeated - &repeated.mean_axis(Axis(0)).expect("n >= 2");
    let scale = 2.0 / ((d * d) as f64 * (n - 1) as f64);
    let grad_flat = y_centered.dot(&residual.t()) * scale;
    let grad = grad_flat.into_shape_with_order((b, t, d)).expect("contiguous");
    Ok(LossValue::frames(value, b, d, grad))
}

/// Per-row correspondence distributions `softmax(z gᵀ / τ)`.
pub fn correspondence_probabilities(z: ArrayView2<'_, f64>, gallery: ArrayView2<'_, f64>, tau: f64) -> Array2<f64> {
    let mut logits = z.dot(&gallery.t());
    for mut row in logits.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"), 1.0 / tau);
    }
    logits
}

/// Noise-robust entropy: `(1/|{i: w_i>0}|) Σ_i w_i η_i` with
/// `w_i = max(1 − η_i / E_m, 0)` and `η_i` the entropy of
/// `softmax(z_i gᵀ / τ)`.
///
/// If every sample is filtered the value and gradient are zero and
/// [`LossValue::skipped`] is set.
pub fn loss_na(z: ArrayView2<'_, f64>, gallery: ArrayView2<'_, f64>, tau: f64, e_m: f64) -> Result<LossValue> {
    if z.ncols() != gallery.ncols() {
        return Err(Error::DimensionMismatch {
            expected: gallery.ncols(),
            got: z.ncols(),
        });
    }
    if !(e_m > 0.0) {
        return Err(Error::Config(format!("entropy threshold must be positive, got {e_m}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let probs = correspondence_probabilities(z, gallery, tau);
    let etas: Vec<f64> = probs
        .rows()
        .into_iter()
        .map(|p| entropy(p.as_slice().expect("standard layout")))
        .collect();
    let weights: Vec<f64> = etas.iter().map(|&eta| (1.0 - eta / e_m).max(0.0)).collect();
    let active = weights.iter().filter(|&&w| w > 0.0).count();

    let mut grad = Array2::zeros(z.raw_dim());
    if active == 0 {
        return Ok(LossValue {
            value: 0.0,
            grad_global: grad,
            grad_frames: None,
            skipped: true,
        });
    }
    let norm = 1.0 / active as f64;
    let mut value = 0.0;
    for (i, (&eta, &w)) in etas.iter().zip(&weights).enumerate() {
        if w <= 0.0 {
            continue;
        }
        value += w * eta;
        // d(wη)/dη = w − η/E_m ; dη/dl_j = −p_j (ln p_j + η) ; dl_j/dz = g_j/τ
        let outer = norm * (w - eta / e_m) / tau;
        let p = probs.row(i);
        let mut g = grad.row_mut(i);
        for (j, &pj) in p.iter().enumerate() {
            if pj > 0.0 {
                let d_eta = -pj * (pj.ln() + eta);
                g.scaled_add(outer * d_eta, &gallery.row(j));
            }
        }
    }
    Ok(LossValue {
        value: value * norm,
        grad_global: grad,
        grad_frames: None,
        skipped: false,
    })
}

/// Everything one evaluation of the combined objective reads.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    /// Unit-normalized global query rows, `B×D`.
    pub global: ArrayView2<'a, f64>,
    /// Frame features `B×T×D`; required for `v2t`.
    pub frames: Option<ArrayView3<'a, f64>>,
    /// Pseudo-positive gallery row for each query, `B×D`.
    pub pseudo_gallery: ArrayView2<'a, f64>,
    /// Full gallery, `N_G×D`.
    pub gallery: ArrayView2<'a, f64>,
    pub target_gap: f64,
    pub target_cov: ArrayView2<'a, f64>,
    pub e_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax temperature of the correspondence probabilities.
    pub tau: f64,
    pub uniformity: UniformityConfig,
    pub mode: TaskMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.02,
            uniformity: UniformityConfig::default(),
            mode: TaskMode::V2t,
        }
    }
}

/// Component values of one evaluation. Components omitted by the task mode
/// are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub inter: f64,
    pub intra: f64,
    pub global: f64,
    pub frame: f64,
    pub na: f64,
    pub total: f64,
    pub na_skipped: bool,
}

/// Unweighted sum `inter + intra + global + frame + na` (`t2v` drops intra
/// and frame) with summed gradients.
pub fn total_loss(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<(LossValue, LossBreakdown)> {
    let t = config.uniformity.temperature;
    let (b, d) = inputs.global.dim();
    let mut breakdown = LossBreakdown::default();

    let inter = loss_inter(inputs.global, t);
    let global = loss_global(inputs.global, inputs.pseudo_gallery, inputs.target_gap)?;
    let na = loss_na(inputs.global, inputs.gallery, config.tau, inputs.e_m)?;
    breakdown.inter = inter.value;
    breakdown.global = global.value;
    breakdown.na = na.value;
    breakdown.na_skipped = na.skipped;

    let grad_global = inter.grad_global + &global.grad_global + &na.grad_global;
    let mut grad_frames = None;

    if config.mode == TaskMode::V2t {
        let frames = inputs
            .frames
            .ok_or_else(|| Error::Shape("v2t objective needs frame features".into()))?;
        if frames.dim().0 != b || frames.dim().2 != d {
            return Err(Error::Shape(format!(
                "frames {:?} do not match global rows {:?}",
                frames.dim(),
                (b, d)
            )));
        }
        let intra = loss_intra(frames, t);
        breakdown.intra = intra.value;
        let mut gf = intra.grad_frames.expect("frame loss");
        // a lone single-frame item has no covariance; the term is dropped
        if frames.dim().0 * frames.dim().1 >= 2 {
            let frame = loss_frame(frames, inputs.pseudo_gallery, inputs.target_cov)?;
            breakdown.frame = frame.value;
            gf += frame.grad_frames.as_ref().expect("frame loss");
        }
        grad_frames = Some(gf);
    }

    breakdown.total = breakdown.inter + breakdown.intra + breakdown.global + breakdown.frame + breakdown.na;
    Ok((
        LossValue {
            value: breakdown.total,
            grad_global,
            grad_frames,
            skipped: false,
        },
        breakdown,
    ))
}
