//! Finite-difference verification of every analytic loss gradient.
//!
//! Each check draws seeded random instances, evaluates the analytic
//! gradient, and compares it against central differences
//! `(f(x + h·e_k) − f(x − h·e_k)) / 2h` on every coordinate. The reported
//! error is normwise: `max_k |a_k − n_k| / max(max_k |a_k|, max_k |n_k|)`,
//! which stays meaningful when individual gradient entries are near zero.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapter::{apply_adapter, AdapterParams};
use crate::embedding::{entropy, EmbeddingSet};
use crate::error::Result;
use crate::losses::{
    correspondence_probabilities, loss_frame, loss_global, loss_inter, loss_intra, loss_na, total_loss, LossConfig,
    LossInputs, TaskMode, UniformityConfig,
};

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let plus = f(&probe);
            probe[k] = x[k] - h;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Normwise relative error between two gradients.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSettings {
    pub batch: usize,
    pub frames: usize,
    pub dim: usize,
    pub n_gallery: usize,
    pub tau: f64,
    pub temperature: f64,
    pub step: f64,
    pub tolerance: f64,
    pub instances: usize,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            batch: 4,
            frames: 3,
            dim: 8,
            n_gallery: 20,
            tau: 0.02,
            temperature: 10.0,
            step: 1e-4,
            tolerance: 1e-3,
            instances: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Inter,
    Intra,
    Global,
    Frame,
    NoiseRobust,
    TotalV2t,
    TotalT2v,
    /// Combined v2t objective differentiated w.r.t. the adapter parameters.
    AdapterChain,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Inter,
        Check::Intra,
        Check::Global,
        Check::Frame,
        Check::NoiseRobust,
        Check::TotalV2t,
        Check::TotalT2v,
        Check::AdapterChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Inter => "inter",
            Check::Intra => "intra",
            Check::Global => "global",
            Check::Frame => "frame",
            Check::NoiseRobust => "noise_robust",
            Check::TotalV2t => "total_v2t",
            Check::TotalT2v => "total_t2v",
            Check::AdapterChain => "adapter_chain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: Check,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// One random problem: unit frames, pooled unit globals, a unit gallery,
/// pseudo-positives and targets.
#[derive(Debug, Clone)]
pub struct Instance {
    pub raw_frames: Array3<f64>,
    pub frames: Array3<f64>,
    pub global: Array2<f64>,
    pub gallery: Array2<f64>,
    pub pseudo_gallery: Array2<f64>,
    pub target_gap: f64,
    pub target_cov: Array2<f64>,
    pub e_m: f64,
    pub params: AdapterParams,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_rows(mut a: Array2<f64>) -> Array2<f64> {
    for mut row in a.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    a
}

/// Threshold halfway across the widest gap between sorted entropies, so no
/// row sits near the filtering kink and some rows are filtered.
fn split_threshold(entropies: &[f64]) -> f64 {
    let mut e = entropies.to_vec();
    e.sort_by(f64::total_cmp);
    if e.len() < 2 {
        return e[0] + 0.5;
    }
    let (lo, hi) = e
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
        .expect("two or more");
    0.5 * (lo + hi)
}

impl Instance {
    pub fn generate(settings: &GradcheckSettings, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, t, d, ng) = (settings.batch, settings.frames, settings.dim, settings.n_gallery);

        let raw_frames = Array3::from_shape_fn((b, t, d), |_| normal(&mut rng));
        let mut params = AdapterParams::identity(d);
        params.scale.mapv_inplace(|_| 1.0 + 0.1 * normal(&mut rng));
        params.shift.mapv_inplace(|_| 0.1 * normal(&mut rng));

        let adapted = apply_adapter(&params, &EmbeddingSet::from_frames(raw_frames.clone())?)?;
        let frames = adapted.frames();
        let global = adapted.embeddings.data().clone();

        let gallery = unit_rows(Array2::from_shape_fn((ng, d), |_| normal(&mut rng)));
        let picks: Vec<usize> = (0..b).map(|_| rng.random_range(0..ng)).collect();
        let pseudo_gallery = gallery.select(Axis(0), &picks);
        let target_gap = rng.random::<f64>();
        let target_cov = Array2::from_shape_fn((d, d), |_| 0.05 * normal(&mut rng));

        let probs = correspondence_probabilities(global.view(), gallery.view(), settings.tau);
        let entropies: Vec<f64> = probs
            .rows()
            .into_iter()
            .map(|p| entropy(p.as_slice().expect("standard layout")))
            .collect();
        let e_m = split_threshold(&entropies).max(1e-3);

        Ok(Self {
            raw_frames,
            frames,
            global,
            gallery,
            pseudo_gallery,
            target_gap,
            target_cov,
            e_m,
            params,
        })
    }

    fn loss_config(&self, settings: &GradcheckSettings, mode: TaskMode) -> LossConfig {
        LossConfig {
            tau: settings.tau,
            uniformity: UniformityConfig {
                temperature: settings.temperature,
            },
            mode,
        }
    }

    fn total(&self, global: &Array2<f64>, frames: &Array3<f64>, cfg: &LossConfig) -> Result<crate::losses::LossValue> {
        let inputs = LossInputs {
            global: global.view(),
            frames: (cfg.mode == TaskMode::V2t).then(|| frames.view()),
            pseudo_gallery: self.pseudo_gallery.view(),
            gallery: self.gallery.view(),
            target_gap: self.target_gap,
            target_cov: self.target_cov.view(),
            e_m: self.e_m,
        };
        Ok(total_loss(&inputs, cfg)?.0)
    }
}

fn flat2(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn flat3(a: &Array3<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn as2(x: &[f64], shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(shape, x.to_vec()).expect("shape")
}

fn as3(x: &[f64], shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_vec(shape, x.to_vec()).expect("shape")
}

/// Relative error of one check on one instance.
pub fn check_instance(check: Check, inst: &Instance, settings: &GradcheckSettings) -> Result<f64> {
    let h = settings.step;
    let t = settings.temperature;
    let g_shape = inst.global.dim();
    let f_shape = inst.frames.dim();
    let err = match check {
        Check::Inter => {
            let analytic = loss_inter(inst.global.view(), t).grad_global;
            let numeric = central_difference(|x| loss_inter(as2(x, g_shape).view(), t).value, &flat2(&inst.global), h);
            relative_error(&flat2(&analytic), &numeric)
        }
        Check::Intra => {
            let analytic = loss_intra(inst.frames.view(), t).grad_frames.expect("frame loss");
            let numeric = central_difference(|x| loss_intra(as3(x, f_shape).view(), t).value, &flat3(&inst.frames), h);
            relative_error(&flat3(&analytic), &numeric)
        }
        Check::Global => {
            let analytic = loss_global(inst.global.view(), inst.pseudo_gallery.view(), inst.target_gap)?.grad_global;
            let numeric = central_difference(
                |x| {
                    loss_global(as2(x, g_shape).view(), inst.pseudo_gallery.view(), inst.target_gap)
                        .expect("shapes fixed")
                        .value
                },
                &flat2(&inst.global),
                h,
            );
            relative_error(&flat2(&analytic), &numeric)
        }
        Check::Frame => {
            let analytic = loss_frame(inst.frames.view(), inst.pseudo_gallery.view(), inst.target_cov.view())?
                .grad_frames
                .expect("frame loss");
            let numeric = central_difference(
                |x| {
                    loss_frame(
                        as3(x, f_shape).view(),
                        inst.pseudo_gallery.view(),
                        inst.target_cov.view(),
                    )
                    .expect("shapes fixed")
                    .value
                },
                &flat3(&inst.frames),
                h,
            );
            relative_error(&flat3(&analytic), &numeric)
        }
        Check::NoiseRobust => {
            let analytic = loss_na(inst.global.view(), inst.gallery.view(), settings.tau, inst.e_m)?.grad_global;
            let numeric = central_difference(
                |x| {
                    loss_na(as2(x, g_shape).view(), inst.gallery.view(), settings.tau, inst.e_m)
                        .expect("shapes fixed")
                        .value
                },
                &flat2(&inst.global),
                h,
            );
            relative_error(&flat2(&analytic), &numeric)
        }
        Check::TotalV2t | Check::TotalT2v => {
            let mode = if check == Check::TotalV2t {
                TaskMode::V2t
            } else {
                TaskMode::T2v
            };
            let cfg = inst.loss_config(settings, mode);
            let value = inst.total(&inst.global, &inst.frames, &cfg)?;
            let n_global = inst.global.len();
            let mut analytic = flat2(&value.grad_global);
            let mut point = flat2(&inst.global);
            if mode == TaskMode::V2t {
                analytic.extend(flat3(value.grad_frames.as_ref().expect("v2t frames")));
                point.extend(flat3(&inst.frames));
            }
            let numeric = central_difference(
                |x| {
                    let global = as2(&x[..n_global], g_shape);
                    let frames = if mode == TaskMode::V2t {
                        as3(&x[n_global..], f_shape)
                    } else {
                        inst.frames.clone()
                    };
                    inst.total(&global, &frames, &cfg).expect("shapes fixed").value
                },
                &point,
                h,
            );
            relative_error(&analytic, &numeric)
        }
        Check::AdapterChain => {
            let cfg = inst.loss_config(settings, TaskMode::V2t);
            let raw = EmbeddingSet::from_frames(inst.raw_frames.clone())?;
            let objective = |params: &AdapterParams| -> Result<(f64, crate::adapter::AdapterGrad)> {
                let adapted = apply_adapter(params, &raw)?;
                let frames = adapted.frames();
                let value = inst.total(adapted.embeddings.data(), &frames, &cfg)?;
                let grad = adapted.backprop(&value.grad_global, value.grad_frames.as_ref());
                Ok((value.value, grad))
            };
            let (_, grad) = objective(&inst.params)?;
            let d = inst.params.dim();
            let mut analytic = grad.scale.to_vec();
            analytic.extend(grad.shift.iter());
            let mut point = inst.params.scale.to_vec();
            point.extend(inst.params.shift.iter());
            let numeric = central_difference(
                |x| {
                    let mut p = inst.params.clone();
                    p.scale = Array1::from(x[..d].to_vec());
                    p.shift = Array1::from(x[d..].to_vec());
                    objective(&p).expect("shapes fixed").0
                },
                &point,
                h,
            );
            relative_error(&analytic, &numeric)
        }
    };
    Ok(err)
}

/// Runs every check on `settings.instances` instances seeded from `seed`.
pub fn run_suite(seed: u64, settings: &GradcheckSettings) -> Result<Vec<CheckResult>> {
    let instances = (0..settings.instances as u64)
        .map(|i| Instance::generate(settings, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Check::ALL
        .iter()
        .map(|&check| {
            let mut worst: f64 = 0.0;
            for inst in &instances {
                worst = worst.max(check_instance(check, inst, settings)?);
            }
            Ok(CheckResult {
                check,
                instances: instances.len(),
                max_rel_error: worst,
                passed: worst < settings.tolerance,
            })
        })
        .collect()
}
