//! Hubness diagnostics over retrieval rankings: k-occurrence counts, six
//! scalar summaries of their distribution, and Recall@K.
//!
//! Conventions:
//! * skewness uses population moments `m₃ / m₂^{3/2}`;
//! * truncated skewness is the skewness of the non-zero counts (antihubs
//!   removed);
//! * a hub is an item with `N_k > hub_factor · k` (default factor 2);
//! * Atkinson's inequality aversion defaults to `ε = 0.5`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n_k[j]` = number of queries whose top-`k` contains gallery item `j`.
pub fn k_occurrence(rankings: &[Vec<usize>], k: usize, n_gallery: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n_gallery {
        return Err(Error::BadK { k, n_gallery });
    }
    let mut counts = vec![0usize; n_gallery];
    for ranking in rankings {
        if ranking.len() < k {
            return Err(Error::Shape(format!(
                "ranking of length {} is shorter than k={k}",
                ranking.len()
            )));
        }
        for &j in &ranking[..k] {
            if j >= n_gallery {
                return Err(Error::Shape(format!("gallery index {j} out of range {n_gallery}")));
            }
            counts[j] += 1;
        }
    }
    Ok(counts)
}

/// A skewness value; `degenerate` marks zero variance (value reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skewness {
    pub value: f64,
    pub degenerate: bool,
}

fn as_f64(x: &[usize]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Third standardized moment with population moments.
pub fn skewness(x: &[f64]) -> Skewness {
    let degenerate = Skewness {
        value: 0.0,
        degenerate: true,
    };
    if x.len() < 2 {
        return degenerate;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if !(m2 > 1e-300) {
        return degenerate;
    }
    Skewness {
        value: m3 / m2.powf(1.5),
        degenerate: false,
    }
}

/// Skewness restricted to items with a non-zero count.
pub fn truncated_skewness(n_k: &[usize]) -> Skewness {
    let kept: Vec<f64> = n_k.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    skewness(&kept)
}

/// `1 − [mean(x^{1−ε})]^{1/(1−ε)} / mean(x)`.
pub fn atkinson_index(x: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "Atkinson epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if x.is_empty() || x.iter().any(|&v| v < 0.0) {
        return Err(Error::DegenerateMean);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::DegenerateMean);
    }
    let power = 1.0 - epsilon;
    let moment = x.iter().map(|v| v.powf(power)).sum::<f64>() / n;
    Ok(1.0 - moment.powf(1.0 / power) / mean)
}

/// Hoover index `½ Σ|x_i − μ| / Σ x_i`.
pub fn robin_hood_index(x: &[f64]) -> Result<f64> {
    let total: f64 = x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSum);
    }
    let mean = total / x.len() as f64;
    Ok(0.5 * x.iter().map(|v| (v - mean).abs()).sum::<f64>() / total)
}

/// Fraction of gallery items never retrieved in any top-k list.
pub fn antihub_rate(n_k: &[usize]) -> f64 {
    if n_k.is_empty() {
        return 0.0;
    }
    n_k.iter().filter(|&&c| c == 0).count() as f64 / n_k.len() as f64
}

/// Share of all top-k slots taken by hubs (`n_k > hub_factor · k`).
pub fn hub_occurrence(n_k: &[usize], k: usize, hub_factor: f64) -> Result<f64> {
    let total: usize = n_k.iter().sum();
    if total == 0 {
        return Err(Error::DegenerateSum);
    }
    let threshold = hub_factor * k as f64;
    let hub_mass: usize = n_k.iter().filter(|&&c| c as f64 > threshold).sum();
    Ok(hub_mass as f64 / total as f64)
}

/// Percentage of queries whose ground-truth item appears in their top-K,
/// for each requested K.
pub fn recall_at_k(rankings: &[Vec<usize>], ground_truth: &[usize], ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if ground_truth.len() < rankings.len() {
        return Err(Error::MissingGroundTruth(ground_truth.len()));
    }
    let mut out = BTreeMap::new();
    if rankings.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for &k in ks {
        let hits = rankings
            .iter()
            .zip(ground_truth)
            .filter(|(ranking, &truth)| ranking.iter().take(k).any(|&j| j == truth))
            .count();
        out.insert(k, 100.0 * hits as f64 / rankings.len() as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubnessConfig {
    pub k: usize,
    pub atkinson_epsilon: f64,
    pub hub_factor: f64,
}

impl Default for HubnessConfig {
    fn default() -> Self {
        Self {
            k: 15,
            atkinson_epsilon: 0.5,
            hub_factor: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubnessReport {
    pub k: usize,
    pub n_queries: usize,
    pub n_k: Vec<usize>,
    pub skew: f64,
    pub trunc_skew: f64,
    pub atkinson: f64,
    pub robin_hood: f64,
    pub antihub_rate: f64,
    pub hub_occurrence: f64,
    /// Set when the count vector had zero variance.
    pub skew_degenerate: bool,
    pub recall_at: BTreeMap<usize, f64>,
}

/// All metrics for one set of rankings. `k` is clamped to the gallery size.
/// Recall is filled in only when `ground_truth` is given.
pub fn hubness_report(
    rankings: &[Vec<usize>],
    n_gallery: usize,
    config: &HubnessConfig,
    ground_truth: Option<&[usize]>,
    recall_ks: &[usize],
) -> Result<HubnessReport> {
    if rankings.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = config.k.min(n_gallery);
    let n_k = k_occurrence(rankings, k, n_gallery)?;
    let counts = as_f64(&n_k);
    let skew = skewness(&counts);
    let recall_at = match ground_truth {
        Some(gt) => recall_at_k(rankings, gt, recall_ks)?,
        None => BTreeMap::new(),
    };
    Ok(HubnessReport {
        k,
        n_queries: rankings.len(),
        skew: skew.value,
        trunc_skew: truncated_skewness(&n_k).value,
        atkinson: atkinson_index(&counts, config.atkinson_epsilon)?,
        robin_hood: robin_hood_index(&counts)?,
        antihub_rate: antihub_rate(&n_k),
        hub_occurrence: hub_occurrence(&n_k, k, config.hub_factor)?,
        skew_degenerate: skew.degenerate,
        recall_at,
        n_k,
    })
}
