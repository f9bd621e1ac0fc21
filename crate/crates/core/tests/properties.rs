use hubtta::diagnostics::{
    antihub_rate, atkinson_index, hub_occurrence, hubness_report, k_occurrence, robin_hood_index, skewness,
    truncated_skewness, HubnessConfig,
};
use hubtta::embedding::{cosine_similarity, entropy, l2_normalize, mean_pool, softmax};
use hubtta::losses::{loss_global, loss_inter, loss_intra, loss_na};
use hubtta::reliable::{BatchStatistics, ReliableMemory, RmConfig, RmEntry};
use hubtta::synth::{apply_shift, make_paired, make_shifted};
use hubtta::{hsm, EmbeddingSet, HsmConfig, HubnessMemory, ShiftKind, SimilarityMatrix, SynthSpec};
use ndarray::{Array1, Array2, Array3, Axis};
use proptest::prelude::*;

fn vector(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, len)
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn unit_rows(m: Array2<f64>) -> Array2<f64> {
    l2_normalize(&EmbeddingSet::new(m).unwrap()).unwrap().data().clone()
}

fn permuted_rows<T: Clone>(rows: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| rows[i].clone()).collect()
}

/// Uniformly random full rankings.
fn rankings(q: usize, n: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(Just((0..n).collect::<Vec<_>>()).prop_shuffle(), q)
}

fn counts() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..30, 2..25).prop_filter("some mass", |v| v.iter().sum::<usize>() > 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_ignores_constant_shift(v in vector(1..40), c in -50.0..50.0f64, scale in 0.01..20.0f64) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (a, b) = (softmax(&v, scale).unwrap(), softmax(&shifted, scale).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_falls_as_scale_grows(v in vector(2..40)) {
        prop_assume!(v.iter().any(|&x| (x - v[0]).abs() > 1e-6));
        let h: Vec<f64> = [0.1, 1.0, 10.0, 100.0].iter().map(|&s| entropy(&softmax(&v, s).unwrap())).collect();
        for w in h.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{h:?}");
        }
    }

    #[test]
    fn cosine_self_similarity_has_unit_diagonal(m in matrix(6, 5)) {
        prop_assume!(m.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let q = l2_normalize(&EmbeddingSet::new(m).unwrap()).unwrap();
        let s = cosine_similarity(&q, &q).unwrap();
        for i in 0..6 {
            prop_assert!((s.scores[[i, i]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_ignore_batch_order(
        frames in prop::collection::vec(-1.0..1.0f64, 5 * 3 * 4),
        gallery in matrix(5, 4),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let frames = Array3::from_shape_vec((5, 3, 4), frames).unwrap();
        prop_assume!(frames.iter().any(|x| x.abs() > 0.1));
        let z = unit_rows(mean_pool(&frames));
        let g = unit_rows(gallery);
        let f2 = frames.select(Axis(0), &perm);
        let z2 = z.select(Axis(0), &perm);
        let g2 = g.select(Axis(0), &perm);
        let pairs = [
            (loss_inter(z.view(), 10.0).value, loss_inter(z2.view(), 10.0).value),
            (loss_intra(frames.view(), 10.0).value, loss_intra(f2.view(), 10.0).value),
            (
                loss_global(z.view(), g.view(), 0.3).unwrap().value,
                loss_global(z2.view(), g2.view(), 0.3).unwrap().value,
            ),
            (
                loss_na(z.view(), g.view(), 0.02, 1.0).unwrap().value,
                loss_na(z2.view(), g.view(), 0.02, 1.0).unwrap().value,
            ),
        ];
        for (a, b) in pairs {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn loss_values_stay_in_range(z in matrix(6, 5), g in matrix(9, 5), e_m in 0.01..3.0f64) {
        prop_assume!(z.rows().into_iter().chain(g.rows()).all(|r| r.dot(&r) > 1e-4));
        let (z, g) = (unit_rows(z), unit_rows(g));
        let inter = loss_inter(z.view(), 10.0).value;
        prop_assert!(inter > 0.0 && inter <= 1.0 + 1e-12);
        let na = loss_na(z.view(), g.view(), 0.02, e_m).unwrap();
        prop_assert!(na.value >= 0.0 && na.value <= (9f64).ln() + 1e-9);
    }

    #[test]
    fn k_occurrence_conserves_mass(r in rankings(12, 9), k in 1usize..=9) {
        let n_k = k_occurrence(&r, k, 9).unwrap();
        prop_assert_eq!(n_k.iter().sum::<usize>(), k * 12);
    }

    #[test]
    fn metrics_are_bounded_and_relabelling_free(
        c in counts(),
        seed in any::<u64>(),
    ) {
        let x: Vec<f64> = c.iter().map(|&v| v as f64).collect();
        let k = 3;
        let bounded = [
            robin_hood_index(&x).unwrap(),
            atkinson_index(&x, 0.5).unwrap(),
            antihub_rate(&c),
            hub_occurrence(&c, k, 2.0).unwrap(),
        ];
        for v in bounded {
            prop_assert!((0.0..=1.0).contains(&v), "{bounded:?}");
        }

        // a fixed pseudo-random relabelling of gallery items
        let mut perm: Vec<usize> = (0..c.len()).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17));
        let c2 = permuted_rows(&c, &perm);
        let x2: Vec<f64> = c2.iter().map(|&v| v as f64).collect();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        prop_assert!(close(skewness(&x).value, skewness(&x2).value));
        prop_assert!(close(truncated_skewness(&c).value, truncated_skewness(&c2).value));
        prop_assert!(close(atkinson_index(&x, 0.5).unwrap(), atkinson_index(&x2, 0.5).unwrap()));
        prop_assert!(close(robin_hood_index(&x).unwrap(), robin_hood_index(&x2).unwrap()));
        prop_assert!(close(antihub_rate(&c), antihub_rate(&c2)));
        prop_assert!(close(hub_occurrence(&c, k, 2.0).unwrap(), hub_occurrence(&c2, k, 2.0).unwrap()));
    }

    #[test]
    fn regressive_transfer_never_lowers_robin_hood(c in counts(), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let x: Vec<f64> = c.iter().map(|&v| v as f64).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let below: Vec<usize> = (0..x.len()).filter(|&i| x[i] < mean && x[i] >= 1.0).collect();
        let above: Vec<usize> = (0..x.len()).filter(|&i| x[i] > mean).collect();
        prop_assume!(!below.is_empty() && !above.is_empty());
        let (from, to) = (below[a.index(below.len())], above[b.index(above.len())]);
        let mut y = x.clone();
        y[from] -= 1.0;
        y[to] += 1.0;
        prop_assert!(robin_hood_index(&y).unwrap() >= robin_hood_index(&x).unwrap() - 1e-12);
    }

    #[test]
    fn reliable_memory_respects_capacity(
        capacity in 1usize..8,
        batches in prop::collection::vec(prop::collection::vec(0.0..5.0f64, 1..10), 1..12),
    ) {
        let mut rm = ReliableMemory::new(RmConfig { capacity, ..RmConfig::default() }).unwrap();
        let batch = BatchStatistics { gap: 0.5, cov: Array2::zeros((2, 2)) };
        for (step, entropies) in batches.iter().enumerate() {
            rm.update(entropies.iter().map(|&h| RmEntry {
                query: Array1::from(vec![h.cos(), h.sin()]),
                gallery: Array1::from(vec![h.sin(), h.cos()]),
                entropy: h,
                step,
            }));
            prop_assert!(rm.len() <= capacity);
            let before = rm.entries().to_vec();
            let t = rm.targets(10, &batch);
            prop_assert!(t.e_m > 0.0 && t.gap >= 0.0);
            prop_assert_eq!(rm.entries(), before.as_slice());
        }
    }

    #[test]
    fn refine_is_pure(s in matrix(4, 7), history in prop::collection::vec(matrix(3, 7), 0..4)) {
        let mut memory = HubnessMemory::new(100, 7).unwrap();
        for (i, h) in history.into_iter().enumerate() {
            memory.push(SimilarityMatrix::new(h, i).unwrap()).unwrap();
        }
        let current = SimilarityMatrix::new(s, 9).unwrap();
        let cfg = HsmConfig::default();
        let a = hsm::refine(&current, &memory, &cfg).unwrap();
        let b = hsm::refine(&current, &memory, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn frame_shuffle_keeps_pooled_rows(seed in any::<u64>(), strength in 0.0..1.0f64) {
        let base = SynthSpec { n_items: 40, dim: 8, n_frames: 5, seed, ..SynthSpec::default() };
        let clean = make_paired(&base).unwrap().queries;
        let spec = SynthSpec { shift: ShiftKind::FrameShuffle, strength, ..base };
        let shuffled = apply_shift(&clean, &spec).unwrap();
        for (a, b) in clean.data().iter().zip(shuffled.data().iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_strength_is_identity(seed in any::<u64>(), kind in prop::sample::select(vec![ShiftKind::Gaussian, ShiftKind::HubAttractor, ShiftKind::FrameShuffle])) {
        let base = SynthSpec { n_items: 20, dim: 8, n_frames: 3, seed, ..SynthSpec::default() };
        let clean = make_paired(&base).unwrap().queries;
        let same = apply_shift(&clean, &SynthSpec { shift: kind, ..base }).unwrap();
        prop_assert_eq!(clean, same);
    }
}

const SEEDS: [u64; 5] = [0, 42, 100, 200, 512];

fn raw_skew(spec: &SynthSpec) -> f64 {
    let data = make_shifted(spec).unwrap();
    let q = l2_normalize(&data.queries).unwrap();
    let g = l2_normalize(&data.gallery).unwrap();
    let r = cosine_similarity(&q, &g).unwrap().rankings();
    hubness_report(&r, g.len(), &HubnessConfig::default(), None, &[])
        .unwrap()
        .skew
}

#[test]
fn hub_attractor_raises_skew_on_every_seed() {
    for seed in SEEDS {
        let clean = SynthSpec {
            n_items: 500,
            seed,
            ..SynthSpec::default()
        };
        let shifted = SynthSpec {
            shift: ShiftKind::HubAttractor,
            strength: 0.6,
            ..clean.clone()
        };
        let (a, b) = (raw_skew(&clean), raw_skew(&shifted));
        assert!(b > a, "seed {seed}: {b} vs unshifted {a}");
    }
}

fn raw_r1(spec: &SynthSpec) -> f64 {
    let data = make_shifted(spec).unwrap();
    let q = l2_normalize(&data.queries).unwrap();
    let r = cosine_similarity(&q, &l2_normalize(&data.gallery).unwrap())
        .unwrap()
        .rankings();
    r.iter().zip(&data.ground_truth).filter(|(r, &g)| r[0] == g).count() as f64 / r.len() as f64
}

#[test]
fn gaussian_shift_costs_recall() {
    let clean = SynthSpec::default();
    let shifted = SynthSpec {
        shift: ShiftKind::Gaussian,
        strength: 0.3,
        ..clean.clone()
    };
    assert!(raw_r1(&shifted) < raw_r1(&clean));
}

#[test]
fn larger_alpha_demotes_a_dominant_column() {
    let data = make_shifted(&SynthSpec {
        n_items: 64,
        shift: ShiftKind::HubAttractor,
        strength: 0.6,
        ..SynthSpec::default()
    })
    .unwrap();
    let q = l2_normalize(&data.queries.slice_rows(0, 16)).unwrap();
    let mut s = cosine_similarity(&q, &l2_normalize(&data.gallery).unwrap()).unwrap();
    // make column 3 the best match of every row
    let j = 3;
    for mut row in s.scores.rows_mut() {
        let top = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row[j] = top + 0.05;
    }
    let memory = HubnessMemory::new(100, s.n_gallery()).unwrap();
    let share = |alpha: f64| {
        let r = hsm::refine(
            &s,
            &memory,
            &HsmConfig {
                alpha,
                ..HsmConfig::default()
            },
        )
        .unwrap();
        r.scores.column(j).sum() / r.scores.sum()
    };
    let base = share(0.001);
    for alpha in [1.0, 10.0, 100.0] {
        assert!(share(alpha) < base, "alpha {alpha}: {} vs {base}", share(alpha));
    }
}

#[test]
fn balanced_counts_score_zero() {
    let c = vec![4usize; 10];
    let x = vec![4.0; 10];
    assert_eq!(skewness(&x).value, 0.0);
    assert_eq!(truncated_skewness(&c).value, 0.0);
    assert!(atkinson_index(&x, 0.5).unwrap().abs() < 1e-15);
    assert_eq!(robin_hood_index(&x).unwrap(), 0.0);
    assert_eq!(hub_occurrence(&c, 2, 2.0).unwrap(), 0.0);
    assert_eq!(antihub_rate(&c), 0.0);
}
