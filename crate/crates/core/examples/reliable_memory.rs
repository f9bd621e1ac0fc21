//! Feed confident and unconfident predictions into the reliable memory and
//! watch which survive and how the targets change.
//!
//! cargo run --example reliable_memory

use hubtta::reliable::{BatchStatistics, ReliableMemory, RmConfig, RmEntry};
use ndarray::{array, Array2};

fn main() -> hubtta::Result<()> {
    let mut rm = ReliableMemory::new(RmConfig {
        capacity: 4,
        ..RmConfig::default()
    })?;
    let batch = BatchStatistics {
        gap: 0.8,
        cov: Array2::zeros((2, 2)),
    };

    let t = rm.targets(100, &batch);
    println!("empty: e_m {:.4} (0.5 ln 100), fallback {}", t.e_m, t.fallback);

    for (step, entropies) in [[0.9, 2.5, 0.2], [1.7, 0.1, 3.0], [0.2, 0.4, 0.3]].iter().enumerate() {
        rm.update(entropies.iter().enumerate().map(|(i, &h)| RmEntry {
            query: array![1.0, 0.1 * i as f64],
            gallery: array![0.9, 0.2 * step as f64],
            entropy: h,
            step,
        }));
        let kept: Vec<(f64, usize)> = rm.entries().iter().map(|e| (e.entropy, e.step)).collect();
        let t = rm.targets(100, &batch);
        println!("after step {step}: kept (entropy, step) {kept:?}");
        println!("    gap {:.4}  e_m {:.4}  fallback {}", t.gap, t.e_m, t.fallback);
    }
    Ok(())
}
