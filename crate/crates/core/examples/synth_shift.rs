//! Generate a clean paired set and apply each shift kind at a few strengths,
//! reporting how far the queries move and what happens to plain R@1.
//!
//! cargo run --release --example synth_shift

use hubtta::embedding::{cosine_similarity, l2_normalize};
use hubtta::synth::{apply_shift, make_paired};
use hubtta::{ShiftKind, SynthSpec};

fn main() -> hubtta::Result<()> {
    let base = SynthSpec::default();
    let clean = make_paired(&base)?;
    let gallery = l2_normalize(&clean.gallery)?;

    for kind in [ShiftKind::Gaussian, ShiftKind::HubAttractor, ShiftKind::FrameShuffle] {
        for strength in [0.0, 0.3, 0.6, 1.0] {
            let shifted = apply_shift(
                &clean.queries,
                &SynthSpec {
                    shift: kind,
                    strength,
                    ..base.clone()
                },
            )?;
            let moved = (clean.queries.data() - shifted.data())
                .mapv(f64::abs)
                .mean()
                .unwrap_or(0.0);
            let rankings = cosine_similarity(&l2_normalize(&shifted)?, &gallery)?.rankings();
            let hits = rankings
                .iter()
                .zip(&clean.ground_truth)
                .filter(|(r, &g)| r[0] == g)
                .count();
            println!(
                "{kind:<14} strength {strength:.1}: mean |dz| {moved:.4}  R@1 {:.2}",
                100.0 * hits as f64 / rankings.len() as f64
            );
        }
    }
    Ok(())
}
