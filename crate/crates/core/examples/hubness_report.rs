//! Hubness metrics for cosine retrieval as the hub attraction grows.
//!
//! cargo run --release --example hubness_report

use hubtta::diagnostics::{hubness_report, HubnessConfig};
use hubtta::embedding::{cosine_similarity, l2_normalize};
use hubtta::synth::make_shifted;
use hubtta::{ShiftKind, SynthSpec};

fn main() -> hubtta::Result<()> {
    println!("strength   skew  trunc  atkinson  robin_hood  antihub  hub_occ    R@1");
    for strength in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let data = make_shifted(&SynthSpec {
            n_items: 500,
            shift: ShiftKind::HubAttractor,
            strength,
            ..SynthSpec::default()
        })?;
        let g = l2_normalize(&data.gallery)?;
        let rankings = cosine_similarity(&l2_normalize(&data.queries)?, &g)?.rankings();
        let r = hubness_report(
            &rankings,
            g.len(),
            &HubnessConfig::default(),
            Some(&data.ground_truth),
            &[1],
        )?;
        println!(
            "{strength:>8.1} {:>6.2} {:>6.2} {:>9.3} {:>11.3} {:>8.3} {:>8.3} {:>6.2}",
            r.skew, r.trunc_skew, r.atkinson, r.robin_hood, r.antihub_rate, r.hub_occurrence, r.recall_at[&1]
        );
    }
    Ok(())
}
