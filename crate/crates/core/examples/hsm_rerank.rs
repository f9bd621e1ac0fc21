//! Stream a hub-shifted query set through the similarity memory and compare
//! hubness and recall against plain cosine ranking and the memoryless
//! column-softmax baseline.
//!
//! cargo run --release --example hsm_rerank

use hubtta::diagnostics::{hubness_report, HubnessConfig};
use hubtta::embedding::{cosine_similarity, l2_normalize};
use hubtta::hsm::{dsl_rerank, refine};
use hubtta::synth::make_shifted;
use hubtta::{HsmConfig, HubnessMemory, ShiftKind, SynthSpec};

fn main() -> hubtta::Result<()> {
    let data = make_shifted(&SynthSpec {
        n_items: 500,
        shift: ShiftKind::HubAttractor,
        strength: 0.6,
        ..SynthSpec::default()
    })?;
    let queries = l2_normalize(&data.queries)?;
    let gallery = l2_normalize(&data.gallery)?;
    let cfg = HsmConfig::default();
    let mut memory = HubnessMemory::new(cfg.capacity, gallery.len())?;

    let (mut raw, mut refined, mut dsl) = (Vec::new(), Vec::new(), Vec::new());
    for (step, start) in (0..queries.len()).step_by(16).enumerate() {
        let batch = queries.slice_rows(start, (start + 16).min(queries.len()));
        let mut s = cosine_similarity(&batch, &gallery)?;
        s.batch_index = step;
        refined.extend(refine(&s, &memory, &cfg)?.rankings());
        dsl.extend(dsl_rerank(&s, cfg.alpha)?.rankings());
        raw.extend(s.rankings());
        memory.push(s)?;
    }

    println!(
        "{:<10} {:>7} {:>9} {:>8} {:>8}",
        "ranking", "skew", "hub_occ", "antihub", "R@1"
    );
    for (name, r) in [("cosine", &raw), ("memory", &refined), ("batch-dsl", &dsl)] {
        let h = hubness_report(
            r,
            gallery.len(),
            &HubnessConfig::default(),
            Some(&data.ground_truth),
            &[1],
        )?;
        println!(
            "{name:<10} {:>7.3} {:>9.3} {:>8.3} {:>8.2}",
            h.skew, h.hub_occurrence, h.antihub_rate, h.recall_at[&1]
        );
    }
    Ok(())
}
