//! One adaptive pass over a Gaussian-shifted query stream. Prints the per-batch
//! timeline and compares the adapted, refinement-only and plain cosine paths.
//!
//! cargo run --release --example online_stream [seed]

use hubtta::losses::TaskMode;
use hubtta::synth::make_shifted;
use hubtta::{run_stream, ShiftKind, StreamConfig, SynthSpec};

fn main() -> hubtta::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let data = make_shifted(&SynthSpec {
        shift: ShiftKind::Gaussian,
        strength: 0.3,
        seed,
        ..SynthSpec::default()
    })?;

    let config = StreamConfig::for_mode(TaskMode::V2t);
    let adapted = run_stream(&data, &config)?.report;
    println!("batch  total loss   na loss  e_m       rm  running R@1");
    for b in &adapted.timeline {
        println!(
            "{:>5}  {:>10.5}  {:>8.5}  {:>8.2e}  {:>2}  {:>6.2} (raw {:.2})",
            b.batch_index, b.loss.total, b.loss.na, b.e_m, b.rm_len, b.running_r1, b.running_r1_raw
        );
    }

    let frozen = run_stream(&data, &StreamConfig { lr: 0.0, ..config })?.report;
    println!();
    println!("R@1 adapted + refined  {:.2}", adapted.recall[&1]);
    println!("R@1 refined only       {:.2}", frozen.recall[&1]);
    println!("R@1 cosine             {:.2}", frozen.recall_raw[&1]);
    println!("final adapter          {}", adapted.final_adapter_hash);
    Ok(())
}
