//! Evaluate the adaptation objective on a random batch, print each term, and
//! run the finite-difference gradient suite.
//!
//! cargo run --release --example gradients

use hubtta::gradcheck::{run_suite, GradcheckSettings, Instance};
use hubtta::losses::{total_loss, LossConfig, LossInputs, TaskMode};

fn main() -> hubtta::Result<()> {
    let settings = GradcheckSettings::default();
    let inst = Instance::generate(&settings, 7)?;
    let config = LossConfig {
        tau: settings.tau,
        mode: TaskMode::V2t,
        ..LossConfig::default()
    };
    let inputs = LossInputs {
        global: inst.global.view(),
        frames: Some(inst.frames.view()),
        pseudo_gallery: inst.pseudo_gallery.view(),
        gallery: inst.gallery.view(),
        target_gap: inst.target_gap,
        target_cov: inst.target_cov.view(),
        e_m: inst.e_m,
    };
    let (value, parts) = total_loss(&inputs, &config)?;
    println!("{parts:#?}");
    println!(
        "|grad| over global rows: {:.4e}",
        value.grad_global.iter().map(|g| g * g).sum::<f64>().sqrt()
    );

    for r in run_suite(42, &settings)? {
        println!(
            "{:<14} max rel. error {:.2e}  {}",
            r.check.name(),
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
