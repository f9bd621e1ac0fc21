//! Write embeddings in the binary format, inspect the header, read them back,
//! and show the error raised by a damaged file.
//!
//! cargo run --example embedding_file

use hubtta::io::{decode_embeddings, parse_header, read_embeddings, write_embeddings};
use hubtta::synth::make_paired;
use hubtta::SynthSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = make_paired(&SynthSpec {
        n_items: 8,
        dim: 6,
        n_frames: 3,
        ..SynthSpec::default()
    })?;
    let dir = std::env::temp_dir().join("hubtta-embedding-file");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("queries.hatv");
    write_embeddings(&data.queries, &path)?;

    let bytes = std::fs::read(&path)?;
    println!("{} bytes, header {:?}", bytes.len(), parse_header(&bytes)?);

    let back = read_embeddings(&path)?;
    println!(
        "read {} items x {} frames x {} dims",
        back.len(),
        back.n_frames(),
        back.dim()
    );
    let worst = data
        .queries
        .frames()
        .expect("has frames")
        .iter()
        .zip(back.frames().expect("has frames"))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("largest f32 narrowing error {worst:.2e}");

    let mut damaged = bytes.clone();
    damaged.truncate(bytes.len() - 5);
    println!("truncated file: {}", decode_embeddings(&damaged).unwrap_err());
    damaged = bytes;
    damaged[..4].copy_from_slice(b"RIFF");
    println!("wrong magic:    {}", decode_embeddings(&damaged).unwrap_err());
    Ok(())
}
