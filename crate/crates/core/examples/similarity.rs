//! Pool frame features, score queries against a gallery, and turn one row of
//! scores into a temperature-scaled distribution.
//!
//! cargo run --example similarity

use hubtta::embedding::{cosine_similarity, l2_normalize, ProbabilityRow};
use hubtta::EmbeddingSet;
use ndarray::{array, Array3};

fn main() -> hubtta::Result<()> {
    // two videos with three frames each, four dimensions
    let frames = Array3::from_shape_vec(
        (2, 3, 4),
        vec![
            1.0, 0.2, 0.0, 0.1, 0.9, 0.3, 0.1, 0.0, 1.1, 0.1, 0.0, 0.2, //
            0.0, 1.0, 0.4, 0.0, 0.1, 0.8, 0.5, 0.1, 0.0, 0.9, 0.6, 0.0,
        ],
    )
    .expect("shape matches");
    let videos = EmbeddingSet::from_frames(frames)?;
    let captions = EmbeddingSet::new(array![[1.0, 0.1, 0.0, 0.0], [0.0, 1.0, 0.5, 0.0], [0.3, 0.3, 0.3, 0.3],])?;

    let s = cosine_similarity(&l2_normalize(&videos)?, &l2_normalize(&captions)?)?;
    println!("scores:\n{:.4}", s.scores);
    println!("rankings: {:?}", s.rankings());

    for tau in [1.0, 0.1, 0.02] {
        let row = ProbabilityRow::from_scores(s.scores.row(0).as_slice().expect("contiguous"), 1.0 / tau)?;
        println!("tau {tau:<5} p = {:.4?}  entropy {:.4}", row.p, row.entropy);
    }
    Ok(())
}
