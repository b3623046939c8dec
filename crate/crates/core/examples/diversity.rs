//! Average-image compressibility and pairwise embedding distance on three
//! controlled corpora: one image repeated, near copies, and unrelated noise.
//!
//! cargo run --release --example diversity

use foodcurate::diversity::{jpeg_size_metric, pairwise_distance_metric};
use foodcurate::scl::{Encoder, TrainConfig};
use foodcurate::synth::{near_copy, noise_image, structured_image};

fn main() -> foodcurate::Result<()> {
    let photo = structured_image(256, 1);
    let copies = vec![photo.clone(); 50];
    let near: Vec<_> = (0..50).map(|s| near_copy(&photo, s)).collect();
    let noise: Vec<_> = (0..50).map(|s| noise_image(256, s)).collect();

    // An untrained encoder still maps identical inputs to identical embeddings.
    let encoder = Encoder::seeded(TrainConfig::default().encoder, 7);
    println!("{:<12} {:>12} {:>10}", "corpus", "avg bytes", "distance");
    for (name, set) in [("copies", &copies), ("near copies", &near), ("noise", &noise)] {
        println!(
            "{name:<12} {:>12} {:>10.6}",
            jpeg_size_metric(set)?,
            pairwise_distance_metric(set, &encoder, 2000, 7)?
        );
    }
    Ok(())
}
