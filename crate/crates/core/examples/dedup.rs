//! Perceptual hashes of an image and its edits, then near-duplicate
//! clustering of a small category with keeper selection.
//!
//! cargo run --example dedup [threshold]

use foodcurate::dedup::{find_duplicate_clusters, hamming, HashTriple};
use foodcurate::imaging::resize_bilinear;
use foodcurate::manifest::ImageRecord;
use foodcurate::synth::{near_copy, structured_image};

fn main() -> foodcurate::Result<()> {
    let threshold = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let photo = structured_image(128, 1);
    let variants = [
        ("original", photo.clone()),
        ("near copy", near_copy(&photo, 2)),
        ("downscaled", resize_bilinear(&photo, 96, 96)),
        ("mirrored", photo.flip_horizontal()),
        ("unrelated", structured_image(128, 2)),
    ];
    let base = HashTriple::of(&photo);
    println!("{:<11} {:<48} distance", "image", "ahash|phash|dhash");
    let mut records = Vec::new();
    for (i, (name, img)) in variants.iter().enumerate() {
        let h = HashTriple::of(img);
        println!("{name:<11} {h} {:>4}", hamming(&base, &h));
        let mut r = ImageRecord::new(format!("{i}-{}", name.replace(' ', "_")), 0, format!("{name}.png"));
        r.width = img.width();
        r.height = img.height();
        r.byte_size = img.samples().len() as u64;
        r.hash = Some(h);
        records.push(r);
    }
    let refs: Vec<&ImageRecord> = records.iter().collect();
    for c in find_duplicate_clusters(&refs, threshold)? {
        println!(
            "cluster {:?} keeper {} (max distance {})",
            c.member_ids, c.keeper_id, c.max_pairwise_distance
        );
    }
    Ok(())
}
