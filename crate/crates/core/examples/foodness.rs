//! Trains the baseline foodness scorer on synthetic "food" (structured
//! images) versus "non-food" (noise), then filters and evaluates.
//!
//! cargo run --example foodness

use foodcurate::foodness::{evaluate, extract_features, train_baseline, FoodnessLabel, LabelSource};
use foodcurate::synth::{noise_image, structured_image};

fn main() -> foodcurate::Result<()> {
    let sample = |i: u64| {
        if i % 2 == 0 {
            (structured_image(64, i), true)
        } else {
            (noise_image(64, i), false)
        }
    };
    let train: Vec<_> = (0..80).map(sample).map(|(img, y)| (extract_features(&img), y)).collect();
    let scorer = train_baseline(&train, 300, 0.5)?;

    let held_out: Vec<_> = (1000..1060).map(sample).collect();
    let labels: Vec<FoodnessLabel> = held_out
        .iter()
        .enumerate()
        .map(|(i, (_, y))| FoodnessLabel {
            image_id: i.to_string(),
            is_food: *y,
            source: LabelSource::Human,
        })
        .collect();
    let scores: Vec<f64> = held_out
        .iter()
        .map(|(img, _)| scorer.score_features(&extract_features(img)))
        .collect::<foodcurate::Result<_>>()?;
    for threshold in [0.3, 0.5, 0.7] {
        let e = evaluate(&labels, threshold, |id| Ok(scores[id.parse::<usize>().unwrap()]))?;
        println!("accept >= {threshold}: accuracy {:.3}, confusion {:?}", e.accuracy, e.confusion.matrix());
    }
    Ok(())
}
