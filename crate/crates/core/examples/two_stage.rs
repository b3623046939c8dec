//! Contrastive pretraining then a linear probe, compared with the same probe
//! on a random frozen encoder.
//!
//! cargo run --release --example two_stage -- [epochs] [config-json] [data-seed]

use std::time::Instant;

use foodcurate::scl::nn::prepare_image;
use foodcurate::scl::train::{evaluate_topk, train_stage1_with, train_stage2, LabeledImages, Stage1Model};
use foodcurate::scl::TrainConfig;
use foodcurate::synth::{textured_blob_set, TEXTURES};

fn main() -> foodcurate::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|a| a.parse().ok());
    let cfg: TrainConfig = match args.next() {
        Some(json) => serde_json::from_str(&json)?,
        None => TrainConfig::default(),
    };
    let cfg = TrainConfig {
        epochs: epochs.unwrap_or(cfg.epochs),
        ..cfg
    };
    let data_seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let (imgs, labels) = textured_blob_set(300, 64, data_seed);
    let images = imgs.iter().map(|i| prepare_image(i, cfg.encoder.input_side)).collect();
    let names = TEXTURES.iter().map(|s| s.to_string()).collect();
    let (train, test) = LabeledImages::new(images, labels, names)?.split(0.3, data_seed);

    let t = Instant::now();
    let stage1 = train_stage1_with(&train, &cfg, |e, l| {
        if e % 10 == 0 || e + 1 == cfg.epochs {
            println!("stage1 epoch {e:3}  loss {l:.4}");
        }
    })?;
    println!("stage1: {:.1?}", t.elapsed());

    let random = Stage1Model::init_for(&cfg, &train)?.encoder;
    for (name, encoder) in [("scl", &stage1.encoder), ("random", &random)] {
        let probe = train_stage2(encoder, &train, &cfg)?;
        println!(
            "{name:>6} probe: train top-1 {:.3}  test top-1 {:.3}  test top-2 {:.3}",
            evaluate_topk(&probe, &train, 1)?,
            evaluate_topk(&probe, &test, 1)?,
            evaluate_topk(&probe, &test, 2)?,
        );
    }
    Ok(())
}
