//! Trains one model per attention scorer on a synthetic two-fact task and
//! prints test error next to wall time.
//!
//! cargo run --release --example feature_map_ablation

use std::time::Instant;

use rmn::data::corpus::{build_story_corpus, hold_out};
use rmn::data::story::parse_story_str;
use rmn::data::synth::two_fact_text;
use rmn::feature_map::FeatureMapKind;
use rmn::train::{TrainConfig, Trainer, Widths};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = parse_story_str(&two_fact_text(1500, 10, 1), 1, "train")?;
    let test = parse_story_str(&two_fact_text(300, 10, 2), 1, "test")?;
    let (train, valid) = hold_out(train);
    let corpus = build_story_corpus(vec![("train".into(), train), ("valid".into(), valid), ("test".into(), test)])?;

    for fm in [FeatureMapKind::Mlp, FeatureMapKind::AbsDiffTwoEmbeddings, FeatureMapKind::GatedInnerProduct, FeatureMapKind::InnerProduct] {
        let config = TrainConfig {
            feature_map: fm,
            g_layers: Widths::fixed(&[64, 32, 1]),
            f_layers: Widths::auto(&[64]),
            lr: 5e-4,
            epochs: 30,
            patience: 8,
            ..TrainConfig::story()
        };
        let t0 = Instant::now();
        let mut trainer = Trainer::new(config, &corpus)?;
        trainer.train(&corpus, |_| {})?;
        let table = trainer.test(&corpus, "test")?;
        println!("{:<24} test error {:5.1}%  ({:.1}s)", fm.name(), table.mean_error_pct(), t0.elapsed().as_secs_f64());
    }
    Ok(())
}
