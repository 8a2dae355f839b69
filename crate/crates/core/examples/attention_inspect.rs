//! Trains on the needle task, then renders one test episode's attention
//! as text and as an HTML heatmap.
//!
//! cargo run --release --example attention_inspect

use rmn::cli::inspect_episode;
use rmn::data::corpus::{build_story_corpus, hold_out};
use rmn::data::story::parse_story_str;
use rmn::data::synth::needle_text;
use rmn::train::{TrainConfig, Trainer, Widths};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = parse_story_str(&needle_text(800, 8, 1), 1, "train")?;
    let test = parse_story_str(&needle_text(20, 8, 2), 1, "test")?;
    let (train, valid) = hold_out(train);
    let corpus = build_story_corpus(vec![("train".into(), train), ("valid".into(), valid), ("test".into(), test)])?;
    let config = TrainConfig {
        g_layers: Widths::fixed(&[64, 32, 1]),
        f_layers: Widths::auto(&[64]),
        lr: 5e-4,
        epochs: 25,
        patience: 8,
        ..TrainConfig::story()
    };
    let mut trainer = Trainer::new(config, &corpus)?;
    trainer.train(&corpus, |_| {})?;

    let report = inspect_episode(&trainer.model, &corpus, "test", 0).map_err(|e| e.message)?;
    print!("{}", report.to_text());
    println!("betas {:?}", report.betas);
    let path = std::env::temp_dir().join("rmn-attention.html");
    std::fs::write(&path, report.to_html())?;
    println!("heatmap written to {}", path.display());
    Ok(())
}
