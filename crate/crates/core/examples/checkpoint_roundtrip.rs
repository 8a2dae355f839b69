//! Trains for two epochs, saves an RMN1 checkpoint, reloads it and checks
//! that the reloaded model predicts exactly what the original does.
//!
//! cargo run --release --example checkpoint_roundtrip

use rmn::data::corpus::{build_story_corpus, hold_out};
use rmn::data::make_batch;
use rmn::data::story::parse_story_str;
use rmn::data::synth::needle_text;
use rmn::train::checkpoint::{load_checkpoint, save_checkpoint};
use rmn::train::{TrainConfig, Trainer, Widths};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = parse_story_str(&needle_text(200, 6, 5), 1, "train")?;
    let test = parse_story_str(&needle_text(50, 6, 6), 1, "test")?;
    let (train, valid) = hold_out(train);
    let corpus = build_story_corpus(vec![("train".into(), train), ("valid".into(), valid), ("test".into(), test)])?;

    let config = TrainConfig {
        g_layers: Widths::fixed(&[32, 1]),
        f_layers: Widths::auto(&[32]),
        epochs: 2,
        ..TrainConfig::story()
    };
    let mut trainer = Trainer::new(config, &corpus)?;
    trainer.train(&corpus, |_| {})?;

    let path = std::env::temp_dir().join("rmn-example.rmn1");
    save_checkpoint(&path, &trainer.checkpoint())?;
    let loaded = load_checkpoint(&path)?;
    let model = loaded.model()?;
    println!("{} bytes, {} parameters, epoch {}", std::fs::metadata(&path)?.len(), model.params.param_count(), loaded.state.epoch);

    let refs: Vec<_> = corpus.episodes("test").iter().collect();
    let batch = make_batch(&refs, corpus.answers.len(), 0);
    let (a, _, _) = trainer.model.predict(&batch)?;
    let (b, _, _) = model.predict(&batch)?;
    println!("predictions identical after reload: {}", a == b);
    Ok(())
}
