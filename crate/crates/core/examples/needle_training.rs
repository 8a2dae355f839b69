//! Train a two-hop model on the synthetic needle task and show that the
//! first hop's attention lands on the planted sentence.
//!
//! cargo run --release --example needle_training

use rmn::data::corpus::{build_story_corpus, hold_out};
use rmn::data::story::parse_story_str;
use rmn::data::synth::needle_text;
use rmn::data::make_batch;
use rmn::train::{TrainConfig, Trainer, Widths};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = parse_story_str(&needle_text(1000, 8, 1), 1, "needle-train")?;
    let test = parse_story_str(&needle_text(200, 8, 2), 1, "needle-test")?;
    let (train, valid) = hold_out(train);
    let corpus = build_story_corpus(vec![("train".into(), train), ("valid".into(), valid), ("test".into(), test)])?;
    print!("{}", corpus.summary());

    let config = TrainConfig {
        g_layers: Widths::fixed(&[64, 32, 1]),
        f_layers: Widths::auto(&[64]),
        lr: 5e-4,
        epochs: 40,
        patience: 10,
        ..TrainConfig::story()
    };
    let mut trainer = Trainer::new(config, &corpus)?;
    trainer.train(&corpus, |r| {
        let valid = r.valid.as_ref().map_or(f64::NAN, |t| 100.0 - t.accuracy_pct());
        println!(
            "epoch {:>2}  loss {:.4}  train err {:5.1}%  valid err {:5.1}%  ({:.1}s)",
            r.epoch, r.train_loss, r.train_error_pct, valid, r.seconds
        );
    })?;
    let table = trainer.test(&corpus, "test")?;
    println!("test accuracy {:.1}%", table.accuracy_pct());

    let test = corpus.episodes("test");
    let refs: Vec<_> = test.iter().collect();
    let batch = make_batch(&refs, corpus.answers.len(), 0);
    let (_, traces, _) = trainer.model.predict(&batch)?;
    for hop in 0..2 {
        let hits = traces
            .iter()
            .zip(test)
            .filter(|(tr, ep)| {
                let a = &tr.hops[hop].alpha;
                let best = (0..a.len()).max_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap_or(0);
                ep.supporting.first() == Some(&(best as u32))
            })
            .count();
        println!("hop {} argmax on the planted sentence: {hits}/{}", hop + 1, test.len());
    }
    Ok(())
}

