//! Encodes the same two sentences with every encoder and prints the
//! output width and the first few values.
//!
//! cargo run --release --example encoder_modes

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmn::embed::{EmbeddingKind, Encoder};
use rmn::nn::{uniform, ParamStore, Session};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    // Row 0 is padding.
    store.insert("embed.A", uniform(&mut rng, &[12, 6], 0.1));
    let sentences = vec![vec![3, 4, 5, 0], vec![5, 4, 3, 0]];

    for kind in [EmbeddingKind::Sum, EmbeddingKind::Position, EmbeddingKind::Concat, EmbeddingKind::Lstm, EmbeddingKind::Gru] {
        let enc = Encoder::new(kind, "embed.A", 6, 5, 4, &format!("rnn.{}", kind.name()))?;
        enc.init(&mut store, &mut rng);
        let mut s = Session::eval(&store);
        let out = enc.encode(&mut s, &sentences)?;
        let v = s.value(out);
        let same = v.row(0) == v.row(1);
        println!(
            "{:<9} width {:>2}  first row {:?}  word order {}",
            kind.name(),
            enc.width(),
            v.row(0)[..3].iter().map(|x| (x * 1e3).round() / 1e3).collect::<Vec<_>>(),
            if same { "ignored" } else { "visible" }
        );
    }
    Ok(())
}
