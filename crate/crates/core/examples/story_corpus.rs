//! Parses bAbI story files, builds a corpus and round-trips it through the
//! RMND container.
//!
//! cargo run --release --example story_corpus -- [DIR] [TASK...]
//!
//! Defaults to the bundled fixtures (tasks 1 and 8).

use std::path::PathBuf;

use rmn::data::corpus::prepare_story;
use rmn::data::Corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/story"));
    let mut tasks: Vec<u32> = args.map(|a| a.parse()).collect::<Result<_, _>>()?;
    if tasks.is_empty() {
        tasks = vec![1, 8];
    }
    let corpus = prepare_story(&dir, &tasks)?;
    print!("{}", corpus.summary());

    let ep = &corpus.episodes("train")[0];
    let words = |ids: &[u32]| ids.iter().filter(|&&i| i != 0).filter_map(|&i| corpus.vocab.word(i)).collect::<Vec<_>>().join(" ");
    for (i, s) in ep.sentences.iter().enumerate() {
        println!("  {:>2} {}", i + 1, words(s));
    }
    println!("  Q  {}?  A: {}  supporting {:?}", words(&ep.question), corpus.answers[ep.answer as usize], ep.supporting);

    let path = std::env::temp_dir().join("rmn-example.rmnd");
    corpus.write(&path)?;
    let back = Corpus::read(&path)?;
    println!("RMND round trip equal: {}  digest {}", back == corpus, &back.digest()[..16]);
    Ok(())
}
