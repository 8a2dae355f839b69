//! Builds a dialog corpus and shows the match-type features for a
//! response that mentions knowledge-base entities.
//!
//! cargo run --release --example dialog_match -- [DIR] [TASK]
//!
//! Defaults to the bundled fixture dialogs, task 1.

use std::path::PathBuf;

use rmn::data::corpus::prepare_dialog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/dialog"));
    let task: u32 = args.next().map(|t| t.parse()).transpose()?.unwrap_or(1);

    let plain = prepare_dialog(&dir, task, false)?;
    let doubled = prepare_dialog(&dir, task, true)?;
    print!("{}", plain.summary());
    println!("with doubled silence: {} training turns (plain {})", doubled.episodes("train").len(), plain.episodes("train").len());

    let Some(ep) = plain.episodes("train").iter().find(|e| e.match_flags.len() > 1) else {
        println!("no turn with more than one matching candidate");
        return Ok(());
    };
    println!("gold response: {}", plain.answers[ep.answer as usize]);
    for &(cand, mask) in &ep.match_flags {
        println!("  candidate {cand:>4} fields {mask:0w$b}  {}", plain.answers[cand as usize], w = plain.match_fields as usize);
    }
    Ok(())
}
