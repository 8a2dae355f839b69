//! Small synthetic story tasks in the bAbI text format, for tests, demos
//! and desk-scale behavioral checks.
//!
//! - needle: one planted sentence mentions the asked-about person; every
//!   other sentence is about someone else.
//! - two-fact: "where is the OBJECT?" needs the pickup sentence (who holds
//!   it) and that person's latest move, which never names the object.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};

pub const PEOPLE: [&str; 10] = ["mary", "john", "sandra", "daniel", "fred", "bill", "julie", "jeff", "emma", "yann"];
pub const PLACES: [&str; 6] = ["bathroom", "hallway", "kitchen", "garden", "office", "bedroom"];
pub const OBJECTS: [&str; 6] = ["apple", "football", "milk", "box", "key", "book"];

fn cap(w: &str) -> String {
    let mut c = w.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

/// `stories` needle stories of `sentences` statements, one question each.
pub fn needle_text(stories: usize, sentences: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..stories {
        let target = *PEOPLE.choose(&mut rng).expect("people");
        let others: Vec<&str> = PEOPLE.iter().copied().filter(|p| *p != target).collect();
        let plant = rng.gen_range(0..sentences.max(1));
        let mut answer = "";
        for i in 0..sentences.max(1) {
            let place = *PLACES.choose(&mut rng).expect("places");
            let who = if i == plant {
                answer = place;
                target
            } else {
                *others.choose(&mut rng).expect("others")
            };
            out.push_str(&format!("{} {} moved to the {}.\n", i + 1, cap(who), place));
        }
        out.push_str(&format!(
            "{} Where is {}? \t{}\t{}\n",
            sentences.max(1) + 1,
            cap(target),
            answer,
            plant + 1
        ));
    }
    out
}

/// `stories` two-fact stories of `sentences` statements.
pub fn two_fact_text(stories: usize, sentences: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    let people = &PEOPLE[..4];
    let mut made = 0;
    while made < stories {
        let mut lines = Vec::new();
        let mut holder: Vec<Option<(usize, usize)>> = vec![None; OBJECTS.len()];
        let mut last_move: Vec<Option<(usize, &str)>> = vec![None; people.len()];
        for i in 0..sentences {
            let p = rng.gen_range(0..people.len());
            let free: Vec<usize> = (0..OBJECTS.len()).filter(|&o| holder[o].is_none()).collect();
            if !free.is_empty() && rng.gen_bool(0.3) {
                let o = *free.choose(&mut rng).expect("free");
                holder[o] = Some((p, i));
                lines.push(format!("{} {} picked up the {}.", i + 1, cap(people[p]), OBJECTS[o]));
            } else {
                let place = *PLACES.choose(&mut rng).expect("places");
                last_move[p] = Some((i, place));
                lines.push(format!("{} {} went to the {}.", i + 1, cap(people[p]), place));
            }
        }
        let askable: Vec<(usize, usize, usize, &str)> = (0..OBJECTS.len())
            .filter_map(|o| {
                let (p, pick) = holder[o]?;
                let (mv, place) = last_move[p]?;
                Some((o, pick, mv, place))
            })
            .collect();
        let Some(&(o, pick, mv, place)) = askable.choose(&mut rng) else {
            continue;
        };
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        let (a, b) = (pick.min(mv) + 1, pick.max(mv) + 1);
        out.push_str(&format!("{} Where is the {}? \t{}\t{} {}\n", sentences + 1, OBJECTS[o], place, a, b));
        made += 1;
    }
    out
}

/// Writes `qa{task}_{name}_{train,test}.txt` into `dir`.
pub fn write_task(dir: &Path, task: u32, name: &str, train: &str, test: &str) -> Result<()> {
    let io = |source| DataError::Io {
        path: dir.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(format!("qa{task}_{name}_train.txt")), train).map_err(io)?;
    std::fs::write(dir.join(format!("qa{task}_{name}_test.txt")), test).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::story::{parse_story_lines, parse_story_str, serialize_story_lines};

    #[test]
    fn needle_supporting_fact_names_target() {
        let eps = parse_story_str(&needle_text(20, 8, 3), 1, "needle").unwrap();
        assert_eq!(eps.len(), 20);
        for e in &eps {
            let target = &e.question[2];
            let hits: Vec<usize> = (0..e.sentences.len()).filter(|&i| e.sentences[i].contains(target)).collect();
            assert_eq!(hits, e.supporting);
            assert_eq!(e.sentences[hits[0]].last().unwrap(), &e.answer);
        }
    }

    #[test]
    fn two_fact_round_trips() {
        let text = two_fact_text(30, 10, 9);
        let lines = parse_story_lines(&text, "t").unwrap();
        assert_eq!(serialize_story_lines(&lines), text);
        let eps = parse_story_str(&text, 2, "t").unwrap();
        assert!(eps.iter().all(|e| e.supporting.len() == 2));
    }
}
