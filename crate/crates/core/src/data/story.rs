//! The bAbI story task format.
//!
//! Each line is `<id> <sentence>` or `<id> <question>\t<answer>\t<supporting
//! ids>`. An id of 1 starts a new story. Every question becomes one episode
//! whose memory is all statements seen so far in its story.

use std::path::{Path, PathBuf};

use super::{read_text, DataError, Result};

/// Memory window for every task except task 3.
pub const MEMORY_WINDOW: usize = 70;
/// Memory window for task 3 (three supporting facts).
pub const MEMORY_WINDOW_TASK3: usize = 130;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoryLine {
    Statement {
        id: usize,
        text: String,
    },
    Question {
        id: usize,
        text: String,
        answer: String,
        supporting: Vec<usize>,
    },
}

impl StoryLine {
    pub fn id(&self) -> usize {
        match self {
            StoryLine::Statement { id, .. } | StoryLine::Question { id, .. } => *id,
        }
    }
}

/// One question with its memory, still as text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoryEpisode {
    pub task: u32,
    pub sentences: Vec<Vec<String>>,
    pub question: Vec<String>,
    /// Comma-joined for multi-word answers, e.g. `milk,football`.
    pub answer: String,
    /// Indices into `sentences` of the annotated supporting facts.
    pub supporting: Vec<usize>,
}

/// Lowercase, split on whitespace, and drop sentence punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| matches!(c, '.' | '?' | '!' | ',')).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses story text into its lines; `origin` only labels errors.
pub fn parse_story_lines(text: &str, origin: &str) -> Result<Vec<StoryLine>> {
    let mut out = Vec::new();
    let mut prev = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (id, rest) = raw
            .split_once(' ')
            .ok_or_else(|| parse_err(origin, lineno, "expected `<id> <text>`"))?;
        let id: usize = id
            .parse()
            .map_err(|_| parse_err(origin, lineno, format!("bad line id `{id}`")))?;
        if id == 0 {
            return Err(parse_err(origin, lineno, "line ids start at 1"));
        }
        if id != 1 && id <= prev {
            return Err(parse_err(origin, lineno, format!("line id {id} does not follow {prev}")));
        }
        prev = id;
        let fields: Vec<&str> = rest.split('\t').collect();
        let line = match fields.len() {
            1 => StoryLine::Statement { id, text: rest.to_string() },
            2 | 3 => {
                let answer = fields[1].trim();
                if answer.is_empty() {
                    return Err(parse_err(origin, lineno, "question without an answer"));
                }
                let supporting = match fields.get(2) {
                    Some(s) => s
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| parse_err(origin, lineno, format!("bad supporting id `{t}`"))))
                        .collect::<Result<Vec<usize>>>()?,
                    None => Vec::new(),
                };
                StoryLine::Question {
                    id,
                    text: fields[0].to_string(),
                    answer: answer.to_string(),
                    supporting,
                }
            }
            _ => return Err(parse_err(origin, lineno, "too many tab-separated fields")),
        };
        out.push(line);
    }
    Ok(out)
}

/// Writes lines back in the dataset format.
pub fn serialize_story_lines(lines: &[StoryLine]) -> String {
    let mut s = String::new();
    for l in lines {
        match l {
            StoryLine::Statement { id, text } => s.push_str(&format!("{id} {text}\n")),
            StoryLine::Question {
                id,
                text,
                answer,
                supporting,
            } => {
                let sup: Vec<String> = supporting.iter().map(usize::to_string).collect();
                s.push_str(&format!("{id} {text}\t{answer}\t{}\n", sup.join(" ")));
            }
        }
    }
    s
}

/// Groups lines into episodes, one per question.
pub fn episodes_from_lines(lines: &[StoryLine], task: u32, origin: &str) -> Result<Vec<StoryEpisode>> {
    let mut out = Vec::new();
    let mut memory: Vec<(usize, Vec<String>)> = Vec::new();
    for l in lines {
        if l.id() == 1 {
            memory.clear();
        }
        match l {
            StoryLine::Statement { id, text } => memory.push((*id, tokenize(text))),
            StoryLine::Question {
                id,
                text,
                answer,
                supporting,
            } => {
                if memory.is_empty() {
                    return Err(parse_err(origin, *id, "question with no preceding statements"));
                }
                let supporting = supporting
                    .iter()
                    .map(|s| {
                        memory
                            .iter()
                            .position(|(mid, _)| mid == s)
                            .ok_or_else(|| parse_err(origin, *id, format!("supporting id {s} is not a statement")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(StoryEpisode {
                    task,
                    sentences: memory.iter().map(|(_, w)| w.clone()).collect(),
                    question: tokenize(text),
                    answer: answer.to_lowercase(),
                    supporting,
                });
            }
        }
    }
    Ok(out)
}

pub fn parse_story_str(text: &str, task: u32, origin: &str) -> Result<Vec<StoryEpisode>> {
    let lines = parse_story_lines(text, origin)?;
    episodes_from_lines(&lines, task, origin)
}

pub fn parse_story_file(path: &Path, task: u32) -> Result<Vec<StoryEpisode>> {
    parse_story_str(&read_text(path)?, task, &path.display().to_string())
}

pub fn window_size(task: u32) -> usize {
    if task == 3 {
        MEMORY_WINDOW_TASK3
    } else {
        MEMORY_WINDOW
    }
}

/// Keeps the most recent `window_size(task)` sentences.
pub fn window_memory(mut ep: StoryEpisode) -> StoryEpisode {
    let keep = window_size(ep.task);
    let n = ep.sentences.len();
    if n > keep {
        let drop = n - keep;
        ep.sentences.drain(..drop);
        ep.supporting = ep.supporting.iter().filter(|&&s| s >= drop).map(|s| s - drop).collect();
    }
    ep
}

pub fn position_token(k: usize) -> String {
    format!("pos_{k}")
}

/// Prepends `pos_k` to every sentence, `k = 1` for the most recent.
pub fn tag_relative_position(sentences: &mut [Vec<String>]) {
    let n = sentences.len();
    for (i, s) in sentences.iter_mut().enumerate() {
        s.insert(0, position_token(n - i));
    }
}

/// Task number from a file name like `qa3_three-supporting-facts_train.txt`.
pub fn task_from_file_name(name: &str) -> Option<u32> {
    let rest = name.strip_prefix("qa")?;
    let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok().filter(|t| (1..=20).contains(t))
}

/// `(train, test)` files of one task in a bAbI directory such as `en-10k`.
pub fn task_files(dir: &Path, task: u32) -> Result<(PathBuf, PathBuf)> {
    let entries = std::fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let (mut train, mut test) = (None, None);
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if task_from_file_name(&name) != Some(task) {
            continue;
        }
        if name.ends_with("_train.txt") {
            train = Some(e.path());
        } else if name.ends_with("_test.txt") {
            test = Some(e.path());
        }
    }
    match (train, test) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(DataError::Missing(format!(
            "qa{task}_*_train.txt / qa{task}_*_test.txt under {}",
            dir.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_episode() {
        let eps = parse_story_str("1 Mary moved to the bathroom.\n2 Where is Mary?\tbathroom\t1\n", 1, "t").unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].sentences, vec![vec!["mary", "moved", "to", "the", "bathroom"]]);
        assert_eq!(eps[0].question, vec!["where", "is", "mary"]);
        assert_eq!(eps[0].answer, "bathroom");
        assert_eq!(eps[0].supporting, vec![0]);
    }

    #[test]
    fn id_reset_clears_memory() {
        let text = "1 A went home.\n2 Where is A?\thome\t1\n1 B went out.\n2 Where is B?\tout\t1\n";
        let eps = parse_story_str(text, 1, "t").unwrap();
        assert_eq!(eps[1].sentences.len(), 1);
        assert_eq!(eps[1].sentences[0][0], "b");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_story_str("1 A went home.\nx Where?\thome\t1\n", 1, "f.txt").unwrap_err();
        assert!(err.to_string().starts_with("f.txt:2:"), "{err}");
        let err = parse_story_str("1 A.\n3 B.\n2 C.\n", 1, "f.txt").unwrap_err();
        assert!(err.to_string().starts_with("f.txt:3:"), "{err}");
    }

    #[test]
    fn windows() {
        let mk = |n: usize, task| StoryEpisode {
            task,
            sentences: (0..n).map(|i| vec![i.to_string()]).collect(),
            question: vec![],
            answer: "a".into(),
            supporting: vec![0, n - 1],
        };
        let w = window_memory(mk(80, 1));
        assert_eq!(w.sentences.len(), 70);
        assert_eq!(w.sentences[0], vec!["10"]);
        assert_eq!(w.supporting, vec![69]);
        assert_eq!(window_memory(mk(200, 3)).sentences.len(), 130);
        assert_eq!(window_memory(mk(5, 1)), mk(5, 1));
    }

    #[test]
    fn position_tags() {
        let mut s = vec![vec!["a".to_string()], vec!["b".into()], vec!["c".into()]];
        tag_relative_position(&mut s);
        assert_eq!(s[0][0], "pos_3");
        assert_eq!(s[2], vec!["pos_1", "c"]);
    }

    #[test]
    fn task_numbers() {
        assert_eq!(task_from_file_name("qa3_three-supporting-facts_train.txt"), Some(3));
        assert_eq!(task_from_file_name("qa20_agents-motivations_test.txt"), Some(20));
        assert_eq!(task_from_file_name("readme.txt"), None);
    }
}
