//! The bAbI dialog format, the global candidate list, match-type features
//! and the double-silence rewrite.
//!
//! A dialog line is `<id> <user>\t<bot>`; knowledge-base facts are untabbed
//! lines `<id> <restaurant> r_<field> <value>` and join the history as user
//! lines. Dialogs are separated by blank lines or an id reset.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::{read_text, DataError, Result};

pub const SILENCE: &str = "<silence>";
pub const RECOMMENDATION_PREFIX: &str = "what do you think of this option";

/// Fields carried by match-type bits, in bit order.
pub const MATCH_FIELDS: [&str; 7] = ["cuisine", "location", "price", "number", "phone", "address", "restaurant_name"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Speaker {
    User,
    Bot,
}

impl Speaker {
    pub fn token(self) -> &'static str {
        match self {
            Speaker::User => "$u",
            Speaker::Bot => "$r",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Speaker,
    pub words: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogEpisode {
    pub task: u32,
    pub history: Vec<Utterance>,
    pub user_input: Vec<String>,
    pub answer: String,
    pub answer_id: usize,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// All bot utterances the model ranks, in file order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Candidates {
    pub list: Vec<String>,
    index: HashMap<String, usize>,
}

impl Candidates {
    pub fn from_list(list: Vec<String>) -> Self {
        let mut index = HashMap::new();
        for (i, c) in list.iter().enumerate() {
            index.entry(c.clone()).or_insert(i);
        }
        Self { list, index }
    }

    pub fn id(&self, utterance: &str) -> Option<usize> {
        self.index.get(&normalize(utterance)).copied()
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }
}

/// Parses a candidate file (`1 <utterance>` per line); duplicates are kept
/// once.
pub fn parse_candidates(text: &str) -> Candidates {
    let mut seen = HashSet::new();
    let mut list = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let body = match line.split_once(' ') {
            Some((id, rest)) if id.chars().all(|c| c.is_ascii_digit()) => rest,
            _ => line,
        };
        let c = normalize(body);
        if seen.insert(c.clone()) {
            list.push(c);
        }
    }
    Candidates::from_list(list)
}

pub fn load_candidates(path: &Path) -> Result<Candidates> {
    Ok(parse_candidates(&read_text(path)?))
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// One episode per bot turn with all earlier turns and KB lines as history.
pub fn parse_dialog_str(text: &str, task: u32, candidates: &Candidates, origin: &str) -> Result<Vec<DialogEpisode>> {
    let mut out = Vec::new();
    let mut history: Vec<Utterance> = Vec::new();
    let mut prev = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            history.clear();
            prev = 0;
            continue;
        }
        let (id, rest) = raw
            .split_once(' ')
            .ok_or_else(|| parse_err(origin, lineno, "expected `<id> <text>`"))?;
        let id: usize = id
            .parse()
            .map_err(|_| parse_err(origin, lineno, format!("bad line id `{id}`")))?;
        if id == 1 {
            history.clear();
        } else if id <= prev {
            return Err(parse_err(origin, lineno, format!("line id {id} does not follow {prev}")));
        }
        prev = id;
        match rest.split_once('\t') {
            None => history.push(Utterance {
                speaker: Speaker::User,
                words: tokenize(rest),
            }),
            Some((user, bot)) => {
                let answer = normalize(bot);
                let answer_id = candidates
                    .id(&answer)
                    .ok_or_else(|| parse_err(origin, lineno, format!("bot utterance `{answer}` is not a candidate")))?;
                let user_input = tokenize(user);
                out.push(DialogEpisode {
                    task,
                    history: history.clone(),
                    user_input: user_input.clone(),
                    answer,
                    answer_id,
                });
                history.push(Utterance {
                    speaker: Speaker::User,
                    words: user_input,
                });
                history.push(Utterance {
                    speaker: Speaker::Bot,
                    words: tokenize(bot),
                });
            }
        }
    }
    Ok(out)
}

pub fn parse_dialog_file(path: &Path, task: u32, candidates: &Candidates) -> Result<Vec<DialogEpisode>> {
    parse_dialog_str(&read_text(path)?, task, candidates, &path.display().to_string())
}

/// Longest history, in utterances, of any episode.
pub fn max_history(episodes: &[DialogEpisode]) -> usize {
    episodes.iter().map(|e| e.history.len()).max().unwrap_or(0)
}

/// Words of each match field, lowercase.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FieldLexicons {
    pub fields: [BTreeSet<String>; 7],
}

impl FieldLexicons {
    /// Adds one `<restaurant> r_<field> <value>` fact; other lines are
    /// ignored.
    pub fn add_fact(&mut self, words: &[String]) {
        let [name, rel, value] = words else {
            return;
        };
        let Some(field) = rel.strip_prefix("r_") else {
            return;
        };
        self.fields[6].insert(name.clone());
        if let Some(f) = MATCH_FIELDS.iter().position(|m| *m == field) {
            self.fields[f].insert(value.clone());
        }
    }

    /// Collects facts from untabbed lines of dialog or KB text.
    pub fn add_text(&mut self, text: &str) {
        for line in text.lines() {
            if line.contains('\t') {
                continue;
            }
            let words = tokenize(line);
            let body = match words.first() {
                Some(id) if id.chars().all(|c| c.is_ascii_digit()) => &words[1..],
                _ => &words[..],
            };
            self.add_fact(body);
        }
    }

    pub fn field_of(&self, word: &str) -> impl Iterator<Item = usize> + '_ {
        let word = word.to_string();
        (0..MATCH_FIELDS.len()).filter(move |&f| self.fields[f].contains(&word))
    }
}

/// For every candidate, the words it contains, used to answer
/// "which candidates mention word w" quickly.
#[derive(Clone, Debug, Default)]
pub struct CandidateWordIndex {
    by_word: HashMap<String, Vec<u32>>,
}

impl CandidateWordIndex {
    pub fn new(candidates: &Candidates) -> Self {
        let mut by_word: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, c) in candidates.list.iter().enumerate() {
            let words: BTreeSet<&str> = c.split(' ').collect();
            for w in words {
                by_word.entry(w.to_string()).or_default().push(i as u32);
            }
        }
        Self { by_word }
    }

    pub fn containing(&self, word: &str) -> &[u32] {
        self.by_word.get(word).map_or(&[], Vec::as_slice)
    }
}

/// Sparse match bits: `(candidate, field mask)` pairs, sorted by candidate,
/// with bit `f` set when a history word of field `f` occurs in the
/// candidate. The current user input counts as history.
pub fn match_type_features(
    history: &[Utterance],
    user_input: &[String],
    index: &CandidateWordIndex,
    lexicons: &FieldLexicons,
) -> Vec<(u32, u32)> {
    let words: BTreeSet<&str> = history
        .iter()
        .flat_map(|u| u.words.iter())
        .chain(user_input)
        .map(String::as_str)
        .collect();
    let mut masks: std::collections::BTreeMap<u32, u32> = std::collections::BTreeMap::new();
    for w in words {
        for f in lexicons.field_of(w) {
            for &c in index.containing(w) {
                *masks.entry(c).or_insert(0) |= 1 << f;
            }
        }
    }
    masks.into_iter().collect()
}

/// Doubles a lone `<silence>` user input when the gold answer is a
/// restaurant recommendation. Idempotent.
pub fn double_silence_rewrite(episodes: &mut [DialogEpisode]) -> usize {
    let mut changed = 0;
    for e in episodes.iter_mut() {
        if e.answer.starts_with(RECOMMENDATION_PREFIX) && e.user_input == [SILENCE] {
            e.user_input = vec![SILENCE.to_string(), SILENCE.to_string()];
            changed += 1;
        }
    }
    changed
}

/// Paths of one dialog task's files inside a `dialog-bAbI-tasks` directory.
#[derive(Clone, Debug)]
pub struct DialogFiles {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub test_oov: Option<PathBuf>,
}

pub fn dialog_task_files(dir: &Path, task: u32) -> Result<DialogFiles> {
    let entries = std::fs::read_dir(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let prefix = format!("dialog-babi-task{task}-");
    let (mut train, mut dev, mut test, mut oov) = (None, None, None, None);
    for e in entries.flatten() {
        let name = e.file_name().to_string_lossy().into_owned();
        if !name.starts_with(&prefix) {
            continue;
        }
        let slot = if name.ends_with("-trn.txt") {
            &mut train
        } else if name.ends_with("-dev.txt") {
            &mut dev
        } else if name.ends_with("-tst-OOV.txt") {
            &mut oov
        } else if name.ends_with("-tst.txt") {
            &mut test
        } else {
            continue;
        };
        *slot = Some(e.path());
    }
    match (train, dev, test) {
        (Some(train), Some(dev), Some(test)) => Ok(DialogFiles {
            train,
            dev,
            test,
            test_oov: oov,
        }),
        _ => Err(DataError::Missing(format!(
            "{prefix}*-trn.txt / -dev.txt / -tst.txt under {}",
            dir.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands() -> Candidates {
        parse_candidates("1 hello what can i help you with today\n1 i'm on it\n1 what do you think of this option: resto_1\n1 where should it be\n")
    }

    #[test]
    fn two_turns_grow_history() {
        let text = "1 hi\thello what can i help you with today\n2 <SILENCE>\ti'm on it\n";
        let eps = parse_dialog_str(text, 1, &cands(), "t").unwrap();
        assert_eq!(eps.len(), 2);
        assert!(eps[0].history.is_empty());
        assert_eq!(eps[1].history.len(), 2);
        assert_eq!(eps[1].user_input, vec!["<silence>"]);
        assert_eq!(eps[1].answer_id, 1);
    }

    #[test]
    fn kb_lines_are_user_facts() {
        let text = "1 resto_3 R_phone resto_3_phone\n2 hi\ti'm on it\n";
        let eps = parse_dialog_str(text, 4, &cands(), "t").unwrap();
        assert_eq!(eps[0].history[0].speaker, Speaker::User);
        assert_eq!(eps[0].history[0].words, vec!["resto_3", "r_phone", "resto_3_phone"]);
    }

    #[test]
    fn unknown_answer_is_an_error() {
        assert!(parse_dialog_str("1 hi\tgoodbye\n", 1, &cands(), "t").is_err());
    }

    #[test]
    fn silence_rewrite() {
        let text = "1 <SILENCE>\twhat do you think of this option: resto_1\n2 <SILENCE>\twhere should it be\n";
        let mut eps = parse_dialog_str(text, 3, &cands(), "t").unwrap();
        assert_eq!(double_silence_rewrite(&mut eps), 1);
        assert_eq!(eps[0].user_input, vec!["<silence>", "<silence>"]);
        assert_eq!(eps[1].user_input, vec!["<silence>"]);
        let once = eps.clone();
        assert_eq!(double_silence_rewrite(&mut eps), 0);
        assert_eq!(eps, once);
    }

    #[test]
    fn seoul_sets_location_bit() {
        let mut lex = FieldLexicons::default();
        lex.add_text("1 resto_seoul_1 R_location seoul\n");
        let c = Candidates::from_list(vec!["api_call korean seoul four cheap".into(), "hello".into()]);
        let idx = CandidateWordIndex::new(&c);
        let hist = vec![Utterance {
            speaker: Speaker::User,
            words: tokenize("book a table in seoul"),
        }];
        assert_eq!(match_type_features(&hist, &[], &idx, &lex), vec![(0, 1 << 1)]);
        assert!(match_type_features(&[], &[], &idx, &lex).is_empty());
    }
}
