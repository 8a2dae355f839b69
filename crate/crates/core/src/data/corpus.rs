//! Preprocessed corpora and the `RMND` binary container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "RMND" version kind
//! vocab:   count, then (len, utf-8 bytes) per word
//! answers: count, then (len, utf-8 bytes) per class
//! answer_words match_fields
//! splits:  count, then per split: name, episode count, episodes
//! episode: task answer sentence_count (len ids..)* question_len ids..
//!          supporting_len ids.. flag_count (candidate mask)*
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::dialog::{self, Candidates, CandidateWordIndex, DialogEpisode, FieldLexicons, MATCH_FIELDS};
use super::story::{self, StoryEpisode};
use super::vocab::{Vocabulary, NIL_TOKEN};
use super::{DataError, Result};

pub const MAGIC: &[u8; 4] = b"RMND";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Story,
    Dialog,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Story => "story",
            DatasetKind::Dialog => "dialog",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "story" => Some(DatasetKind::Story),
            "dialog" => Some(DatasetKind::Dialog),
            _ => None,
        }
    }
}

/// An encoded episode ready for batching.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub task: u32,
    pub sentences: Vec<Vec<u32>>,
    pub question: Vec<u32>,
    pub answer: u32,
    /// Memory indices of annotated supporting sentences (story only).
    pub supporting: Vec<u32>,
    /// Sparse match-type bits `(candidate, field mask)` (dialog only).
    pub match_flags: Vec<(u32, u32)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub name: String,
    pub episodes: Vec<Episode>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub kind: DatasetKind,
    pub vocab: Vocabulary,
    /// Answer classes; ids index this list.
    pub answers: Vec<String>,
    /// Leading entries of `answers` that are single words.
    pub answer_words: u32,
    pub match_fields: u32,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Option<&Split> {
        self.splits.iter().find(|s| s.name == name)
    }

    pub fn episodes(&self, name: &str) -> &[Episode] {
        self.split(name).map_or(&[], |s| s.episodes.as_slice())
    }

    fn all_episodes(&self) -> impl Iterator<Item = &Episode> {
        self.splits.iter().flat_map(|s| s.episodes.iter())
    }

    pub fn max_sentence_len(&self) -> usize {
        self.all_episodes()
            .flat_map(|e| e.sentences.iter().map(Vec::len))
            .max()
            .unwrap_or(1)
    }

    pub fn max_question_len(&self) -> usize {
        self.all_episodes().map(|e| e.question.len()).max().unwrap_or(1)
    }

    pub fn max_memory(&self) -> usize {
        self.all_episodes().map(|e| e.sentences.len()).max().unwrap_or(0)
    }

    pub fn tasks(&self) -> Vec<u32> {
        let t: BTreeSet<u32> = self.all_episodes().map(|e| e.task).collect();
        t.into_iter().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u32(match self.kind {
            DatasetKind::Story => 0,
            DatasetKind::Dialog => 1,
        });
        w.strings(self.vocab.words());
        w.strings(&self.answers);
        w.u32(self.answer_words);
        w.u32(self.match_fields);
        w.u32(self.splits.len() as u32);
        for s in &self.splits {
            w.string(&s.name);
            w.u32(s.episodes.len() as u32);
            for e in &s.episodes {
                w.u32(e.task);
                w.u32(e.answer);
                w.u32(e.sentences.len() as u32);
                for sent in &e.sentences {
                    w.ids(sent);
                }
                w.ids(&e.question);
                w.ids(&e.supporting);
                w.u32(e.match_flags.len() as u32);
                for &(c, m) in &e.match_flags {
                    w.u32(c);
                    w.u32(m);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(DataError::Format("bad magic, not an RMND corpus".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DataError::Format(format!("unsupported version {version}")));
        }
        let kind = match r.u32()? {
            0 => DatasetKind::Story,
            1 => DatasetKind::Dialog,
            k => return Err(DataError::Format(format!("unknown dataset kind {k}"))),
        };
        let vocab = Vocabulary::from_words(r.strings()?)?;
        let answers = r.strings()?;
        let answer_words = r.u32()?;
        let match_fields = r.u32()?;
        let nsplits = r.u32()?;
        let mut splits = Vec::new();
        for _ in 0..nsplits {
            let name = r.string()?;
            let n = r.u32()? as usize;
            let mut episodes = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let task = r.u32()?;
                let answer = r.u32()?;
                let ns = r.u32()? as usize;
                let sentences = (0..ns).map(|_| r.ids()).collect::<Result<_>>()?;
                let question = r.ids()?;
                let supporting = r.ids()?;
                let nf = r.u32()? as usize;
                let match_flags = (0..nf).map(|_| Ok((r.u32()?, r.u32()?))).collect::<Result<_>>()?;
                let e = Episode {
                    task,
                    sentences,
                    question,
                    answer,
                    supporting,
                    match_flags,
                };
                check_episode(&e, vocab.len(), answers.len())?;
                episodes.push(e);
            }
            splits.push(Split { name, episodes });
        }
        if r.pos != bytes.len() {
            return Err(DataError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            kind,
            vocab,
            answers,
            answer_words,
            match_fields,
            splits,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized corpus.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Human-readable counts for `prepare` output.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} corpus: {} words, {} answer classes ({} single words), tasks {:?}\n",
            self.kind.name(),
            self.vocab.len(),
            self.answers.len(),
            self.answer_words,
            self.tasks()
        );
        for sp in &self.splits {
            s.push_str(&format!("  {}: {} episodes\n", sp.name, sp.episodes.len()));
        }
        s
    }
}

fn check_episode(e: &Episode, vocab: usize, answers: usize) -> Result<()> {
    if e.sentences.is_empty() {
        return Err(DataError::Format("episode without memory".into()));
    }
    if e.answer as usize >= answers {
        return Err(DataError::Format(format!("answer id {} out of range", e.answer)));
    }
    let ids = e.sentences.iter().flatten().chain(&e.question);
    if let Some(id) = ids.into_iter().find(|&&i| i as usize >= vocab) {
        return Err(DataError::Format(format!("word id {id} out of range")));
    }
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn strings(&mut self, list: &[String]) {
        self.u32(list.len() as u32);
        list.iter().for_each(|s| self.string(s));
    }

    fn ids(&mut self, ids: &[u32]) {
        self.u32(ids.len() as u32);
        ids.iter().for_each(|&i| self.u32(i));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(DataError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DataError::Format("invalid utf-8".into()))
    }

    fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.string()).collect()
    }

    fn ids(&mut self) -> Result<Vec<u32>> {
        let n = self.u32()? as usize;
        if self.buf.len() - self.pos < 4 * n {
            return Err(DataError::Format(format!("truncated id array at byte {}", self.pos)));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

/// Single words first (sorted), then comma-joined multi-word answers
/// (sorted). Returns the list and the single-word count.
pub fn story_answer_classes<'a>(episodes: impl IntoIterator<Item = &'a StoryEpisode>) -> (Vec<String>, usize) {
    let mut words = BTreeSet::new();
    let mut multi = BTreeSet::new();
    for e in episodes {
        for w in e.sentences.iter().flatten().chain(&e.question) {
            words.insert(w.clone());
        }
        for part in e.answer.split(',') {
            words.insert(part.to_string());
        }
        if e.answer.contains(',') {
            multi.insert(e.answer.clone());
        }
    }
    let n = words.len();
    (words.into_iter().chain(multi).collect(), n)
}

/// Windows, tags and encodes named story splits into a corpus. The first
/// split is treated as training data; all splits contribute vocabulary.
pub fn build_story_corpus(splits: Vec<(String, Vec<StoryEpisode>)>) -> Result<Corpus> {
    let (answers, answer_words) = story_answer_classes(splits.iter().flat_map(|(_, e)| e.iter()));
    let answer_ids: BTreeMap<&str, u32> = answers.iter().enumerate().map(|(i, a)| (a.as_str(), i as u32)).collect();
    let mut windowed = Vec::new();
    for (name, eps) in &splits {
        let eps: Vec<StoryEpisode> = eps
            .iter()
            .cloned()
            .map(|e| {
                let mut e = story::window_memory(e);
                story::tag_relative_position(&mut e.sentences);
                e
            })
            .collect();
        windowed.push((name.clone(), eps));
    }
    let vocab = Vocabulary::build(
        windowed
            .iter()
            .flat_map(|(_, eps)| eps.iter())
            .flat_map(|e| e.sentences.iter().flatten().chain(&e.question))
            .map(String::as_str),
    );
    let mut out = Vec::new();
    for (name, eps) in windowed {
        let episodes = eps
            .iter()
            .map(|e| {
                Ok(Episode {
                    task: e.task,
                    sentences: e.sentences.iter().map(|s| vocab.encode_all(s, false)).collect::<Result<_>>()?,
                    question: vocab.encode_all(&e.question, false)?,
                    answer: *answer_ids
                        .get(e.answer.as_str())
                        .ok_or_else(|| DataError::UnknownAnswer(e.answer.clone()))?,
                    supporting: e.supporting.iter().map(|&s| s as u32).collect(),
                    match_flags: Vec::new(),
                })
            })
            .collect::<Result<_>>()?;
        out.push(Split { name, episodes });
    }
    Ok(Corpus {
        kind: DatasetKind::Story,
        vocab,
        answers,
        answer_words: answer_words as u32,
        match_fields: 0,
        splits: out,
    })
}

/// Fraction of each task's training episodes held out for validation.
pub const VALID_FRACTION: f64 = 0.1;

/// Moves the last `VALID_FRACTION` of `train` into a validation split.
pub fn hold_out(mut train: Vec<StoryEpisode>) -> (Vec<StoryEpisode>, Vec<StoryEpisode>) {
    let n_valid = ((train.len() as f64) * VALID_FRACTION).round() as usize;
    let valid = train.split_off(train.len() - n_valid.min(train.len()));
    (train, valid)
}

/// Reads `qa{t}_*_{train,test}.txt` for each task under `dir`.
pub fn prepare_story(dir: &Path, tasks: &[u32]) -> Result<Corpus> {
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for &t in tasks {
        let (tr, te) = story::task_files(dir, t)?;
        let (tr, va) = hold_out(story::parse_story_file(&tr, t)?);
        train.extend(tr);
        valid.extend(va);
        test.extend(story::parse_story_file(&te, t)?);
    }
    build_story_corpus(vec![("train".into(), train), ("valid".into(), valid), ("test".into(), test)])
}

/// Memory rows for a dialog history: `[pos_k, $u|$r, words..]`, or a
/// single `$nil` row when there is no history yet.
pub fn dialog_memory(history: &[dialog::Utterance]) -> Vec<Vec<String>> {
    if history.is_empty() {
        return vec![vec![NIL_TOKEN.to_string()]];
    }
    let mut rows: Vec<Vec<String>> = history
        .iter()
        .map(|u| std::iter::once(u.speaker.token().to_string()).chain(u.words.iter().cloned()).collect())
        .collect();
    story::tag_relative_position(&mut rows);
    rows
}

/// A named dialog split; `oov` splits map unseen words to `<unk>` and do
/// not contribute vocabulary.
pub struct DialogSplit {
    pub name: String,
    pub episodes: Vec<DialogEpisode>,
    pub oov: bool,
}

pub fn build_dialog_corpus(splits: Vec<DialogSplit>, candidates: &Candidates, lexicons: &FieldLexicons) -> Result<Corpus> {
    let memories: Vec<Vec<Vec<Vec<String>>>> = splits
        .iter()
        .map(|s| s.episodes.iter().map(|e| dialog_memory(&e.history)).collect())
        .collect();
    let vocab = Vocabulary::build(
        splits
            .iter()
            .zip(&memories)
            .filter(|(s, _)| !s.oov)
            .flat_map(|(s, m)| {
                let mem = m.iter().flatten().flatten();
                let q = s.episodes.iter().flat_map(|e| e.user_input.iter());
                mem.chain(q)
            })
            .map(String::as_str),
    );
    let index = CandidateWordIndex::new(candidates);
    let mut out = Vec::new();
    for (s, mems) in splits.iter().zip(memories) {
        let episodes = s
            .episodes
            .iter()
            .zip(mems)
            .map(|(e, mem)| {
                Ok(Episode {
                    task: e.task,
                    sentences: mem.iter().map(|r| vocab.encode_all(r, s.oov)).collect::<Result<_>>()?,
                    question: vocab.encode_all(&e.user_input, s.oov)?,
                    answer: e.answer_id as u32,
                    supporting: Vec::new(),
                    match_flags: dialog::match_type_features(&e.history, &e.user_input, &index, lexicons),
                })
            })
            .collect::<Result<_>>()?;
        out.push(Split {
            name: s.name.clone(),
            episodes,
        });
    }
    Ok(Corpus {
        kind: DatasetKind::Dialog,
        vocab,
        answers: candidates.list.clone(),
        answer_words: candidates.len() as u32,
        match_fields: MATCH_FIELDS.len() as u32,
        splits: out,
    })
}

pub const CANDIDATES_FILE: &str = "dialog-babi-candidates.txt";

/// Field lexicons from every `dialog-babi-*.txt` file under `dir`.
pub fn dialog_lexicons(dir: &Path) -> Result<FieldLexicons> {
    let mut lex = FieldLexicons::default();
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|source| DataError::Io {
            path: dir.display().to_string(),
            source,
        })?
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            let n = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            n.starts_with("dialog-babi-") && n.ends_with(".txt") && n != CANDIDATES_FILE
        })
        .collect();
    names.sort();
    for p in names {
        lex.add_text(&super::read_text(&p)?);
    }
    Ok(lex)
}

/// Reads one dialog task from a `dialog-bAbI-tasks` directory.
pub fn prepare_dialog(dir: &Path, task: u32, double_silence: bool) -> Result<Corpus> {
    let cpath = dir.join(CANDIDATES_FILE);
    if !cpath.exists() {
        return Err(DataError::Missing(cpath.display().to_string()));
    }
    let candidates = dialog::load_candidates(&cpath)?;
    let lexicons = dialog_lexicons(dir)?;
    let files = dialog::dialog_task_files(dir, task)?;
    let mut parts = vec![("train", files.train, false), ("valid", files.dev, false), ("test", files.test, false)];
    if let Some(p) = files.test_oov {
        parts.push(("test_oov", p, true));
    }
    let mut splits = Vec::new();
    for (name, path, oov) in parts {
        let mut episodes = dialog::parse_dialog_file(&path, task, &candidates)?;
        if double_silence {
            dialog::double_silence_rewrite(&mut episodes);
        }
        splits.push(DialogSplit {
            name: name.into(),
            episodes,
            oov,
        });
    }
    build_dialog_corpus(splits, &candidates, &lexicons)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Corpus {
        let eps = story::parse_story_str(
            "1 Mary moved to the bathroom.\n2 John went to the hallway.\n3 Where is Mary?\tbathroom\t1\n",
            1,
            "t",
        )
        .unwrap();
        build_story_corpus(vec![("train".into(), eps)]).unwrap()
    }

    #[test]
    fn container_round_trip() {
        let c = tiny();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"RMND");
        assert_eq!(Corpus::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = tiny().to_bytes();
        for cut in [3, 8, bytes.len() / 2, bytes.len() - 1] {
            assert!(Corpus::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn position_tags_enter_vocabulary() {
        let c = tiny();
        assert!(c.vocab.get("pos_1").is_some() && c.vocab.get("pos_2").is_some());
        assert!(c.vocab.get("pos_3").is_none());
        let e = &c.episodes("train")[0];
        assert_eq!(e.sentences[0][0], c.vocab.get("pos_2").unwrap());
    }

    #[test]
    fn multi_word_answers_follow_words() {
        let eps = story::parse_story_str("1 A has milk.\n2 What does A carry?\tmilk,football\t1\n", 8, "t").unwrap();
        let (classes, n) = story_answer_classes(&eps);
        assert_eq!(classes[n..], ["milk,football".to_string()]);
        assert!(classes[..n].contains(&"football".to_string()));
    }
}
