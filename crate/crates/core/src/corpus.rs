//! Corpus ingestion and the synthetic-language transforms.
//!
//! A corpus is any UTF-8 text file with one record (verse, paragraph, line)
//! per line. Records are whitespace-tokenized and split into sentences at
//! sentence-final punctuation. The second language of every experiment is a
//! shifted replica of the first: after tokenization every token id is
//! increased by a constant, which yields a perfectly parallel corpus with a
//! known gold dictionary and gold word alignment.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lang {
    Eng,
    Fake,
}

/// A language tag plus the token-id offset that defines it.
/// `shift` is 0 for the base language and the monolingual vocabulary size
/// for the shifted replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LanguageId {
    pub lang: Lang,
    pub shift: u32,
}

impl LanguageId {
    pub fn eng() -> Self {
        LanguageId {
            lang: Lang::Eng,
            shift: 0,
        }
    }

    pub fn fake(shift: u32) -> Self {
        LanguageId {
            lang: Lang::Fake,
            shift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
}

/// Sentence-splitting rule applied to each input line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRule {
    /// Split after a whitespace token that ends with one of these.
    pub terminators: Vec<char>,
    /// Disable splitting entirely (lines arrive pre-split).
    pub enabled: bool,
    /// Hard cap on words per sentence; longer sentences are chunked.
    pub max_words: usize,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule {
            terminators: vec!['.', '!', '?'],
            enabled: true,
            max_words: 256,
        }
    }
}

/// Word-tokenized sentences from one text file.
#[derive(Debug, Clone)]
pub struct RawCorpus {
    pub sentences: Vec<Vec<String>>,
    pub split: Split,
    pub source_name: String,
}

impl RawCorpus {
    pub fn total_words(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    pub fn median_len(&self) -> usize {
        if self.sentences.is_empty() {
            return 0;
        }
        let mut lens: Vec<usize> = self.sentences.iter().map(|s| s.len()).collect();
        lens.sort_unstable();
        lens[lens.len() / 2]
    }
}

/// Load a one-record-per-line text file into word-tokenized sentences.
pub fn load_corpus(path: &Path, split: Split, rule: &SplitRule) -> Result<RawCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    corpus_from_text(&text, split, rule, &path.display().to_string())
}

/// Same as [`load_corpus`] but from an in-memory string.
pub fn corpus_from_text(
    text: &str,
    split: Split,
    rule: &SplitRule,
    source_name: &str,
) -> Result<RawCorpus> {
    let mut sentences = Vec::new();
    for line in text.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let mut current: Vec<String> = Vec::new();
        for w in words {
            current.push(w.to_string());
            let terminal = rule.enabled
                && w.chars()
                    .last()
                    .map(|c| rule.terminators.contains(&c))
                    .unwrap_or(false);
            if terminal || current.len() >= rule.max_words {
                sentences.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            sentences.push(current);
        }
    }
    if sentences.is_empty() {
        return Err(Error::data(format!("empty corpus: {source_name}")));
    }
    Ok(RawCorpus {
        sentences,
        split,
        source_name: source_name.to_string(),
    })
}

/// Shift every token id by the language offset.
/// Identity for the base language (shift 0).
pub fn make_fake(ids: &[u32], lang: LanguageId) -> Result<Vec<u32>> {
    if lang.shift == 0 {
        return Ok(ids.to_vec());
    }
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        if id >= lang.shift {
            return Err(Error::data(format!(
                "make_fake: id {id} out of range (shift {})",
                lang.shift
            )));
        }
        out.push(id + lang.shift);
    }
    Ok(out)
}

/// Exact reversal of a sentence; applying it twice is the identity.
pub fn invert_sentence(ids: &[u32]) -> Vec<u32> {
    ids.iter().rev().copied().collect()
}

/// The two sides of the training corpus, tokenized.
///
/// When `parallel` is true, sentence k on the fake side is the shifted
/// (and, under inv-order, reversed) replica of sentence k on the base side.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub eng: Vec<Vec<u32>>,
    pub fake: Vec<Vec<u32>>,
    pub parallel: bool,
    pub inverted: bool,
    pub shift: u32,
}

impl ParallelCorpus {
    /// Pair tokenized base-language sentences with their shifted replicas.
    pub fn from_tokenized(eng: Vec<Vec<u32>>, fake_lang: LanguageId, invert: bool) -> Result<Self> {
        let mut fake = Vec::with_capacity(eng.len());
        for ids in &eng {
            let mut f = make_fake(ids, fake_lang)?;
            if invert {
                f = invert_sentence(&f);
            }
            fake.push(f);
        }
        Ok(ParallelCorpus {
            eng,
            fake,
            parallel: true,
            inverted: invert,
            shift: fake_lang.shift,
        })
    }

    pub fn len(&self) -> usize {
        self.eng.len().max(self.fake.len())
    }

    pub fn is_empty(&self) -> bool {
        self.eng.is_empty() && self.fake.is_empty()
    }
}

/// Keep the first half of the pairs on the base side only and the second
/// half on the fake side only, so no sentence is seen in both languages.
pub fn split_nonparallel(corpus: &ParallelCorpus) -> Result<ParallelCorpus> {
    if !corpus.parallel {
        return Err(Error::data("split_nonparallel: corpus is not parallel"));
    }
    let n = corpus.eng.len();
    if n < 2 {
        return Err(Error::data("split_nonparallel: need at least 2 sentences"));
    }
    let half = n / 2;
    Ok(ParallelCorpus {
        eng: corpus.eng[..half].to_vec(),
        fake: corpus.fake[half..].to_vec(),
        parallel: false,
        inverted: corpus.inverted,
        shift: corpus.shift,
    })
}

// ---------------------------------------------------------------------------
// corpus archive: header + per-sentence id arrays, little-endian u32
// ---------------------------------------------------------------------------

const ARCHIVE_MAGIC: &[u8; 8] = b"MLCORP01";

/// Write a prepared corpus to the documented binary layout:
/// magic, flags (parallel, inverted), shift, then for each side a u32
/// sentence count followed by, per sentence, a u32 length and that many
/// u32 ids, all little-endian.
pub fn write_archive(corpus: &ParallelCorpus, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.to_path_buf(), e);
    w.write_all(ARCHIVE_MAGIC).map_err(io_err)?;
    w.write_all(&[corpus.parallel as u8, corpus.inverted as u8])
        .map_err(io_err)?;
    w.write_all(&corpus.shift.to_le_bytes()).map_err(io_err)?;
    for side in [&corpus.eng, &corpus.fake] {
        w.write_all(&(side.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for sent in side {
            w.write_all(&(sent.len() as u32).to_le_bytes())
                .map_err(io_err)?;
            for id in sent {
                w.write_all(&id.to_le_bytes()).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_archive(path: &Path) -> Result<ParallelCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut r = BufReader::new(file);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(Error::data(format!(
                "truncated archive: {}",
                path.display()
            )));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 8)?;
    if magic != ARCHIVE_MAGIC {
        return Err(Error::data(format!(
            "bad archive magic in {}",
            path.display()
        )));
    }
    let flags = take(&mut pos, 2)?;
    let (parallel, inverted) = (flags[0] != 0, flags[1] != 0);
    let shift = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut sides = Vec::new();
    for _ in 0..2 {
        let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut side = Vec::with_capacity(n);
        for _ in 0..n {
            let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let bytes = take(&mut pos, len * 4)?;
            let sent: Vec<u32> = bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            side.push(sent);
        }
        sides.push(side);
    }
    let fake = sides.pop().unwrap();
    let eng = sides.pop().unwrap();
    Ok(ParallelCorpus {
        eng,
        fake,
        parallel,
        inverted,
        shift,
    })
}
