//! WordPiece vocabulary training and greedy longest-match tokenization.
//!
//! The trainer merges the pair with the best likelihood-gain score
//! count(ab) / (count(a) * count(b)) until the vocabulary reaches the target
//! size, breaking ties lexicographically so training is deterministic. The
//! monolingual vocabulary holds the special tokens at ids 0-4, then the
//! alphabet, then merges; if merges run out before the target, the remaining
//! slots are reserved `[unusedN]` entries (these never tokenize and are
//! excluded from sampling pools and dictionaries).
//!
//! `extend_shifted` doubles the table: id i + mono_size is "::" + token(i)
//! for every non-special id. With `shift_special` the fake language gets its
//! own disjoint special ids appended after the doubled range.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Lang, LanguageId, RawCorpus};
use crate::{Error, Result};

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
/// Special strings for the fake language under shift-special.
pub const FAKE_SPECIAL_TOKENS: [&str; 5] = ["[FPAD]", "[FUNK]", "[FCLS]", "[FSEP]", "[FMASK]"];
pub const FAKE_PREFIX: &str = "::";
const CONTINUATION: &str = "##";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl SpecialIds {
    fn at_offset(base: u32) -> Self {
        SpecialIds {
            pad: base,
            unk: base + 1,
            cls: base + 2,
            sep: base + 3,
            mask: base + 4,
        }
    }

    pub fn contains(&self, id: u32) -> bool {
        id == self.pad || id == self.unk || id == self.cls || id == self.sep || id == self.mask
    }
}

/// WordPiece inventory for one or two languages.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
    pub mono_size: u32,
    /// True once `extend_shifted` has produced the two-language table.
    pub doubled: bool,
    pub shift_special: bool,
    eng_specials: SpecialIds,
    fake_specials: SpecialIds,
    /// Per monolingual id: is this a trainable regular piece
    /// (not a special, not an `[unusedN]` reservation)?
    realized: Vec<bool>,
}

impl Vocabulary {
    fn from_mono_tokens(tokens: Vec<String>) -> Self {
        let lookup = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let realized = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| i >= SPECIAL_TOKENS.len() && !t.starts_with("[unused"))
            .collect();
        let mono = tokens.len() as u32;
        Vocabulary {
            tokens,
            lookup,
            mono_size: mono,
            doubled: false,
            shift_special: false,
            eng_specials: SpecialIds::at_offset(0),
            fake_specials: SpecialIds::at_offset(0),
            realized,
        }
    }

    pub fn total_size(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn shift(&self) -> u32 {
        self.mono_size
    }

    pub fn language(&self, lang: Lang) -> LanguageId {
        match lang {
            Lang::Eng => LanguageId::eng(),
            Lang::Fake => LanguageId::fake(self.mono_size),
        }
    }

    /// The special-token ids a sentence of this language uses.
    pub fn specials(&self, lang: Lang) -> SpecialIds {
        match lang {
            Lang::Eng => self.eng_specials,
            Lang::Fake => self.fake_specials,
        }
    }

    /// Is `id` a special token of either language's set?
    pub fn is_special(&self, id: u32) -> bool {
        self.eng_specials.contains(id) || self.fake_specials.contains(id)
    }

    /// Regular, realized ids for one language (excludes specials, shadow
    /// slots and `[unusedN]` reservations). These are the ids eligible for
    /// random replacement, static embeddings and the gold dictionary.
    pub fn regular_ids(&self, lang: Lang) -> Vec<u32> {
        let offset = match lang {
            Lang::Eng => 0,
            Lang::Fake => self.mono_size,
        };
        (0..self.mono_size)
            .filter(|&i| self.realized[i as usize])
            .map(|i| i + offset)
            .collect()
    }

    /// Gold translation pairs (eng id, fake id) induced by the shift.
    pub fn gold_dictionary(&self) -> Vec<(u32, u32)> {
        assert!(self.doubled, "gold dictionary needs the doubled vocabulary");
        self.regular_ids(Lang::Eng)
            .into_iter()
            .map(|i| (i, i + self.mono_size))
            .collect()
    }

    /// Strip piece markers and rejoin into words, using boundary indices.
    pub fn detokenize(&self, t: &Tokenization) -> Vec<String> {
        let mut words = Vec::new();
        for (w, bounds) in t.word_boundaries.iter().enumerate() {
            let end = t.word_boundaries.get(w + 1).copied().unwrap_or(t.ids.len());
            let mut word = String::new();
            for &id in &t.ids[*bounds..end] {
                let base = id % self.mono_size;
                let tok = self.token(base);
                let _ = write!(word, "{}", tok.strip_prefix(CONTINUATION).unwrap_or(tok));
            }
            words.push(word);
        }
        words
    }
}

/// One tokenized word sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenization {
    pub ids: Vec<u32>,
    /// Index into `ids` where each source word begins.
    pub word_boundaries: Vec<usize>,
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Train a monolingual WordPiece vocabulary of exactly `target_size` entries
/// (special tokens included). Greedy longest-match tokenization with the
/// result never emits UNK on the training text.
pub fn train_wordpiece(corpus: &RawCorpus, target_size: usize) -> Result<Vocabulary> {
    // word frequency
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    for sent in &corpus.sentences {
        for w in sent {
            *word_freq.entry(w.as_str()).or_insert(0) += 1;
        }
    }
    // alphabet: every distinct character, both word-initial and continuation
    let mut chars: Vec<char> = {
        let mut set: Vec<char> = word_freq
            .keys()
            .flat_map(|w| w.chars())
            .collect::<std::collections::BTreeSet<char>>()
            .into_iter()
            .collect();
        set.sort_unstable();
        set
    };
    chars.dedup();
    let alphabet_size = 2 * chars.len();
    let budget = target_size as i64 - SPECIAL_TOKENS.len() as i64;
    if budget < alphabet_size as i64 {
        return Err(Error::data(format!(
            "wordpiece: corpus alphabet ({} pieces) exceeds target {} minus {} specials",
            alphabet_size,
            target_size,
            SPECIAL_TOKENS.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(chars.iter().map(|c| c.to_string()));
    tokens.extend(chars.iter().map(|c| format!("{CONTINUATION}{c}")));

    // current segmentation of each distinct word
    let mut words: Vec<(Vec<String>, u64)> = {
        let mut v: Vec<(&str, u64)> = word_freq.into_iter().collect();
        v.sort_unstable(); // deterministic iteration order
        v.into_iter()
            .map(|(w, f)| {
                let pieces: Vec<String> = w
                    .chars()
                    .enumerate()
                    .map(|(i, c)| {
                        if i == 0 {
                            c.to_string()
                        } else {
                            format!("{CONTINUATION}{c}")
                        }
                    })
                    .collect();
                (pieces, f)
            })
            .collect()
    };

    while tokens.len() < target_size {
        // score all adjacent pairs: count(ab) / (count(a) * count(b))
        let mut piece_count: HashMap<&str, u64> = HashMap::new();
        let mut pair_count: HashMap<(&str, &str), u64> = HashMap::new();
        for (pieces, f) in &words {
            for p in pieces {
                *piece_count.entry(p.as_str()).or_insert(0) += f;
            }
            for pair in pieces.windows(2) {
                *pair_count
                    .entry((pair[0].as_str(), pair[1].as_str()))
                    .or_insert(0) += f;
            }
        }
        let mut best: Option<((&str, &str), f64)> = None;
        for (&(a, b), &c) in &pair_count {
            let score = c as f64 / (piece_count[a] as f64 * piece_count[b] as f64);
            let better = match &best {
                None => true,
                Some((bp, bs)) => {
                    score > *bs + 1e-18 || ((score - *bs).abs() <= 1e-18 && (a, b) < *bp)
                }
            };
            if better {
                best = Some(((a, b), score));
            }
        }
        let Some(((a, b), _)) = best else {
            break; // nothing left to merge
        };
        let merged = format!("{a}{}", b.strip_prefix(CONTINUATION).unwrap_or(b));
        let (a, b) = (a.to_string(), b.to_string());
        tokens.push(merged.clone());
        for (pieces, _) in &mut words {
            let mut i = 0;
            while i + 1 < pieces.len() {
                if pieces[i] == a && pieces[i + 1] == b {
                    pieces[i] = merged.clone();
                    pieces.remove(i + 1);
                } else {
                    i += 1;
                }
            }
        }
    }
    // pad out with reserved slots if merges were exhausted early
    let mut unused = 0usize;
    while tokens.len() < target_size {
        tokens.push(format!("[unused{unused}]"));
        unused += 1;
    }
    Ok(Vocabulary::from_mono_tokens(tokens))
}

/// Double a monolingual vocabulary with its "::"-prefixed replica.
/// With `shift_special`, a disjoint special set for the fake language is
/// appended after the doubled range; otherwise both languages share one set.
pub fn extend_shifted(vocab: &Vocabulary, shift_special: bool) -> Vocabulary {
    assert!(!vocab.doubled, "extend_shifted: vocabulary already doubled");
    let mono = vocab.mono_size as usize;
    let mut tokens = vocab.tokens.clone();
    for i in 0..mono {
        tokens.push(format!("{FAKE_PREFIX}{}", vocab.tokens[i]));
    }
    if shift_special {
        tokens.extend(FAKE_SPECIAL_TOKENS.iter().map(|s| s.to_string()));
    }
    let lookup = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let fake_specials = if shift_special {
        SpecialIds::at_offset(2 * mono as u32)
    } else {
        vocab.eng_specials
    };
    Vocabulary {
        tokens,
        lookup,
        mono_size: vocab.mono_size,
        doubled: true,
        shift_special,
        eng_specials: vocab.eng_specials,
        fake_specials,
        realized: vocab.realized.clone(),
    }
}

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

/// Greedy longest-match WordPiece tokenization, shifted into the target
/// language: regular pieces get `lang.shift` added; a word that cannot be
/// segmented becomes the language's UNK special.
pub fn tokenize(words: &[String], vocab: &Vocabulary, lang: LanguageId) -> Tokenization {
    let specials = match lang.lang {
        Lang::Eng => vocab.eng_specials,
        Lang::Fake => vocab.fake_specials,
    };
    let mut ids = Vec::new();
    let mut word_boundaries = Vec::with_capacity(words.len());
    for word in words {
        word_boundaries.push(ids.len());
        match segment_word(word, vocab) {
            Some(pieces) => {
                ids.extend(pieces.into_iter().map(|id| id + lang.shift));
            }
            None => ids.push(specials.unk),
        }
    }
    Tokenization {
        ids,
        word_boundaries,
    }
}

/// Greedy longest-match over the monolingual table; None if the word cannot
/// be fully segmented.
fn segment_word(word: &str, vocab: &Vocabulary) -> Option<Vec<u32>> {
    let mut pieces = Vec::new();
    let bytes = word.as_bytes();
    let mut start = 0usize;
    while start < bytes.len() {
        let mut end = bytes.len();
        let mut found = None;
        while end > start {
            if !word.is_char_boundary(end) {
                end -= 1;
                continue;
            }
            let candidate = if start == 0 {
                word[start..end].to_string()
            } else {
                format!("{CONTINUATION}{}", &word[start..end])
            };
            if let Some(&id) = vocab.lookup.get(&candidate) {
                if id < vocab.mono_size && !vocab.eng_specials.contains(id) {
                    found = Some((id, end));
                    break;
                }
            }
            end -= 1;
        }
        match found {
            Some((id, e)) => {
                pieces.push(id);
                start = e;
            }
            None => return None,
        }
    }
    Some(pieces)
}

// ---------------------------------------------------------------------------
// vocabulary files: tokens one per line + JSON sidecar header
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct VocabMeta {
    mono_size: u32,
    shift: u32,
    doubled: bool,
    shift_special: bool,
    eng_specials: SpecialIds,
    fake_specials: SpecialIds,
}

/// Write `<path>` (one token per line, id = line number) and
/// `<path>.meta.json` with sizes and special ids.
pub fn save_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let body = vocab.tokens.join("\n") + "\n";
    std::fs::write(path, body).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let meta = VocabMeta {
        mono_size: vocab.mono_size,
        shift: vocab.shift(),
        doubled: vocab.doubled,
        shift_special: vocab.shift_special,
        eng_specials: vocab.eng_specials,
        fake_specials: vocab.fake_specials,
    };
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| Error::io(meta_path.clone(), e))
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let meta_path = sidecar_path(path);
    let meta: VocabMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.clone(), e))?,
    )
    .map_err(|e| Error::data(format!("bad vocab meta {}: {e}", meta_path.display())))?;
    let tokens: Vec<String> = body.lines().map(|l| l.to_string()).collect();
    let expected = if meta.doubled {
        2 * meta.mono_size + if meta.shift_special { 5 } else { 0 }
    } else {
        meta.mono_size
    };
    if tokens.len() as u32 != expected {
        return Err(Error::data(format!(
            "vocab file {} has {} tokens, meta expects {expected}",
            path.display(),
            tokens.len()
        )));
    }
    let lookup = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let realized = (0..meta.mono_size as usize)
        .map(|i| i >= SPECIAL_TOKENS.len() && !tokens[i].starts_with("[unused"))
        .collect();
    Ok(Vocabulary {
        tokens,
        lookup,
        mono_size: meta.mono_size,
        doubled: meta.doubled,
        shift_special: meta.shift_special,
        eng_specials: meta.eng_specials,
        fake_specials: meta.fake_specials,
        realized,
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}
