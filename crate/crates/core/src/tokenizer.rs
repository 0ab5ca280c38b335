//! Per-language byte-pair-encoding tokenizers.
//!
//! Text is pre-split on whitespace; each word becomes a sequence of
//! characters whose last symbol carries the end-of-word marker `</w>`.
//! Training greedily merges the most frequent adjacent pair, breaking ties
//! by the lexicographic order of the merged string.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
pub const END_OF_WORD: &str = "</w>";
/// What `decode` prints for an `[UNK]` id.
pub const UNK_MARKER: &str = "<unk>";

pub const DEFAULT_VOCAB_SIZE: usize = 512;
pub const PAPER_VOCAB_SIZE: usize = 50_000;

const HEADER: &str = "BPE v1";
const MERGES_HEADER: &str = "#MERGES";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub mask: u32,
}

impl Specials {
    pub fn contains(&self, id: u32) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask].contains(&id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    id_of: HashMap<String, u32>,
    token_of: Vec<String>,
    pub specials: Specials,
}

impl Vocab {
    /// Builds a vocabulary from tokens in id order. The first five tokens
    /// must be the specials in `[PAD] [UNK] [CLS] [SEP] [MASK]` order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::Invalid("vocabulary must start with the five special tokens".into()));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if id_of.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate token {t:?}")));
            }
        }
        let specials = Specials { pad: 0, unk: 1, cls: 2, sep: 3, mask: 4 };
        Ok(Self { id_of, token_of: tokens, specials })
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_of.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.token_of.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.token_of
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.specials.contains(id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    pub vocab: Vocab,
    pub merges: Vec<(String, String)>,
    /// (left id, right id) -> (rank, merged id)
    merge_ranks: HashMap<(u32, u32), (usize, u32)>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .into_iter()
        .enumerate()
        .map(|(i, c)| if i + 1 == n { format!("{c}{END_OF_WORD}") } else { c.to_string() })
        .collect()
}

/// Smallest vocabulary that can hold the specials and the corpus alphabet.
pub fn minimum_vocab_size<S: AsRef<str>>(corpus: &[S]) -> usize {
    let alphabet: BTreeSet<String> =
        corpus.iter().flat_map(|l| l.as_ref().split_whitespace().flat_map(word_symbols)).collect();
    SPECIALS.len() + alphabet.len()
}

pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<BpeModel> {
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    // Symbols are interned locally; `strings[i]` is the text of symbol i.
    let mut strings: Vec<String> = Vec::new();
    let mut intern: HashMap<String, u32> = HashMap::new();
    let mut sym = |s: String, strings: &mut Vec<String>| -> u32 {
        *intern.entry(s.clone()).or_insert_with(|| {
            strings.push(s);
            (strings.len() - 1) as u32
        })
    };
    let mut words: Vec<(Vec<u32>, usize)> = Vec::with_capacity(word_freq.len());
    for (w, f) in &word_freq {
        let ids = word_symbols(w).into_iter().map(|s| sym(s, &mut strings)).collect();
        words.push((ids, *f));
    }
    let alphabet: BTreeSet<String> = strings.iter().cloned().collect();
    let minimum = SPECIALS.len() + alphabet.len();
    if vocab_size < minimum {
        return Err(Error::VocabTooSmall { requested: vocab_size, minimum });
    }

    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().cloned());
    let mut in_vocab: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut merges = Vec::new();

    while tokens.len() < vocab_size {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (ids, f) in &words {
            for p in ids.windows(2) {
                *counts.entry((p[0], p[1])).or_default() += f;
            }
        }
        let best = counts
            .iter()
            .filter(|(_, c)| **c >= 2)
            .map(|(&(a, b), &c)| (c, format!("{}{}", strings[a as usize], strings[b as usize]), (a, b)))
            .max_by(|x, y| x.0.cmp(&y.0).then_with(|| y.1.cmp(&x.1)));
        let Some((_, merged, (a, b))) = best else { break };
        let new_id = sym(merged.clone(), &mut strings);
        for (ids, _) in words.iter_mut() {
            if ids.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == a && ids[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            *ids = out;
        }
        merges.push((strings[a as usize].clone(), strings[b as usize].clone()));
        if in_vocab.insert(merged.clone()) {
            tokens.push(merged);
        }
    }

    BpeModel::from_parts(Vocab::from_tokens(tokens)?, merges)
}

impl BpeModel {
    pub fn from_parts(vocab: Vocab, merges: Vec<(String, String)>) -> Result<Self> {
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |t: &str| vocab.id(t).ok_or_else(|| Error::Invalid(format!("merge token {t:?} not in vocab")));
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let mi = lookup(&format!("{l}{r}"))?;
            merge_ranks.entry((li, ri)).or_insert((rank, mi));
        }
        Ok(Self { vocab, merges, merge_ranks })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Subword ids of one whitespace-free word.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        let unk = self.vocab.specials.unk;
        let mut ids: Vec<Option<u32>> = word_symbols(word).iter().map(|s| self.vocab.id(s)).collect();
        loop {
            let mut best: Option<(usize, usize, u32)> = None;
            for i in 0..ids.len().saturating_sub(1) {
                if let (Some(a), Some(b)) = (ids[i], ids[i + 1]) {
                    if let Some(&(rank, merged)) = self.merge_ranks.get(&(a, b)) {
                        if best.is_none_or(|(r, _, _)| rank < r) {
                            best = Some((rank, i, merged));
                        }
                    }
                }
            }
            let Some((_, i, merged)) = best else { break };
            ids[i] = Some(merged);
            ids.remove(i + 1);
        }
        ids.into_iter().map(|x| x.unwrap_or(unk)).collect()
    }

    /// `[CLS] subwords… [SEP]`, truncated to `max_len` with `[SEP]` kept last.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
        let sp = self.vocab.specials;
        let mut out = vec![sp.cls];
        let budget = max_len - 1;
        'words: for w in text.split_whitespace() {
            for id in self.encode_word(w) {
                if out.len() >= budget {
                    break 'words;
                }
                out.push(id);
            }
        }
        out.push(sp.sep);
        out
    }

    /// Inverse of `encode` on in-vocabulary text. Specials other than
    /// `[UNK]` are dropped; `[UNK]` prints as [`UNK_MARKER`].
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.vocab.token(id).ok_or(Error::TokenOutOfRange(id))?;
            if id == self.vocab.specials.unk {
                out.push_str(UNK_MARKER);
            } else if self.vocab.is_special(id) {
                continue;
            } else if let Some(stem) = tok.strip_suffix(END_OF_WORD) {
                out.push_str(stem);
                out.push(' ');
            } else {
                out.push_str(tok);
            }
        }
        while out.ends_with(' ') {
            out.pop();
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(HEADER);
        s.push('\n');
        for (i, t) in self.vocab.tokens().iter().enumerate() {
            let _ = writeln!(s, "{i}\t{t}");
        }
        s.push_str(MERGES_HEADER);
        s.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(s, "{l}\t{r}");
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |detail: String| Error::format(origin, detail);
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad(format!("missing {HEADER:?} header")));
        }
        let mut tokens = Vec::new();
        let mut merges = Vec::new();
        let mut in_merges = false;
        for (n, line) in lines.enumerate() {
            if !in_merges && line == MERGES_HEADER {
                in_merges = true;
                continue;
            }
            let (a, b) = line.split_once('\t').ok_or_else(|| bad(format!("line {}: expected a tab", n + 2)))?;
            if in_merges {
                merges.push((a.to_string(), b.to_string()));
            } else {
                let id: usize = a.parse().map_err(|_| bad(format!("line {}: bad id {a:?}", n + 2)))?;
                if id != tokens.len() {
                    return Err(bad(format!("line {}: id {id} out of sequence", n + 2)));
                }
                tokens.push(b.to_string());
            }
        }
        if !in_merges {
            return Err(bad(format!("missing {MERGES_HEADER} section")));
        }
        Self::from_parts(Vocab::from_tokens(tokens)?, merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}
