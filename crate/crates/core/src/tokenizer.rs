//! Word-bounded byte-pair encoding over recipe names and instruction text.
//!
//! Words are whitespace-delimited; the final character of each word carries
//! an end-of-word marker so merges never cross word boundaries and decoding
//! can restore single spaces. Round trips are exact for whitespace-normalized
//! text made of characters seen in training.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const END_OF_WORD: &str = "</w>";
const HEADER: &str = "#recipegen-bpe v1";

/// Serializes as its text form (see [`BpeModel::to_text`]).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

impl From<BpeModel> for String {
    fn from(model: BpeModel) -> String {
        model.to_text()
    }
}

impl TryFrom<String> for BpeModel {
    type Error = Error;

    fn try_from(text: String) -> Result<Self> {
        BpeModel::from_text(&text)
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let last = chars.len().saturating_sub(1);
    chars.iter().enumerate().map(|(i, c)| if i == last { format!("{c}{END_OF_WORD}") } else { c.to_string() }).collect()
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Base symbol count for a corpus: every seen character in its word-internal
/// and word-final form.
pub fn base_symbol_count<S: AsRef<str>>(texts: &[S]) -> usize {
    let chars: BTreeSet<char> =
        texts.iter().flat_map(|t| t.as_ref().chars().filter(|c| !c.is_whitespace()).collect::<Vec<_>>()).collect();
    chars.len() * 2
}

/// Greedy BPE: merge the most frequent adjacent pair (ties broken by the
/// lexicographically smallest pair) until the vocabulary reaches
/// `target_vocab` entries or no pair remains.
pub fn train_bpe<S: AsRef<str>>(texts: &[S], target_vocab: usize) -> Result<BpeModel> {
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for text in texts {
        for word in text.as_ref().split_whitespace() {
            *word_counts.entry(word).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Tokenizer("cannot train on an empty corpus".into()));
    }
    let chars: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    let base = chars.len() * 2;
    if target_vocab < base + SPECIALS.len() {
        return Err(Error::Tokenizer(format!(
            "target vocabulary {target_vocab} is smaller than {} base symbols plus {} specials",
            base,
            SPECIALS.len()
        )));
    }
    let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    for c in &chars {
        vocab.push(c.to_string());
        vocab.push(format!("{c}{END_OF_WORD}"));
    }
    let mut known: BTreeSet<String> = vocab.iter().cloned().collect();
    let mut words: Vec<(Vec<String>, usize)> = word_counts.iter().map(|(w, &n)| (word_symbols(w), n)).collect();
    let mut merges = Vec::new();
    while vocab.len() < target_vocab {
        let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (symbols, n) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_default() += n;
            }
        }
        // BTreeMap iterates pairs in ascending order, so keeping the first
        // maximum breaks ties lexicographically.
        let mut best: Option<((&str, &str), usize)> = None;
        for (&pair, &count) in &pair_counts {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some(((left, right), _)) = best else { break };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{right}");
        for (symbols, _) in &mut words {
            if symbols.windows(2).any(|w| w[0] == left && w[1] == right) {
                *symbols = merge_pair(symbols, &left, &right);
            }
        }
        if known.insert(merged.clone()) {
            vocab.push(merged);
        }
        merges.push((left, right));
    }
    Ok(BpeModel::from_parts(merges, vocab))
}

impl BpeModel {
    fn from_parts(merges: Vec<(String, String)>, vocab: Vec<String>) -> Self {
        let ids = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let ranks = merges.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        BpeModel { merges, vocab, ids, ranks }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Subword strings for one word after applying merges in training order.
    fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|&(r, _)| r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            match best {
                Some((l, r)) => symbols = merge_pair(&symbols, &l, &r),
                None => return symbols,
            }
        }
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            for sym in self.segment(word) {
                out.push(self.ids.get(&sym).copied().unwrap_or(UNK));
            }
        }
        out
    }

    /// Inverse of [`encode`](Self::encode). PAD/BOS/EOS are dropped and UNK
    /// renders as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self.vocab.get(id as usize).ok_or_else(|| {
                Error::Tokenizer(format!("token id {id} out of range for vocabulary of {}", self.vocab.len()))
            })?;
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push_str("<unk>"),
                _ => match token.strip_suffix(END_OF_WORD) {
                    Some(stem) => {
                        out.push_str(stem);
                        out.push(' ');
                    }
                    None => out.push_str(token),
                },
            }
        }
        if out.ends_with(' ') {
            out.pop();
        }
        Ok(out)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(HEADER);
        s.push_str("\n[merges]\n");
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s.push_str("[vocab]\n");
        for t in &self.vocab {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Tokenizer(format!("malformed model file: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header"));
        }
        if lines.next() != Some("[merges]") {
            return Err(bad("missing [merges] section"));
        }
        let mut merges = Vec::new();
        let mut vocab = Vec::new();
        let mut in_vocab = false;
        for line in lines {
            if !in_vocab {
                if line == "[vocab]" {
                    in_vocab = true;
                    continue;
                }
                let (l, r) = line.split_once(' ').ok_or_else(|| bad("merge line without a space"))?;
                merges.push((l.to_string(), r.to_string()));
            } else if !line.is_empty() {
                vocab.push(line.to_string());
            }
        }
        if vocab.len() < SPECIALS.len() || vocab[..SPECIALS.len()].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(bad("vocabulary must start with the special tokens"));
        }
        Ok(Self::from_parts(merges, vocab))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the serialized model, used to tie checkpoints to a tokenizer.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
