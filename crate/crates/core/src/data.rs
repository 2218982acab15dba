//! Vocabulary, parallel corpora, and the synthetic heterogeneous task.
//!
//! Corpus files are UTF-8 text, one pair per line, `source<TAB>target`,
//! each side whitespace-tokenized.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::rng::Rng;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

/// Lines with more tokens than this on either side are skipped.
pub const MAX_SEQ_LEN: usize = 30;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `source<TAB>target`")]
    Malformed { path: String, line: usize },
    #[error("{path}:{line}: empty source or target")]
    EmptySide { path: String, line: usize },
    #[error("{0}: no usable pairs")]
    Empty(String),
    #[error("synthetic corpus: {0}")]
    Synthetic(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    to_id: HashMap<String, usize>,
    to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// Only the reserved symbols.
    pub fn new() -> Self {
        let mut v = Self {
            to_id: HashMap::new(),
            to_token: Vec::new(),
        };
        for t in RESERVED {
            v.insert(t);
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.to_id.get(token) {
            return id;
        }
        let id = self.to_token.len();
        self.to_id.insert(token.to_string(), id);
        self.to_token.push(token.to_string());
        id
    }

    pub fn len(&self) -> usize {
        self.to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.to_token.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        tokens.into_iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub split: Split,
    pub pairs: Vec<Pair>,
    /// Lines dropped for exceeding [`MAX_SEQ_LEN`].
    pub rejected_long: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            split: self.split,
            pairs: indices.iter().map(|&i| self.pairs[i].clone()).collect(),
            rejected_long: 0,
        }
    }
}

pub enum VocabPolicy<'a> {
    /// Build the vocabulary from this (training) file.
    Build,
    /// Map through an existing vocabulary; unseen tokens become UNK.
    Fixed(&'a Vocabulary),
}

pub fn load_parallel_corpus(
    path: impl AsRef<Path>,
    split: Split,
    policy: VocabPolicy<'_>,
) -> Result<(Corpus, Vocabulary), DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_parallel(&text, &shown, split, policy)
}

/// Parses corpus text; `origin` names the source in errors.
pub fn parse_parallel(
    text: &str,
    origin: &str,
    split: Split,
    policy: VocabPolicy<'_>,
) -> Result<(Corpus, Vocabulary), DataError> {
    let mut raw = Vec::new();
    let mut rejected_long = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((src, tgt)) = line.split_once('\t') else {
            return Err(DataError::Malformed {
                path: origin.into(),
                line: i + 1,
            });
        };
        let s: Vec<&str> = src.split_whitespace().collect();
        let t: Vec<&str> = tgt.split_whitespace().collect();
        if s.is_empty() || t.is_empty() {
            return Err(DataError::EmptySide {
                path: origin.into(),
                line: i + 1,
            });
        }
        if s.len() > MAX_SEQ_LEN || t.len() > MAX_SEQ_LEN {
            rejected_long += 1;
            continue;
        }
        raw.push((s, t));
    }
    if raw.is_empty() {
        return Err(DataError::Empty(origin.into()));
    }
    let vocab = match policy {
        VocabPolicy::Fixed(v) => v.clone(),
        VocabPolicy::Build => {
            let mut v = Vocabulary::new();
            for (s, t) in &raw {
                s.iter().chain(t).for_each(|tok| {
                    v.insert(tok);
                });
            }
            v
        }
    };
    let pairs = raw
        .iter()
        .map(|(s, t)| Pair {
            source: vocab.encode(s.iter().copied()),
            target: vocab.encode(t.iter().copied()),
        })
        .collect();
    Ok((
        Corpus {
            split,
            pairs,
            rejected_long,
        },
        vocab,
    ))
}

/// Which rule produced a synthetic pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grammar {
    /// Target is the source reversed.
    Reverse,
    /// Target maps each source token through [`substitute`].
    Substitute,
}

pub const ALPHABET: usize = 40;
const MIN_LEN: usize = 4;
const MAX_LEN: usize = 9;
/// Token ranges the two grammars draw their sources from. They overlap, so a
/// single token rarely reveals the grammar; the mix of a whole sequence does.
const REVERSE_RANGE: (usize, usize) = (0, 25);
const SUBSTITUTE_RANGE: (usize, usize) = (15, 40);

pub fn symbol(i: usize) -> String {
    format!("t{i}")
}

/// Fixed substitution table on the alphabet: `t_k -> t_{(7k + 3) mod 40}`.
/// It is a bijection without fixed points.
pub fn substitute(k: usize) -> usize {
    (7 * k + 3) % ALPHABET
}

/// Reserved symbols followed by `t0..t39`.
pub fn synthetic_vocabulary() -> Vocabulary {
    let mut v = Vocabulary::new();
    for i in 0..ALPHABET {
        v.insert(&symbol(i));
    }
    v
}

#[derive(Clone, Debug)]
pub struct SyntheticSet {
    pub corpus: Corpus,
    pub grammars: Vec<Grammar>,
}

/// Mixture of two grammars over a shared alphabet; exactly
/// `round(mix * n_pairs)` pairs follow [`Grammar::Reverse`].
pub fn generate_synthetic_heterogeneous(
    seed: u64,
    n_pairs: usize,
    mix: f64,
    split: Split,
) -> Result<SyntheticSet, DataError> {
    if !(mix > 0.0 && mix < 1.0) {
        return Err(DataError::Synthetic(format!("mix must lie in (0, 1), got {mix}")));
    }
    if n_pairs < 2 {
        return Err(DataError::Synthetic(format!("need at least 2 pairs, got {n_pairs}")));
    }
    let vocab = synthetic_vocabulary();
    let id = |k: usize| vocab.id(&symbol(k));
    let mut rng = Rng::new(seed);
    let n_reverse = (mix * n_pairs as f64).round() as usize;
    let mut grammars: Vec<Grammar> = (0..n_pairs)
        .map(|i| {
            if i < n_reverse {
                Grammar::Reverse
            } else {
                Grammar::Substitute
            }
        })
        .collect();
    rng.shuffle(&mut grammars);
    let pairs = grammars
        .iter()
        .map(|g| {
            let (lo, hi) = match g {
                Grammar::Reverse => REVERSE_RANGE,
                Grammar::Substitute => SUBSTITUTE_RANGE,
            };
            let len = MIN_LEN + rng.below(MAX_LEN - MIN_LEN + 1);
            let src: Vec<usize> = (0..len).map(|_| lo + rng.below(hi - lo)).collect();
            let tgt: Vec<usize> = match g {
                Grammar::Reverse => src.iter().rev().copied().collect(),
                Grammar::Substitute => src.iter().map(|&k| substitute(k)).collect(),
            };
            Pair {
                source: src.into_iter().map(id).collect(),
                target: tgt.into_iter().map(id).collect(),
            }
        })
        .collect();
    Ok(SyntheticSet {
        corpus: Corpus {
            split,
            pairs,
            rejected_long: 0,
        },
        grammars,
    })
}

/// Writes pairs in the TAB-separated corpus format.
pub fn format_corpus(corpus: &Corpus, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for p in &corpus.pairs {
        out.push_str(&vocab.decode(&p.source).join(" "));
        out.push('\t');
        out.push_str(&vocab.decode(&p.target).join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_file() {
        let (c, v) = parse_parallel("a b\tc\n", "mem", Split::Train, VocabPolicy::Build).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(v.len(), 7);
        for t in ["a", "b", "c"] {
            assert!(v.contains(t));
        }
        assert_eq!(v.decode(&c.pairs[0].source), ["a", "b"]);
    }

    #[test]
    fn unseen_valid_token_is_unk() {
        let (_, v) = parse_parallel("a b\tc\n", "train", Split::Train, VocabPolicy::Build).unwrap();
        let (c, _) = parse_parallel("a z\tc\n", "valid", Split::Valid, VocabPolicy::Fixed(&v)).unwrap();
        assert_eq!(c.pairs[0].source, vec![v.id("a"), UNK]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_parallel("a\tb\nno tab here\n", "f.tsv", Split::Train, VocabPolicy::Build).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }));
        assert!(err.to_string().contains("f.tsv:2"));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            parse_parallel("", "e", Split::Train, VocabPolicy::Build),
            Err(DataError::Empty(_))
        ));
    }

    #[test]
    fn long_lines_are_counted_and_skipped() {
        let long = vec!["x"; MAX_SEQ_LEN + 1].join(" ");
        let text = format!("a\tb\n{long}\tb\n");
        let (c, _) = parse_parallel(&text, "m", Split::Train, VocabPolicy::Build).unwrap();
        assert_eq!((c.len(), c.rejected_long), (1, 1));
    }

    #[test]
    fn reversal_rule_example() {
        let v = synthetic_vocabulary();
        let src = v.encode(["t3", "t7", "t1"]);
        let rev: Vec<usize> = src.iter().rev().copied().collect();
        assert_eq!(v.decode(&rev), ["t1", "t7", "t3"]);
    }

    #[test]
    fn substitution_is_a_derangement() {
        let mut seen = [false; ALPHABET];
        for k in 0..ALPHABET {
            let s = substitute(k);
            assert_ne!(s, k);
            assert!(!seen[s]);
            seen[s] = true;
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_rule_abiding() {
        let a = generate_synthetic_heterogeneous(5, 50, 0.3, Split::Train).unwrap();
        let b = generate_synthetic_heterogeneous(5, 50, 0.3, Split::Train).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.grammars.iter().filter(|&&g| g == Grammar::Reverse).count(), 15);
        let v = synthetic_vocabulary();
        for (p, g) in a.corpus.pairs.iter().zip(&a.grammars) {
            assert!((4..=9).contains(&p.source.len()));
            assert_eq!(p.source.len(), p.target.len());
            if *g == Grammar::Substitute {
                for (s, t) in p.source.iter().zip(&p.target) {
                    let k: usize = v.token(*s)[1..].parse().unwrap();
                    assert_eq!(v.token(*t), symbol(substitute(k)));
                }
            }
        }
    }

    #[test]
    fn synthetic_argument_checks() {
        assert!(generate_synthetic_heterogeneous(0, 10, 0.0, Split::Train).is_err());
        assert!(generate_synthetic_heterogeneous(0, 10, 1.0, Split::Train).is_err());
        assert!(generate_synthetic_heterogeneous(0, 1, 0.5, Split::Train).is_err());
    }
}
