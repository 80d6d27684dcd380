//! Word-vector tables in the whitespace-separated GloVe text format and
//! caption embeddings built from them.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Width of caption embeddings fed to the networks.
pub const EMBEDDING_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Inserts or replaces `word` (stored lowercase).
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim(format!(
                "vector for {word:?} has {} values, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("vector for {word:?} is not finite")));
        }
        self.vectors.insert(word.to_lowercase(), vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// One `word v1 v2 ...` line per entry, sorted by word.
    pub fn to_text(&self) -> String {
        let mut words: Vec<_> = self.vectors.keys().collect();
        words.sort();
        let mut out = String::new();
        for w in words {
            out.push_str(w);
            for v in &self.vectors[w] {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Option<WordVectorTable> = None;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format {
                    line: line_no,
                    message: format!("bad number in vector for {word:?}: {e}"),
                })?;
            let t = table.get_or_insert_with(|| WordVectorTable::new(values.len()));
            if values.is_empty() || values.len() != t.dim {
                return Err(Error::Format {
                    line: line_no,
                    message: format!(
                        "vector for {word:?} has {} values, expected {}",
                        values.len(),
                        t.dim
                    ),
                });
            }
            if t.get(word).is_some() {
                log::warn!("duplicate word {word:?} on line {line_no}; keeping the later vector");
            }
            t.insert(word, values).map_err(|e| Error::Format {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        table.ok_or(Error::Format {
            line: 0,
            message: "no word vectors found".into(),
        })
    }
}

pub fn load_vectors(path: impl AsRef<Path>) -> Result<WordVectorTable> {
    let path = path.as_ref();
    WordVectorTable::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Mean word vector of a caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub values: Vec<f64>,
    pub source_caption: String,
}

/// Lowercases, replaces ASCII punctuation with spaces and splits on
/// whitespace.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Averages the vectors of the caption's in-vocabulary tokens; unknown
/// tokens are skipped.
pub fn embed_caption(caption: &str, table: &WordVectorTable) -> Result<TextEmbedding> {
    let mut acc = vec![0.0; table.dim()];
    let mut found = 0usize;
    for tok in tokenize(caption) {
        if let Some(v) = table.get(&tok) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
            found += 1;
        }
    }
    if found == 0 {
        return Err(Error::Embedding(format!(
            "no known words in caption {caption:?}"
        )));
    }
    for a in &mut acc {
        *a /= found as f64;
    }
    Ok(TextEmbedding {
        values: acc,
        source_caption: caption.to_string(),
    })
}

/// A small table covering `words`, drawn from a seeded Gaussian. Each word
/// gets its own stream so adding words never changes existing vectors.
pub fn toy_vector_table<'a>(
    words: impl IntoIterator<Item = &'a str>,
    dim: usize,
    seed: u64,
) -> WordVectorTable {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut table = WordVectorTable::new(dim);
    for w in words {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(word_stream(w));
        let v = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        table.insert(w, v).expect("toy vectors have the table dimension");
    }
    table
}

// FNV-1a over the lowercase word.
fn word_stream(word: &str) -> u64 {
    word.to_lowercase()
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> WordVectorTable {
        WordVectorTable::parse("red 1 2 3\nflower 3 0 -1\na 0.5 0.5 0.5\n").unwrap()
    }

    #[test]
    fn load_two_lines() {
        let t = WordVectorTable::parse("a 1 2\nb 3 4\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 2);
    }

    #[test]
    fn short_line_names_line_number() {
        match WordVectorTable::parse("a 1 2 3\nb 1 2\n") {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_keeps_last() {
        let t = WordVectorTable::parse("a 1 2\nA 3 4\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a").unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn single_and_repeated_words() {
        let t = table();
        assert_eq!(embed_caption("Red", &t).unwrap().values, vec![1.0, 2.0, 3.0]);
        assert_eq!(embed_caption("a a", &t).unwrap().values, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn midpoint_and_punctuation() {
        let e = embed_caption("red, flower!", &table()).unwrap();
        assert_eq!(e.values, vec![2.0, 1.0, 1.0]);
        assert_eq!(e.source_caption, "red, flower!");
        let unknown = embed_caption("red zebra flower", &table()).unwrap();
        assert_eq!(unknown.values, e.values);
    }

    #[test]
    fn order_does_not_matter() {
        let t = table();
        assert_eq!(
            embed_caption("a red flower", &t).unwrap().values,
            embed_caption("flower a red", &t).unwrap().values
        );
    }

    #[test]
    fn no_known_words() {
        assert!(matches!(embed_caption("zebra ...", &table()), Err(Error::Embedding(_))));
        assert!(matches!(embed_caption("", &table()), Err(Error::Embedding(_))));
    }

    #[test]
    fn toy_table_round_trips_through_text() {
        let t = toy_vector_table(["red", "blue"], 5, 3);
        assert_eq!(t, toy_vector_table(["blue", "red"], 5, 3));
        assert_ne!(t.get("red"), t.get("blue"));
        assert_eq!(WordVectorTable::parse(&t.to_text()).unwrap(), t);
    }
}
