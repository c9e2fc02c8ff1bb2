//! Word-level view of a trained embedding table, and the word2vec text
//! format used to export it.
//!
//! The format has a header line `"<rows> <dim>"` followed by one
//! `"<token> <v1> ... <v_dim>"` line per word. Only in-vocabulary tokens are
//! exported; hash-bucket rows have no word to attach them to.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::EmbeddingTable;
use crate::textproc::Vocabulary;

#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Matrix,
}

impl WordVectors {
    pub fn new(words: Vec<String>, vectors: Matrix) -> Result<Self> {
        if words.len() != vectors.rows() {
            return Err(Error::DimensionMismatch {
                expected: words.len(),
                got: vectors.rows(),
            });
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate word {w:?}")));
            }
        }
        Ok(WordVectors { words, index, vectors })
    }

    pub fn from_table(vocab: &Vocabulary, table: &EmbeddingTable) -> Result<Self> {
        if vocab.vocab_size() != table.vocab_size() || vocab.num_buckets() != table.num_buckets() {
            return Err(Error::DimensionMismatch {
                expected: vocab.num_ids(),
                got: table.num_rows(),
            });
        }
        Self::new(vocab.tokens().to_vec(), table.vocab_rows().clone())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index.get(word).map(|&i| self.vectors.row(i))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Multiplies every vector by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.vectors.as_mut_slice().iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn write_word2vec<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim())?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for v in self.vectors.row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_word2vec(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_word2vec(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_word2vec<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e))?,
            None => return Err(Error::parse(path, 1, "missing header")),
        };
        let mut parts = header.split_whitespace();
        let (Some(rows), Some(dim), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(path, 1, "header must be \"<rows> <dim>\""));
        };
        let rows: usize = rows.parse().map_err(|_| Error::parse(path, 1, "bad row count"))?;
        let dim: usize = dim.parse().map_err(|_| Error::parse(path, 1, "bad dimension"))?;

        let mut words = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split(' ');
            let word = fields.next().filter(|w| !w.is_empty()).ok_or_else(|| Error::parse(path, n, "missing word"))?;
            let before = data.len();
            for f in fields {
                data.push(
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(path, n, format!("bad component {f:?}")))?,
                );
            }
            if data.len() - before != dim {
                return Err(Error::parse(
                    path,
                    n,
                    format!("expected {dim} components, found {}", data.len() - before),
                ));
            }
            words.push(word.to_string());
        }
        if words.len() != rows {
            return Err(Error::parse(path, 1, format!("header says {rows} rows, found {}", words.len())));
        }
        Self::new(words, Matrix::from_vec(rows, dim, data))
    }

    pub fn load_word2vec(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_word2vec(BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    #[test]
    fn export_skips_buckets() {
        let vocab = Vocabulary::build(["en:a", "en:b"], 1, 50, crate::textproc::LangMode::Aware).unwrap();
        let table = EmbeddingTable::new(1, 2, 50, 3);
        let wv = WordVectors::from_table(&vocab, &table).unwrap();
        let mut buf = Vec::new();
        wv.write_word2vec(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("2 3\nen:a "));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn read_rejects_ragged_rows() {
        let err = WordVectors::read_word2vec(Cursor::new("2 2\na 1 2\nb 1\n"), Path::new("e.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(WordVectors::read_word2vec(Cursor::new("3 2\na 1 2\n"), Path::new("e.txt")).is_err());
    }

    proptest! {
        #[test]
        fn text_format_round_trips_bitwise(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..10)) {
            let words: Vec<String> = (0..rows.len()).map(|i| format!("l{i}:w{i}")).collect();
            let wv = WordVectors::new(words, Matrix::from_rows(&rows)).unwrap();
            let mut buf = Vec::new();
            wv.write_word2vec(&mut buf).unwrap();
            let back = WordVectors::read_word2vec(Cursor::new(buf), Path::new("e.txt")).unwrap();
            prop_assert_eq!(back, wv);
        }
    }
}
