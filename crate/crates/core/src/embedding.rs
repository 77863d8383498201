//! Reading, trimming and centering dense text-format word embeddings.
//!
//! Two interchange formats are supported:
//!
//! * `glove`: one `word v1 … vd` row per line, dimension inferred from the
//!   first data row;
//! * `word2vec`: identical rows preceded by a `N d` header line.
//!
//! Rows are kept in file order, which for published embeddings is
//! descending frequency order, so "keep the most frequent n words" is
//! simply [`DenseEmbedding::take_top_rows`].

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Text format of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    /// `word v1 … vd` per line, no header.
    Glove,
    /// `N d` header line followed by `word v1 … vd` rows.
    Word2vec,
}

impl EmbeddingFormat {
    /// Parse a user-facing format name (`"glove"` or `"word2vec"`).
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "glove" => Ok(EmbeddingFormat::Glove),
            "word2vec" => Ok(EmbeddingFormat::Word2vec),
            other => Err(Error::validation(format!(
                "unknown embedding format {other:?} (expected \"glove\" or \"word2vec\")"
            ))),
        }
    }
}

/// Ordered set of distinct words with O(1) word → row lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build a vocabulary from words in row order.
    ///
    /// Fails with a validation error if any word repeats.
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    /// Number of words.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Row index of `word`, if present.
    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Word at row `i`, if in range.
    pub fn word(&self, i: usize) -> Option<&str> {
        self.words.get(i).map(|w| w.as_str())
    }

    /// All words in row order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Vocabulary restricted to the first `n` words.
    fn truncated(&self, n: usize) -> Vocabulary {
        // Rebuilding the index is O(n); truncation is rare and cheap.
        Vocabulary::new(self.words[..n].to_vec()).expect("prefix of distinct words is distinct")
    }
}

/// A dense word embedding: a vocabulary plus an `N × d` real matrix.
#[derive(Debug, Clone)]
pub struct DenseEmbedding {
    vocab: Vocabulary,
    matrix: Array2<f64>,
    centered: bool,
}

impl DenseEmbedding {
    /// Wrap a vocabulary and matrix, checking shape and finiteness.
    pub fn new(vocab: Vocabulary, matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != vocab.len() {
            return Err(Error::contract(format!(
                "vocabulary has {} words but matrix has {} rows",
                vocab.len(),
                matrix.nrows()
            )));
        }
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::contract("embedding must have at least one row and one column"));
        }
        if let Some(bad) = matrix.iter().find(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite embedding value {bad}")));
        }
        Ok(DenseEmbedding { vocab, matrix, centered: false })
    }

    /// Parse a text embedding in the given format.
    ///
    /// Line numbers in errors are 1-based; whitespace-only lines are
    /// skipped, and `\r\n` endings are tolerated.
    pub fn parse_text<R: BufRead>(reader: R, format: EmbeddingFormat) -> Result<Self> {
        let mut expected_dim: Option<usize> = None;
        let mut declared_rows: Option<usize> = None;
        let mut header_seen = false;

        let mut words: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut values: Vec<f64> = Vec::new();

        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let mut tokens = line.split_whitespace();
            let Some(first) = tokens.next() else { continue }; // skip blank lines

            if format == EmbeddingFormat::Word2vec && !header_seen {
                let rows: usize = first.parse().map_err(|_| {
                    Error::parse(line_no, format!("bad word2vec header count {first:?}"))
                })?;
                let dim_tok = tokens
                    .next()
                    .ok_or_else(|| Error::parse(line_no, "word2vec header needs two fields"))?;
                let dim: usize = dim_tok.parse().map_err(|_| {
                    Error::parse(line_no, format!("bad word2vec header dimension {dim_tok:?}"))
                })?;
                if tokens.next().is_some() {
                    return Err(Error::parse(line_no, "word2vec header has trailing fields"));
                }
                if dim == 0 {
                    return Err(Error::parse(line_no, "word2vec header declares dimension 0"));
                }
                declared_rows = Some(rows);
                expected_dim = Some(dim);
                header_seen = true;
                continue;
            }

            let word = first.to_string();
            let row_start = values.len();
            for tok in tokens {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("invalid number {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(line_no, format!("non-finite value {tok:?}")));
                }
                values.push(v);
            }
            let row_len = values.len() - row_start;
            if row_len == 0 {
                return Err(Error::parse(line_no, format!("row for {word:?} has no values")));
            }
            match expected_dim {
                None => expected_dim = Some(row_len),
                Some(d) if d != row_len => {
                    let what = if format == EmbeddingFormat::Word2vec && words.is_empty() {
                        "header dimension"
                    } else {
                        "first row"
                    };
                    return Err(Error::parse(
                        line_no,
                        format!("ragged row: {row_len} values, but {what} has {d}"),
                    ));
                }
                Some(_) => {}
            }
            if index.insert(word.clone(), words.len()).is_some() {
                return Err(Error::parse(line_no, format!("duplicate word {word:?}")));
            }
            words.push(word);
        }

        if words.is_empty() {
            return Err(Error::parse(1, "no embedding rows found"));
        }
        if let Some(declared) = declared_rows {
            if declared != words.len() {
                return Err(Error::parse(
                    1,
                    format!("word2vec header declares {declared} rows, file has {}", words.len()),
                ));
            }
        }

        let dim = expected_dim.expect("dimension known once a row was read");
        let matrix = Array2::from_shape_vec((words.len(), dim), values)
            .expect("row count and dimension are consistent by construction");
        let vocab = Vocabulary { words, index };
        Ok(DenseEmbedding { vocab, matrix, centered: false })
    }

    /// Serialize in the given format.
    ///
    /// Values are printed with 17 significant digits, which is enough for
    /// `parse_text` to recover every `f64` bit-exactly.
    pub fn write_text<W: Write>(&self, mut out: W, format: EmbeddingFormat) -> Result<()> {
        if format == EmbeddingFormat::Word2vec {
            writeln!(out, "{} {}", self.n_words(), self.dim())?;
        }
        for (word, row) in self.vocab.words().iter().zip(self.matrix.rows()) {
            write!(out, "{word}")?;
            for v in row {
                write!(out, " {v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Number of words (rows).
    pub fn n_words(&self) -> usize {
        self.matrix.nrows()
    }

    /// Embedding dimension (columns).
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Whether columns have been zero-centered.
    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Keep the first `n` rows (file order, i.e. the most frequent words).
    pub fn take_top_rows(&self, n: usize) -> Result<DenseEmbedding> {
        if n == 0 {
            return Err(Error::contract("take_top_rows needs n ≥ 1"));
        }
        if n > self.n_words() {
            return Err(Error::bounds(format!(
                "requested top {n} rows of an embedding with {} rows",
                self.n_words()
            )));
        }
        Ok(DenseEmbedding {
            vocab: self.vocab.truncated(n),
            matrix: self.matrix.slice(ndarray::s![..n, ..]).to_owned(),
            centered: self.centered,
        })
    }

    /// Subtract each column's mean, making every column sum to ~0.
    ///
    /// Centering an already centered embedding is a no-op up to roundoff.
    pub fn zero_center(mut self) -> DenseEmbedding {
        let means = self.matrix.mean_axis(Axis(0)).expect("embedding has at least one row");
        self.matrix -= &means;
        self.centered = true;
        debug_assert!(self.column_means_negligible());
        self
    }

    /// Check the centering invariant: every column mean is ≤ 1e-9 relative
    /// to the largest magnitude in the matrix.
    fn column_means_negligible(&self) -> bool {
        let scale = self.matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0;
        let means = self.matrix.mean_axis(Axis(0)).expect("non-empty");
        means.iter().all(|m| m.abs() <= 1e-9 * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str, format: EmbeddingFormat) -> Result<DenseEmbedding> {
        DenseEmbedding::parse_text(Cursor::new(text), format)
    }

    #[test]
    fn glove_two_rows() {
        let emb = parse("a 1.0 2.0\nb 3.5 -1.25\n", EmbeddingFormat::Glove).unwrap();
        assert_eq!(emb.n_words(), 2);
        assert_eq!(emb.dim(), 2);
        assert_eq!(emb.vocab().word(0), Some("a"));
        assert_eq!(emb.vocab().get("b"), Some(1));
        assert_eq!(emb.matrix()[[0, 0]], 1.0);
        assert_eq!(emb.matrix()[[1, 1]], -1.25);
        assert!(!emb.is_centered());
    }

    #[test]
    fn word2vec_with_header() {
        let emb = parse("2 3\nking 1 2 3\nqueen 4 5 6\n", EmbeddingFormat::Word2vec).unwrap();
        assert_eq!(emb.n_words(), 2);
        assert_eq!(emb.dim(), 3);
        assert_eq!(emb.matrix()[[1, 2]], 6.0);
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse("a 1 2\nb 3\n", EmbeddingFormat::Glove).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn word2vec_body_disagrees_with_header() {
        let err = parse("1 3\na 1 2\n", EmbeddingFormat::Word2vec).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("header dimension"), "{message}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn word2vec_row_count_mismatch() {
        let err = parse("3 2\na 1 2\nb 3 4\n", EmbeddingFormat::Word2vec).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn non_finite_value_rejected() {
        for bad in ["a nan 1\n", "a inf 1\n", "a -inf 1\n"] {
            let err = parse(bad, EmbeddingFormat::Glove).unwrap_err();
            assert!(matches!(err, Error::Parse { line: 1, .. }), "{bad:?} gave {err}");
        }
    }

    #[test]
    fn malformed_number_rejected() {
        let err = parse("a 1.0 two\n", EmbeddingFormat::Glove).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn duplicate_word_names_token() {
        let err = parse("dog 1\ncat 2\ndog 3\n", EmbeddingFormat::Glove).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("dog"), "{message}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn empty_and_header_only_inputs_fail() {
        assert!(parse("", EmbeddingFormat::Glove).is_err());
        assert!(parse("\n  \n", EmbeddingFormat::Glove).is_err());
        assert!(parse("5 10\n", EmbeddingFormat::Word2vec).is_err());
    }

    #[test]
    fn blank_lines_and_crlf_tolerated() {
        let emb = parse("a 1 2\r\n\r\nb 3 4\r\n", EmbeddingFormat::Glove).unwrap();
        assert_eq!(emb.n_words(), 2);
        assert_eq!(emb.matrix()[[1, 0]], 3.0);
    }

    #[test]
    fn long_token_is_fine() {
        let word = "x".repeat(4096);
        let emb = parse(&format!("{word} 7\n"), EmbeddingFormat::Glove).unwrap();
        assert_eq!(emb.vocab().get(&word), Some(0));
    }

    // Round-trip oracle: serialization at 17 significant digits must give
    // back the identical f64 bit patterns, including awkward values.
    #[test]
    fn serialize_parse_roundtrip_is_bit_exact() {
        let vocab = Vocabulary::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let matrix = ndarray::array![
            [0.1, 1.0 / 3.0, -2.5e-17],
            [1e10, std::f64::consts::PI, -0.0],
            [f64::MIN_POSITIVE, 123456.789_012_345, 6.02e23],
        ];
        let emb = DenseEmbedding::new(vocab, matrix).unwrap();
        for format in [EmbeddingFormat::Glove, EmbeddingFormat::Word2vec] {
            let mut text = Vec::new();
            emb.write_text(&mut text, format).unwrap();
            let back = DenseEmbedding::parse_text(Cursor::new(&text), format).unwrap();
            assert_eq!(back.vocab(), emb.vocab());
            for (x, y) in emb.matrix().iter().zip(back.matrix().iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{x} reparsed as {y}");
            }
        }
    }

    #[test]
    fn take_top_rows_keeps_prefix() {
        let emb = parse("a 1 2\nb 3 4\nc 5 6\n", EmbeddingFormat::Glove).unwrap();
        let top = emb.take_top_rows(2).unwrap();
        assert_eq!(top.n_words(), 2);
        assert_eq!(top.vocab().word(1), Some("b"));
        assert_eq!(top.matrix()[[1, 1]], 4.0);
        assert!(top.vocab().get("c").is_none());
    }

    #[test]
    fn take_top_rows_rejects_bad_n() {
        let emb = parse("a 1\nb 2\n", EmbeddingFormat::Glove).unwrap();
        assert!(matches!(emb.take_top_rows(0), Err(Error::Contract(_))));
        assert!(matches!(emb.take_top_rows(3), Err(Error::Bounds(_))));
    }

    #[test]
    fn zero_center_subtracts_column_means() {
        let emb = parse("a 1\nb 3\n", EmbeddingFormat::Glove).unwrap().zero_center();
        assert!(emb.is_centered());
        assert_eq!(emb.matrix()[[0, 0]], -1.0);
        assert_eq!(emb.matrix()[[1, 0]], 1.0);
    }

    #[test]
    fn zero_center_is_idempotent() {
        let emb = parse("a 0.1 -7.3\nb 2.4 0.02\nc -9 4\n", EmbeddingFormat::Glove)
            .unwrap()
            .zero_center();
        let twice = emb.clone().zero_center();
        for (x, y) in emb.matrix().iter().zip(twice.matrix().iter()) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
    }
}
