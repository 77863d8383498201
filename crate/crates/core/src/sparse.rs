//! Binary lifting matrices and sparse integer sentence vectors.
//!
//! [`binarize`] turns a trained non-negative factor into a 0/1 matrix by
//! keeping the `N·k` largest entries **globally** — not `k` per row — so
//! words may end up with more or fewer than `k` active dimensions while
//! the total is exactly `N·k`. Word rows and sentence encodings are
//! [`SparseCountVector`]s: sorted `(dimension, count)` pairs with exact
//! integer arithmetic for inner products and squared distances.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::embedding::Vocabulary;
use crate::error::{Error, Result};

/// Magic first token of the lifting-matrix text format.
const LIFTING_HEADER_TAG: &str = "#splift";
const LIFTING_HEADER_VERSION: &str = "v1";

/// Sparse binary lifting matrix: per-word ascending active-dimension
/// lists in a `d′`-dimensional space, `N·k` active entries in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftingMatrix {
    dimension: usize,
    hash_length: usize,
    rows: Vec<Vec<u32>>,
}

impl LiftingMatrix {
    /// Wrap per-word index lists, enforcing the structural invariants:
    /// strictly ascending indices below `dimension` in every row, and
    /// exactly `rows.len() · hash_length` indices overall.
    pub fn new(dimension: usize, hash_length: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("lifting matrix needs at least one row"));
        }
        if hash_length == 0 || hash_length > dimension {
            return Err(Error::contract(format!(
                "hash length {hash_length} must lie in 1..={dimension}"
            )));
        }
        let mut total = 0usize;
        for (i, row) in rows.iter().enumerate() {
            total += row.len();
            for pair in row.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(Error::validation(format!(
                        "row {i} indices are not strictly ascending"
                    )));
                }
            }
            if let Some(&last) = row.last() {
                if last as usize >= dimension {
                    return Err(Error::validation(format!(
                        "row {i} index {last} exceeds dimension {dimension}"
                    )));
                }
            }
        }
        let expected = rows.len() * hash_length;
        if total != expected {
            return Err(Error::validation(format!(
                "lifting matrix stores {total} indices, expected {}·{hash_length} = {expected}",
                rows.len()
            )));
        }
        Ok(LiftingMatrix { dimension, hash_length, rows })
    }

    /// Number of words.
    pub fn n_words(&self) -> usize {
        self.rows.len()
    }

    /// Lifted space dimension `d′`.
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Average active dimensions per word `k`.
    pub fn hash_length(&self) -> usize {
        self.hash_length
    }

    /// Active dimensions of word `i`, ascending.
    pub fn row(&self, i: usize) -> Result<&[u32]> {
        self.rows
            .get(i)
            .map(|r| r.as_slice())
            .ok_or_else(|| Error::bounds(format!("word row {i} of {}", self.rows.len())))
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    /// Word row as a count vector (every active dimension counted once).
    pub fn word_vector(&self, i: usize) -> Result<SparseCountVector> {
        let entries = self.row(i)?.iter().map(|&d| (d, 1u64)).collect();
        SparseCountVector::new(self.dimension, entries)
    }

    /// Number of words with no active dimension at all. The global top
    /// selection can starve weak words; reports surface how many.
    pub fn empty_row_count(&self) -> usize {
        self.rows.iter().filter(|r| r.is_empty()).count()
    }
}

/// Pick the `N·k` globally largest entries of a non-negative matrix.
///
/// Entries strictly above the cut always survive; entries exactly at the
/// cut are admitted in ascending flat-index order (`i·d′ + j`) until the
/// count is exact. Implemented as a selection pass for the threshold plus
/// one ordered sweep, so no full sort of the `N·d′` values happens.
pub fn binarize(y: &Array2<f64>, k: usize) -> Result<LiftingMatrix> {
    let (n, dp) = y.dim();
    if n == 0 || dp == 0 {
        return Err(Error::contract("binarize needs a non-empty matrix"));
    }
    if k == 0 || k > dp {
        return Err(Error::contract(format!("k = {k} must lie in 1..={dp}")));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::validation(format!(
            "binarize input must be finite and non-negative, found {bad}"
        )));
    }

    let total = n * k;
    // Selection pass: the value at descending rank `total` is the cut.
    let mut scratch: Vec<f64> = y.iter().copied().collect();
    let (_, threshold, _) = scratch.select_nth_unstable_by(total - 1, |a, b| b.total_cmp(a));
    let threshold = *threshold;

    // At most total−1 entries can exceed the total-th largest value.
    let above = y.iter().filter(|v| **v > threshold).count();
    debug_assert!(above < total);
    let mut at_threshold_budget = total - above;

    // Ordered sweep in flat order resolves ties deterministically.
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::new();
        for j in 0..dp {
            let v = y[[i, j]];
            if v > threshold {
                row.push(j as u32);
            } else if v == threshold && at_threshold_budget > 0 {
                at_threshold_budget -= 1;
                row.push(j as u32);
            }
        }
        rows.push(row);
    }
    debug_assert_eq!(at_threshold_budget, 0);
    LiftingMatrix::new(dp, k, rows)
}

/// Sparse non-negative integer vector: ascending `(dimension, count)`
/// pairs with `count ≥ 1`, in a space of fixed dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseCountVector {
    dimension: usize,
    entries: Vec<(u32, u64)>,
}

impl SparseCountVector {
    /// Wrap entries, enforcing ascending distinct indices below
    /// `dimension` and positive counts.
    pub fn new(dimension: usize, entries: Vec<(u32, u64)>) -> Result<Self> {
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::validation("entry indices must be strictly ascending"));
            }
        }
        if let Some(&(last, _)) = entries.last() {
            if last as usize >= dimension {
                return Err(Error::validation(format!(
                    "index {last} exceeds dimension {dimension}"
                )));
            }
        }
        if entries.iter().any(|&(_, c)| c == 0) {
            return Err(Error::validation("zero counts must be omitted, not stored"));
        }
        Ok(SparseCountVector { dimension, entries })
    }

    /// The all-zero vector.
    pub fn empty(dimension: usize) -> Self {
        SparseCountVector { dimension, entries: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of nonzero dimensions.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries as ascending `(dimension, count)` pairs.
    pub fn entries(&self) -> &[(u32, u64)] {
        &self.entries
    }

    /// Element-wise sum; both vectors must share the same dimension.
    pub fn add(&self, other: &SparseCountVector) -> Result<SparseCountVector> {
        self.check_dimension(other)?;
        let mut entries = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    entries.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    entries.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    entries.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        entries.extend_from_slice(&a[i..]);
        entries.extend_from_slice(&b[j..]);
        Ok(SparseCountVector { dimension: self.dimension, entries })
    }

    /// Exact integer inner product over the shared support (merge join).
    pub fn inner_product(&self, other: &SparseCountVector) -> Result<u64> {
        self.check_dimension(other)?;
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut acc = 0u64;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(acc)
    }

    /// Exact squared Euclidean distance over the union of supports.
    pub fn euclidean_distance_sq(&self, other: &SparseCountVector) -> Result<u64> {
        self.check_dimension(other)?;
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut acc = 0u64;
        while i < a.len() && j < b.len() {
            let d = match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    let d = a[i].1;
                    i += 1;
                    d
                }
                std::cmp::Ordering::Greater => {
                    let d = b[j].1;
                    j += 1;
                    d
                }
                std::cmp::Ordering::Equal => {
                    let d = a[i].1.abs_diff(b[j].1);
                    i += 1;
                    j += 1;
                    d
                }
            };
            acc += d * d;
        }
        for &(_, c) in &a[i..] {
            acc += c * c;
        }
        for &(_, c) in &b[j..] {
            acc += c * c;
        }
        Ok(acc)
    }

    fn check_dimension(&self, other: &SparseCountVector) -> Result<()> {
        if self.dimension != other.dimension {
            return Err(Error::contract(format!(
                "dimension mismatch: {} vs {}",
                self.dimension, other.dimension
            )));
        }
        Ok(())
    }
}

/// Normalize a raw token: lowercase, strip leading and trailing
/// non-alphanumeric characters, and drop the token if nothing remains.
pub fn normalize_token(raw: &str) -> Option<String> {
    let lowered = raw.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_string())
    }
}

/// Bag-of-words sentence encoding: the sum of the word rows of every
/// normalized token found in the vocabulary. Unknown tokens contribute
/// nothing, so the empty and all-unknown sentences encode to zero.
///
/// Encoding is linear by construction: encoding a concatenation equals
/// the sum of the two encodings.
pub fn encode_sentence<I, T>(
    tokens: I,
    z: &LiftingMatrix,
    vocab: &Vocabulary,
) -> Result<SparseCountVector>
where
    I: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    if vocab.len() != z.n_words() {
        return Err(Error::contract(format!(
            "vocabulary has {} words but the lifting matrix has {} rows",
            vocab.len(),
            z.n_words()
        )));
    }
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for token in tokens {
        let Some(word) = normalize_token(token.as_ref()) else { continue };
        let Some(row) = vocab.get(&word) else { continue };
        for &dim in z.row(row)? {
            *counts.entry(dim).or_insert(0) += 1;
        }
    }
    SparseCountVector::new(z.dimension(), counts.into_iter().collect())
}

/// Write the lifting matrix text format:
/// a `#splift v1 N=<N> d=<d′> k=<k>` header, then one
/// `<word> <idx1> <idx2> …` line per word with ascending indices.
pub fn write_lifting<W: Write>(z: &LiftingMatrix, vocab: &Vocabulary, mut out: W) -> Result<()> {
    if vocab.len() != z.n_words() {
        return Err(Error::contract(format!(
            "vocabulary has {} words but the lifting matrix has {} rows",
            vocab.len(),
            z.n_words()
        )));
    }
    writeln!(
        out,
        "{LIFTING_HEADER_TAG} {LIFTING_HEADER_VERSION} N={} d={} k={}",
        z.n_words(),
        z.dimension(),
        z.hash_length()
    )?;
    for (word, row) in vocab.words().iter().zip(z.rows()) {
        write!(out, "{word}")?;
        for idx in row {
            write!(out, " {idx}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Read back a file produced by [`write_lifting`]. The parse re-checks
/// every structural invariant, so a hand-edited file that breaks
/// ascending order or the `N·k` total is rejected.
pub fn read_lifting<R: BufRead>(input: R) -> Result<(LiftingMatrix, Vocabulary)> {
    let mut lines = input.lines().enumerate();

    let (n, dimension, hash_length) = loop {
        let Some((i, line)) = lines.next() else {
            return Err(Error::parse(1, "missing lifting header"));
        };
        let line = line?;
        if line.split_whitespace().next().is_none() {
            continue;
        }
        break parse_lifting_header(i + 1, &line)?;
    };

    let mut words: Vec<String> = Vec::with_capacity(n);
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        let mut tokens = line.split_whitespace();
        let Some(word) = tokens.next() else { continue };
        let mut row: Vec<u32> = Vec::new();
        for tok in tokens {
            let idx: u32 =
                tok.parse().map_err(|_| Error::parse(line_no, format!("invalid index {tok:?}")))?;
            if idx as usize >= dimension {
                return Err(Error::parse(
                    line_no,
                    format!("index {idx} exceeds dimension {dimension}"),
                ));
            }
            if let Some(&prev) = row.last() {
                if prev >= idx {
                    return Err(Error::parse(
                        line_no,
                        format!("indices must be strictly ascending, {prev} before {idx}"),
                    ));
                }
            }
            row.push(idx);
        }
        if !seen.insert(word.to_string()) {
            return Err(Error::parse(line_no, format!("duplicate word {word:?}")));
        }
        words.push(word.to_string());
        rows.push(row);
        if words.len() > n {
            return Err(Error::validation(format!(
                "header declares {n} rows but the file has more"
            )));
        }
    }
    if words.len() != n {
        return Err(Error::validation(format!(
            "header declares {n} rows, file has {}",
            words.len()
        )));
    }
    let z = LiftingMatrix::new(dimension, hash_length, rows)?;
    let vocab = Vocabulary::new(words)?;
    Ok((z, vocab))
}

fn parse_lifting_header(line_no: usize, line: &str) -> Result<(usize, usize, usize)> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(LIFTING_HEADER_TAG) || tokens.next() != Some(LIFTING_HEADER_VERSION) {
        return Err(Error::parse(
            line_no,
            format!("expected \"{LIFTING_HEADER_TAG} {LIFTING_HEADER_VERSION}\" header"),
        ));
    }
    let mut n = None;
    let mut d = None;
    let mut k = None;
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(line_no, format!("bad header field {tok:?}")))?;
        let value: usize = value
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad header value {tok:?}")))?;
        match key {
            "N" => n = Some(value),
            "d" => d = Some(value),
            "k" => k = Some(value),
            _ => return Err(Error::parse(line_no, format!("unknown header field {key:?}"))),
        }
    }
    match (n, d, k) {
        (Some(n), Some(d), Some(k)) => Ok((n, d, k)),
        _ => Err(Error::parse(line_no, "header must define N=, d= and k=")),
    }
}

/// Write one SVMlight-style line: `<label> <idx+1>:<count> …` with
/// 1-based feature indices, the usual convention of external classifier
/// tools.
pub fn write_svmlight_line<W: Write>(mut out: W, label: i64, v: &SparseCountVector) -> Result<()> {
    write!(out, "{label}")?;
    for &(idx, count) in v.entries() {
        write!(out, " {}:{}", idx as u64 + 1, count)?;
    }
    writeln!(out)?;
    Ok(())
}
