//! Sentence-classification evaluation: exact k-nearest-neighbour search
//! over sparse count vectors, stratified cross-validation, word
//! similarity queries, and query timing.
//!
//! Distances use the exact integer identity
//! `‖q − t‖² = ⟨q,q⟩ + ⟨t,t⟩ − 2⟨q,t⟩` with pool self-products computed
//! once per index, so a query touches each candidate through a single
//! merge join. Every tie — equal distances, split votes, equal inner
//! products — breaks deterministically, making evaluation reproducible
//! bit for bit.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::sparse::{encode_sentence, normalize_token, LiftingMatrix, SparseCountVector};

/// Labelled sentences: one label and one normalized token list per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    name: String,
    labels: Vec<String>,
    sentences: Vec<Vec<String>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Display name; empty until [`with_name`](Self::with_name) sets one
    /// (a loader cannot know what its stream is called).
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    /// Distinct labels in ascending order.
    pub fn classes(&self) -> Vec<&str> {
        let mut classes: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Encode every sentence against a lifting matrix.
    pub fn encode(&self, z: &LiftingMatrix, vocab: &Vocabulary) -> Result<Vec<SparseCountVector>> {
        self.sentences.iter().map(|s| encode_sentence(s.iter(), z, vocab)).collect()
    }
}

/// Parse `<label>\t<sentence>` lines. Tokens are normalized exactly as
/// in sentence encoding, so what is loaded here is what gets encoded.
/// Blank lines are skipped; a line without a tab or with an empty label
/// is a parse error carrying its 1-based line number. A classification
/// dataset needs at least two classes, so fewer is a validation error.
pub fn load_dataset<R: BufRead>(input: R) -> Result<LabeledDataset> {
    let mut labels = Vec::new();
    let mut sentences = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, text)) = line.split_once('\t') else {
            return Err(Error::parse(line_no, "expected <label><TAB><sentence>"));
        };
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::parse(line_no, "empty label"));
        }
        let tokens: Vec<String> = text.split_whitespace().filter_map(normalize_token).collect();
        labels.push(label.to_string());
        sentences.push(tokens);
    }
    let dataset = LabeledDataset { name: String::new(), labels, sentences };
    if dataset.classes().len() < 2 {
        return Err(Error::validation(format!(
            "a labelled dataset needs at least 2 classes, found {}",
            dataset.classes().len()
        )));
    }
    Ok(dataset)
}

/// The `k` nearest pool members to `query`, as ascending
/// `(pool index, squared distance)` pairs. Equal distances order by
/// pool index, so results never depend on iteration incidentals.
pub fn nearest_k(
    query: &SparseCountVector,
    pool: &[SparseCountVector],
    k: usize,
) -> Result<Vec<(usize, u64)>> {
    if k == 0 || k > pool.len() {
        return Err(Error::contract(format!("k = {k} must lie in 1..={}", pool.len())));
    }
    let refs: Vec<&SparseCountVector> = pool.iter().collect();
    let squares = self_products(&refs)?;
    let query_sq = query.inner_product(query)?;
    nearest_k_impl(query, query_sq, &refs, &squares, k)
}

fn self_products(pool: &[&SparseCountVector]) -> Result<Vec<u64>> {
    pool.iter().map(|v| v.inner_product(v)).collect()
}

fn nearest_k_impl(
    query: &SparseCountVector,
    query_sq: u64,
    pool: &[&SparseCountVector],
    pool_sq: &[u64],
    k: usize,
) -> Result<Vec<(usize, u64)>> {
    debug_assert!(k >= 1 && k <= pool.len());
    let mut dists: Vec<(u64, usize)> = Vec::with_capacity(pool.len());
    for (i, (v, &sq)) in pool.iter().zip(pool_sq).enumerate() {
        let ip = query.inner_product(v)?;
        // The identity never underflows: the difference is a square.
        dists.push((query_sq + sq - 2 * ip, i));
    }
    dists.select_nth_unstable(k - 1);
    dists.truncate(k);
    dists.sort_unstable();
    Ok(dists.into_iter().map(|(d, i)| (i, d)).collect())
}

/// Classify by majority vote among the `k` nearest training vectors.
///
/// Ties break in three deterministic stages: equal distances order by
/// training index; tied votes go to the class with the closest
/// representative; representatives at identical distance fall back to
/// the lexicographically smallest label.
pub fn knn_classify(
    query: &SparseCountVector,
    train: &[SparseCountVector],
    labels: &[String],
    k: usize,
) -> Result<String> {
    if train.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} training vectors but {} labels",
            train.len(),
            labels.len()
        )));
    }
    let neighbors = nearest_k(query, train, k)?;
    Ok(vote(&neighbors, |i| labels[i].as_str()).to_string())
}

fn vote<'a>(neighbors: &[(usize, u64)], label_of: impl Fn(usize) -> &'a str) -> &'a str {
    debug_assert!(!neighbors.is_empty());
    // Neighbours arrive sorted, so the first sighting of a class is its
    // closest representative.
    let mut tallies: BTreeMap<&'a str, (usize, u64)> = BTreeMap::new();
    for &(idx, dist) in neighbors {
        tallies.entry(label_of(idx)).and_modify(|(votes, _)| *votes += 1).or_insert((1, dist));
    }
    let mut ranked: Vec<(&str, usize, u64)> =
        tallies.into_iter().map(|(label, (votes, best))| (label, votes, best)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(b.0)));
    ranked[0].0
}

/// Outcome of a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// Per-fold test accuracy, fold 0 first.
    pub fold_accuracies: Vec<f64>,
    /// Unweighted mean of the fold accuracies.
    pub mean_accuracy: f64,
    /// Wall-clock seconds spent answering each fold's queries.
    pub per_fold_query_seconds: Vec<f64>,
    /// False when some class had fewer members than folds and the split
    /// fell back to a plain shuffle.
    pub stratified: bool,
}

/// Stratified k-fold cross-validation of a k-NN classifier over
/// pre-encoded vectors.
///
/// Items of each class (classes visited in ascending label order) are
/// shuffled with the seeded generator and dealt round-robin onto folds;
/// the dealing cursor carries over between classes so fold sizes stay
/// balanced overall. If any class has fewer members than folds the
/// split downgrades to an unstratified shuffle and says so in the
/// result. Identical seeds give identical folds, predictions, and
/// accuracies; queries within a fold run in parallel.
pub fn cross_validate(
    vectors: &[SparseCountVector],
    labels: &[String],
    folds: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<CvResult> {
    let n = vectors.len();
    if n != labels.len() {
        return Err(Error::contract(format!("{n} vectors but {} labels", labels.len())));
    }
    if folds < 2 || folds > n {
        return Err(Error::contract(format!("folds = {folds} must lie in 2..={n}")));
    }
    if k_neighbors == 0 {
        return Err(Error::contract("k_neighbors must be at least 1"));
    }

    let assignment = assign_folds(labels, folds, seed);
    let stratified = assignment.stratified;
    let fold_of = assignment.fold_of;

    let max_fold =
        (0..folds).map(|f| fold_of.iter().filter(|&&g| g == f).count()).max().unwrap_or(0);
    if n - max_fold < k_neighbors {
        return Err(Error::contract(format!(
            "k_neighbors = {k_neighbors} exceeds the smallest training split of {}",
            n - max_fold
        )));
    }

    let mut fold_accuracies = Vec::with_capacity(folds);
    let mut per_fold_query_seconds = Vec::with_capacity(folds);
    for f in 0..folds {
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        debug_assert!(!test.is_empty());

        let pool: Vec<&SparseCountVector> = train.iter().map(|&i| &vectors[i]).collect();
        let pool_sq = self_products(&pool)?;
        let train_labels: Vec<&String> = train.iter().map(|&i| &labels[i]).collect();

        let started = Instant::now();
        let correct: Result<usize> = test
            .par_iter()
            .map(|&qi| {
                let query = &vectors[qi];
                let query_sq = query.inner_product(query)?;
                let neighbors = nearest_k_impl(query, query_sq, &pool, &pool_sq, k_neighbors)?;
                let predicted = vote(&neighbors, |i| train_labels[i].as_str());
                Ok(usize::from(predicted == labels[qi]))
            })
            .sum();
        let elapsed = started.elapsed().as_secs_f64();
        let correct = correct?;

        fold_accuracies.push(correct as f64 / test.len() as f64);
        per_fold_query_seconds.push(elapsed);
    }

    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / folds as f64;
    Ok(CvResult { fold_accuracies, mean_accuracy, per_fold_query_seconds, stratified })
}

/// [`cross_validate`] on a labelled dataset: encodes every sentence
/// against the lifting matrix, then runs the vector-level harness.
pub fn cross_validate_dataset(
    dataset: &LabeledDataset,
    z: &LiftingMatrix,
    vocab: &Vocabulary,
    folds: usize,
    k_neighbors: usize,
    seed: u64,
) -> Result<CvResult> {
    let vectors = dataset.encode(z, vocab)?;
    cross_validate(&vectors, dataset.labels(), folds, k_neighbors, seed)
}

struct FoldAssignment {
    fold_of: Vec<usize>,
    stratified: bool,
}

fn assign_folds(labels: &[String], folds: usize, seed: u64) -> FoldAssignment {
    let n = labels.len();
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        by_class.entry(label.as_str()).or_default().push(i);
    }
    let stratified = by_class.values().all(|members| members.len() >= folds);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; n];
    let mut cursor = 0usize;
    if stratified {
        for members in by_class.into_values() {
            let mut members = members;
            members.shuffle(&mut rng);
            for i in members {
                fold_of[i] = cursor % folds;
                cursor += 1;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for i in order {
            fold_of[i] = cursor % folds;
            cursor += 1;
        }
    }
    FoldAssignment { fold_of, stratified }
}

/// The `top` words most similar to `word`, ranked by descending inner
/// product of the binary rows (the count of shared active dimensions);
/// the query word itself is excluded and ties order by vocabulary
/// position. An unknown query word is a not-found error.
pub fn nearest_words<'a>(
    z: &LiftingMatrix,
    vocab: &'a Vocabulary,
    word: &str,
    top: usize,
) -> Result<Vec<(&'a str, u64)>> {
    let n = z.n_words();
    if vocab.len() != n {
        return Err(Error::contract(format!(
            "vocabulary has {} words but the lifting matrix has {n} rows",
            vocab.len()
        )));
    }
    let Some(query) = vocab.get(word) else {
        return Err(Error::NotFound(format!("word {word:?} is not in the vocabulary")));
    };
    if top == 0 || top > n - 1 {
        return Err(Error::contract(format!("top = {top} must lie in 1..={}", n - 1)));
    }

    let query_row = z.row(query)?;
    let mut scored: Vec<(u64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        if i == query {
            continue;
        }
        scored.push((shared_dimensions(query_row, z.row(i)?), i));
    }
    // Descending inner product, ties by ascending vocabulary position.
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(top);
    Ok(scored
        .into_iter()
        .map(|(ip, i)| (vocab.word(i).expect("index within vocabulary"), ip))
        .collect())
}

/// Merge-join count of shared indices between two ascending lists.
fn shared_dimensions(a: &[u32], b: &[u32]) -> u64 {
    let (mut i, mut j, mut shared) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    shared
}

/// All words whose row activates dimension `dim`, in vocabulary order.
/// This is the interpretability query: a well-trained lifting tends to
/// gather semantically related words on a shared dimension.
pub fn dimension_report<'a>(
    z: &LiftingMatrix,
    vocab: &'a Vocabulary,
    dim: usize,
) -> Result<Vec<&'a str>> {
    if vocab.len() != z.n_words() {
        return Err(Error::contract(format!(
            "vocabulary has {} words but the lifting matrix has {} rows",
            vocab.len(),
            z.n_words()
        )));
    }
    if dim >= z.dimension() {
        return Err(Error::bounds(format!("dimension {dim} of {}", z.dimension())));
    }
    let needle = dim as u32;
    let mut words = Vec::new();
    for i in 0..z.n_words() {
        if z.row(i)?.binary_search(&needle).is_ok() {
            words.push(vocab.word(i).expect("index within vocabulary"));
        }
    }
    Ok(words)
}

/// Structural summary of a lifting matrix, for inspection output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftingSummary {
    pub n_words: usize,
    pub dimension: usize,
    pub hash_length: usize,
    pub total_active: usize,
    pub empty_words: usize,
    pub used_dimensions: usize,
    pub min_word_nnz: usize,
    pub max_word_nnz: usize,
}

pub fn lifting_summary(z: &LiftingMatrix) -> LiftingSummary {
    let mut used = vec![false; z.dimension()];
    let mut min_nnz = usize::MAX;
    let mut max_nnz = 0;
    let mut total = 0;
    for row in z.rows() {
        total += row.len();
        min_nnz = min_nnz.min(row.len());
        max_nnz = max_nnz.max(row.len());
        for &d in row {
            used[d as usize] = true;
        }
    }
    LiftingSummary {
        n_words: z.n_words(),
        dimension: z.dimension(),
        hash_length: z.hash_length(),
        total_active: total,
        empty_words: z.empty_row_count(),
        used_dimensions: used.iter().filter(|u| **u).count(),
        min_word_nnz: min_nnz,
        max_word_nnz: max_nnz,
    }
}

/// Wall-clock timing of repeated exact nearest-neighbour passes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub repetitions: usize,
    pub queries: usize,
    pub pool_size: usize,
    pub k: usize,
    /// Mean full pass over all queries, in seconds.
    pub mean_pass_seconds: f64,
    /// Sample standard deviation of the pass times, in seconds.
    pub std_dev_pass_seconds: f64,
    /// Fastest full pass, in seconds (least disturbed by the machine).
    pub best_pass_seconds: f64,
}

impl TimingReport {
    /// The headline figure: mean wall-clock seconds per query.
    pub fn mean_seconds_per_query(&self) -> f64 {
        self.mean_pass_seconds / self.queries as f64
    }
}

/// Run every query against the pool `repetitions` times (at least 3),
/// single threaded, and report mean, standard deviation, and best pass
/// times. Queries must arrive pre-encoded: encoding cost is not part of
/// the measurement.
pub fn time_queries(
    pool: &[SparseCountVector],
    queries: &[SparseCountVector],
    k: usize,
    repetitions: usize,
) -> Result<TimingReport> {
    if repetitions < 3 {
        return Err(Error::contract("timing needs at least 3 repetitions"));
    }
    if queries.is_empty() {
        return Err(Error::contract("no queries to time"));
    }
    if k == 0 || k > pool.len() {
        return Err(Error::contract(format!("k = {k} must lie in 1..={}", pool.len())));
    }
    let refs: Vec<&SparseCountVector> = pool.iter().collect();
    let squares = self_products(&refs)?;
    let query_squares: Vec<u64> =
        queries.iter().map(|q| q.inner_product(q)).collect::<Result<_>>()?;

    let mut passes = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let started = Instant::now();
        for (q, &q_sq) in queries.iter().zip(&query_squares) {
            let neighbors = nearest_k_impl(q, q_sq, &refs, &squares, k)?;
            std::hint::black_box(&neighbors);
        }
        passes.push(started.elapsed().as_secs_f64());
    }
    let mean = passes.iter().sum::<f64>() / passes.len() as f64;
    let variance =
        passes.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (passes.len() - 1) as f64;
    let best = passes.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TimingReport {
        repetitions,
        queries: queries.len(),
        pool_size: pool.len(),
        k,
        mean_pass_seconds: mean,
        std_dev_pass_seconds: variance.sqrt(),
        best_pass_seconds: best,
    })
}
