//! Training of the lifted non-negative factor pair.
//!
//! Given a centered embedding `X` (`N × d`), we look for a non-negative
//! `H` (`N × d′`, `d′ > d`) whose Gram matrix reproduces the word
//! similarities: `H·Hᵀ ≈ X·Xᵀ`. The symmetric problem is relaxed into two
//! coupled factors
//!
//! ```text
//! min_{W,H ≥ 0}  ‖XXᵀ − WHᵀ‖²_F + α‖W − H‖²_F
//! ```
//!
//! and solved by alternating: copy `W ← H`, then re-solve `H` as a
//! non-negative least-squares problem ([`crate::nls`]) at fixed `W`. The
//! coupling weight α starts small and is multiplied up whenever the
//! objective stalls, until `‖W − H‖_F / ‖H‖_F` falls under the schedule's
//! closeness threshold and the two factors effectively coincide.
//!
//! Everything is arranged so the `N × N` similarity matrix is never
//! formed: all objective terms reduce to products against `Xᵀ` with at
//! most `N × max(d, d′)` intermediates.

use std::io::{Read, Write};

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::DenseEmbedding;
use crate::error::{Error, Result};
use crate::nls::{NlsConfig, NlsProblem};

/// 16-byte magic prefix of the binary checkpoint format.
pub const CHECKPOINT_MAGIC: [u8; 16] = *b"SPLIFTCKPT\0v1\0\0\0";

/// Rows sampled when estimating the initialization scale.
const INIT_SAMPLE_ROWS: usize = 1000;

/// Relative slack allowed before an H-update counts as a monotonicity
/// violation (floating-point noise in the trace-identity evaluation).
const MONOTONICITY_SLACK: f64 = 1e-10;

/// The two coupled non-negative factors of the relaxed problem.
#[derive(Debug, Clone)]
pub struct FactorPair {
    w: Array2<f64>,
    h: Array2<f64>,
}

impl FactorPair {
    /// Wrap two factors, checking identical shape, finiteness and
    /// non-negativity.
    pub fn new(w: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        if w.dim() != h.dim() {
            return Err(Error::contract(format!(
                "factor shapes differ: {:?} vs {:?}",
                w.dim(),
                h.dim()
            )));
        }
        for (name, m) in [("w", &w), ("h", &h)] {
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation(format!(
                    "factor {name} must be finite and non-negative"
                )));
            }
        }
        Ok(FactorPair { w, h })
    }

    /// Number of rows (words).
    pub fn n_rows(&self) -> usize {
        self.h.nrows()
    }

    /// Lifted dimension `d′`.
    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }
}

/// Escalation schedule for the coupling weight α.
#[derive(Debug, Clone)]
pub struct AlphaSchedule {
    /// Starting weight.
    pub initial: f64,
    /// Multiplier applied whenever the inner loop converges while the
    /// factors are still apart. Must exceed 1.
    pub growth_factor: f64,
    /// Training succeeds once `‖W − H‖_F / ‖H‖_F` is at or below this.
    pub closeness_threshold: f64,
    /// α is never grown beyond this cap.
    pub max_alpha: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule {
            initial: 1.0,
            growth_factor: 10.0,
            closeness_threshold: 1e-2,
            max_alpha: 1e8,
        }
    }
}

impl AlphaSchedule {
    fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::contract("alpha initial must be positive and finite"));
        }
        if !(self.growth_factor > 1.0 && self.growth_factor.is_finite()) {
            return Err(Error::contract("alpha growth_factor must exceed 1"));
        }
        if !(self.closeness_threshold > 0.0 && self.closeness_threshold.is_finite()) {
            return Err(Error::contract("closeness_threshold must be positive"));
        }
        if !(self.max_alpha >= self.initial && self.max_alpha.is_finite()) {
            return Err(Error::contract("max_alpha must be ≥ initial and finite"));
        }
        Ok(())
    }
}

/// Outer-loop training parameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Lifted dimension `d′`.
    pub lifted_dimension: usize,
    /// Inner convergence: relative change of the objective between
    /// consecutive H-updates at fixed α.
    pub outer_tolerance: f64,
    /// Total H-updates allowed across all α stages.
    pub max_outer_iterations: usize,
    /// Seed for the factor initialization.
    pub seed: u64,
    /// Sub-problem solver settings.
    pub nls: NlsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lifted_dimension: 1000,
            outer_tolerance: 1e-5,
            max_outer_iterations: 300,
            seed: 0,
            nls: NlsConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lifted_dimension == 0 {
            return Err(Error::contract("lifted_dimension must be ≥ 1"));
        }
        if !(self.outer_tolerance > 0.0 && self.outer_tolerance.is_finite()) {
            return Err(Error::contract("outer_tolerance must be positive"));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::contract("max_outer_iterations must be ≥ 1"));
        }
        Ok(())
    }
}

/// One outer iteration in the training trace.
///
/// `objective_after_copy` is the relaxed objective right after `W ← H`
/// (where the α term vanishes, so it equals `‖XXᵀ − HHᵀ‖²_F`);
/// `objective` is the value after the subsequent H-update. The H-update
/// never increases the objective, so `objective ≤ objective_after_copy`
/// up to slack on every entry.
#[derive(Debug, Clone, Copy)]
pub struct TraceEntry {
    /// 1-based H-update counter.
    pub iteration: usize,
    /// α in effect for this update.
    pub alpha: f64,
    /// Objective immediately after the copy step.
    pub objective_after_copy: f64,
    /// Objective after the H-update.
    pub objective: f64,
}

/// Outcome summary of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// One entry per H-update, in order.
    pub objective_trace: Vec<TraceEntry>,
    /// `‖W − H‖_F / ‖H‖_F` at exit.
    pub final_closeness: f64,
    /// `‖XXᵀ − WHᵀ‖_F / ‖XXᵀ‖_F` at exit.
    pub relative_gram_error: f64,
    /// Total H-updates performed.
    pub iterations_used: usize,
    /// α in effect at exit.
    pub final_alpha: f64,
    /// Whether the closeness threshold was met (as opposed to running
    /// out of iterations or hitting the α cap).
    pub converged: bool,
}

/// Draw the shared starting factor `W = H = H₀`.
///
/// Entries are uniform on `[0, s]` where `s² = c / d′` and `c` is the mean
/// of the strictly positive off-diagonal entries of a row-sample Gram
/// matrix (at most 1,000 rows). That makes the entries of `H₀H₀ᵀ`
/// comparable to typical positive similarities, so the first solve starts
/// in the right order of magnitude. When no off-diagonal entry is
/// positive, the mean diagonal (mean squared row norm) is used instead so
/// the initialization can never collapse to all-zero on a nonzero input.
pub fn initialize_factors(emb: &DenseEmbedding, config: &TrainConfig) -> Result<FactorPair> {
    config.validate()?;
    let n = emb.n_words();
    let d_lift = config.lifted_dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let x = emb.matrix();
    let sample: Array2<f64> = if n <= INIT_SAMPLE_ROWS {
        x.to_owned()
    } else {
        let mut rows = rand::seq::index::sample(&mut rng, n, INIT_SAMPLE_ROWS).into_vec();
        rows.sort_unstable();
        ndarray::stack(ndarray::Axis(0), &rows.iter().map(|&i| x.row(i)).collect::<Vec<_>>())
            .expect("sampled rows share the embedding dimension")
    };

    let gram = sample.dot(&sample.t());
    let m = gram.nrows();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i != j && gram[[i, j]] > 0.0 {
                sum += gram[[i, j]];
                count += 1;
            }
        }
    }
    let mut scale_sq = if count > 0 { sum / count as f64 } else { 0.0 };
    if scale_sq <= 0.0 {
        let diag_mean = (0..m).map(|i| gram[[i, i]]).sum::<f64>() / m as f64;
        scale_sq = diag_mean;
    }
    let s = (scale_sq / d_lift as f64).sqrt();

    let mut values = Vec::with_capacity(n * d_lift);
    for _ in 0..n * d_lift {
        values.push(rng.random::<f64>() * s);
    }
    let h0 = Array2::from_shape_vec((n, d_lift), values).expect("length is n·d′");
    FactorPair::new(h0.clone(), h0)
}

/// Relaxed objective `‖XXᵀ − WHᵀ‖²_F + α‖W − H‖²_F`.
///
/// Evaluated through trace identities —
/// `‖XXᵀ‖²_F = ‖XᵀX‖²_F`, `⟨XXᵀ, WHᵀ⟩ = ⟨XᵀW, XᵀH⟩_F` and
/// `‖WHᵀ‖²_F = ⟨WᵀW, HᵀH⟩_F` — so only `d × d′`-sized products appear.
pub fn relaxed_objective(emb: &DenseEmbedding, factors: &FactorPair, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::contract("alpha must be ≥ 0 and finite"));
    }
    check_factor_shape(emb, factors)?;
    let x = emb.matrix();
    let xtx = x.t().dot(x);
    let xtw = x.t().dot(factors.w());
    let xth = x.t().dot(factors.h());
    let wtw = factors.w().t().dot(factors.w());
    let hth = factors.h().t().dot(factors.h());
    let fit = sq_frob(&xtx) - 2.0 * frob_inner(&xtw, &xth) + frob_inner(&wtw, &hth);
    Ok(fit + alpha * sq_diff(factors.w(), factors.h()))
}

/// Relative reconstruction error `‖XXᵀ − HHᵀ‖_F / ‖XXᵀ‖_F`, using the
/// same trace identities as [`relaxed_objective`].
///
/// Returns `0` for the degenerate all-zero case and `+∞` when `X` is zero
/// but `H` is not.
pub fn gram_error(emb: &DenseEmbedding, factors: &FactorPair) -> Result<f64> {
    check_factor_shape(emb, factors)?;
    let x = emb.matrix();
    let xtx = x.t().dot(x);
    let xth = x.t().dot(factors.h());
    let hth = factors.h().t().dot(factors.h());
    let den_sq = sq_frob(&xtx);
    let num_sq = (den_sq - 2.0 * sq_frob(&xth) + sq_frob(&hth)).max(0.0);
    if den_sq == 0.0 {
        return Ok(if num_sq == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num_sq / den_sq).sqrt())
}

/// Alternating training loop.
///
/// Repeats: `W ← H`, then `H ← argmin_{H ≥ 0}` of the stacked
/// least-squares problem at fixed `W` (warm-started from the current
/// `H`). At fixed α the loop runs until the relative objective change
/// drops below `config.outer_tolerance`; then, if the factors are still
/// apart, α is multiplied by the schedule's growth factor. Training ends
/// when the closeness criterion holds, the α cap is reached, or the
/// iteration budget runs out; the report says which.
///
/// Every H-update is checked to never increase the objective (violations
/// surface as `Error::Numerical`), and the copy step is checked to make
/// the penalty term vanish exactly.
pub fn train(
    emb: &DenseEmbedding,
    schedule: &AlphaSchedule,
    config: &TrainConfig,
) -> Result<(FactorPair, TrainReport)> {
    schedule.validate()?;
    config.validate()?;
    if emb.n_words() < 2 {
        return Err(Error::contract("training needs at least 2 words"));
    }

    let x = emb.matrix();
    let init = initialize_factors(emb, config)?;
    let mut h = init.h;
    let mut w = init.w;

    let xtx = x.t().dot(x);
    let xtx_sq = sq_frob(&xtx);
    // Floating-point noise floor of the trace-identity evaluation; the
    // inner convergence test uses it so an exactly-fitted problem (where
    // the objective jitters around zero) still terminates.
    let noise_floor = f64::EPSILON * xtx_sq.max(1.0);

    let mut alpha = schedule.initial;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut prev_objective: Option<f64> = None;
    let mut iterations_used = 0usize;
    let mut converged = false;
    // Assigned on every pass through the loop body before any break.
    let mut last_fit_sq;

    'outer: loop {
        // Copy step: W ← H makes the penalty term vanish identically.
        w.assign(&h);
        let wtw = w.t().dot(&w);
        let xtw = x.t().dot(&w);
        let objective_after_copy = xtx_sq - 2.0 * sq_frob(&xtw) + sq_frob(&wtw);
        if !objective_after_copy.is_finite() {
            return Err(Error::numerical(iterations_used, "objective became non-finite"));
        }

        // H-update: min_{H ≥ 0} ½⟨HG, H⟩ − ⟨H, R⟩ with
        // G = WᵀW + αI and R = X(XᵀW) + αW.
        let mut gram = wtw.clone();
        for i in 0..gram.nrows() {
            gram[[i, i]] += alpha;
        }
        let mut rhs = x.dot(&xtw);
        rhs.scaled_add(alpha, &w);
        let problem = NlsProblem::new(gram, rhs)?;
        h = problem.solve(&h, &config.nls)?;
        iterations_used += 1;

        let xth = x.t().dot(&h);
        let hth = h.t().dot(&h);
        let fit_sq = xtx_sq - 2.0 * frob_inner(&xtw, &xth) + frob_inner(&wtw, &hth);
        let objective = fit_sq + alpha * sq_diff(&w, &h);
        last_fit_sq = fit_sq;
        if !objective.is_finite() {
            return Err(Error::numerical(iterations_used, "objective became non-finite"));
        }
        if objective
            > objective_after_copy + MONOTONICITY_SLACK * objective_after_copy.abs().max(1.0)
        {
            return Err(Error::numerical(
                iterations_used,
                format!(
                    "H-update increased the objective: {objective_after_copy} → {objective} at alpha {alpha}"
                ),
            ));
        }
        trace.push(TraceEntry {
            iteration: iterations_used,
            alpha,
            objective_after_copy,
            objective,
        });

        let stalled = match prev_objective {
            Some(prev) => {
                (prev - objective).abs() <= config.outer_tolerance * objective.abs() + noise_floor
            }
            None => false,
        };
        prev_objective = Some(objective);
        let out_of_budget = iterations_used >= config.max_outer_iterations;

        if stalled || out_of_budget {
            let closeness = closeness(&w, &h);
            if closeness <= schedule.closeness_threshold {
                converged = true;
                break 'outer;
            }
            if out_of_budget || alpha >= schedule.max_alpha {
                break 'outer;
            }
            alpha = (alpha * schedule.growth_factor).min(schedule.max_alpha);
            prev_objective = None;
        }
    }

    let final_closeness = closeness(&w, &h);
    let relative_gram_error =
        if xtx_sq == 0.0 { 0.0 } else { (last_fit_sq.max(0.0) / xtx_sq).sqrt() };
    let report = TrainReport {
        objective_trace: trace,
        final_closeness,
        relative_gram_error,
        iterations_used,
        final_alpha: alpha,
        converged,
    };
    Ok((FactorPair::new(w, h)?, report))
}

/// `‖W − H‖_F / ‖H‖_F`, with the all-zero case defined as 0.
fn closeness(w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let diff = sq_diff(w, h).sqrt();
    let norm = sq_frob(h).sqrt();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / norm
    }
}

fn check_factor_shape(emb: &DenseEmbedding, factors: &FactorPair) -> Result<()> {
    if factors.n_rows() != emb.n_words() {
        return Err(Error::contract(format!(
            "factors have {} rows but the embedding has {} words",
            factors.n_rows(),
            emb.n_words()
        )));
    }
    Ok(())
}

fn sq_frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

fn sq_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| {
        let d = x - y;
        acc + d * d
    })
}

fn frob_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
}

/// A saved training state: the factor pair plus the α and iteration
/// counter needed to resume or inspect a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub factors: FactorPair,
    pub alpha: f64,
    pub iterations: u64,
}

impl Checkpoint {
    /// Serialize as little-endian binary after the magic prefix:
    /// `N`, `d′`, row-major `W`, row-major `H`, `α`, iteration counter.
    /// Reading back restores every `f64` bit-exactly.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&CHECKPOINT_MAGIC)?;
        out.write_all(&(self.factors.n_rows() as u64).to_le_bytes())?;
        out.write_all(&(self.factors.dim() as u64).to_le_bytes())?;
        for m in [self.factors.w(), self.factors.h()] {
            for v in m.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.write_all(&self.alpha.to_le_bytes())?;
        out.write_all(&self.iterations.to_le_bytes())?;
        Ok(())
    }

    /// Read back a checkpoint written by [`Checkpoint::write`].
    pub fn read<R: Read>(mut input: R) -> Result<Checkpoint> {
        let mut magic = [0u8; 16];
        read_exactly(&mut input, &mut magic, "magic header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::validation("bad checkpoint magic"));
        }
        let n = read_u64(&mut input, "row count")? as usize;
        let d = read_u64(&mut input, "lifted dimension")? as usize;
        let entries =
            n.checked_mul(d).ok_or_else(|| Error::validation("checkpoint dimensions overflow"))?;
        let w = read_matrix(&mut input, n, d, entries, "W")?;
        let h = read_matrix(&mut input, n, d, entries, "H")?;
        let alpha = f64::from_le_bytes(read_bytes::<8, _>(&mut input, "alpha")?);
        let iterations = u64::from_le_bytes(read_bytes::<8, _>(&mut input, "iteration counter")?);
        if !alpha.is_finite() {
            return Err(Error::validation("checkpoint alpha is not finite"));
        }
        let mut probe = [0u8; 1];
        if input.read(&mut probe)? != 0 {
            return Err(Error::validation("trailing bytes after checkpoint payload"));
        }
        Ok(Checkpoint { factors: FactorPair::new(w, h)?, alpha, iterations })
    }
}

fn read_exactly<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::validation(format!("checkpoint truncated while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_bytes<const K: usize, R: Read>(input: &mut R, what: &str) -> Result<[u8; K]> {
    let mut buf = [0u8; K];
    read_exactly(input, &mut buf, what)?;
    Ok(buf)
}

fn read_u64<R: Read>(input: &mut R, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes::<8, _>(input, what)?))
}

fn read_matrix<R: Read>(
    input: &mut R,
    n: usize,
    d: usize,
    entries: usize,
    what: &str,
) -> Result<Array2<f64>> {
    let mut bytes = vec![0u8; entries * 8];
    read_exactly(input, &mut bytes, &format!("{what} entries"))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!(
            "checkpoint {what} contains non-finite value {bad}"
        )));
    }
    Array2::from_shape_vec((n, d), values)
        .map_err(|_| Error::validation("checkpoint dimensions are inconsistent"))
}
