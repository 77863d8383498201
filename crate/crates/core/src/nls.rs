//! Non-negative least squares in normal-equation form.
//!
//! The training loop repeatedly minimizes, over matrices `C ≥ 0`,
//!
//! ```text
//! f(C) = ½⟨C·G, C⟩_F − ⟨C, R⟩_F
//! ```
//!
//! where `G = WᵀW + αI` is a small symmetric positive-definite Gram matrix
//! and `R = X(XᵀW) + αW` collects the right-hand sides. This is the
//! stacked least-squares problem `min ‖A·Cᵀ − B‖²_F` with
//! `A = [W; √α·I]`, `B = [XXᵀ; √α·Wᵀ]` reduced to normal form, so the
//! large `N × N` product never has to exist.
//!
//! The solver is projected gradient descent with Armijo backtracking along
//! the projection arc: candidates are `max(C − step·∇f, 0)`, the step
//! shrinks until the decrease condition holds, and the accepted step is
//! reused as the starting step of the next iteration. Every iterate stays
//! non-negative and the objective never increases.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated in the Gram matrix.
const SYMMETRY_TOL: f64 = 1e-10;

/// Give up on the line search once the step underflows this far; at that
/// point no representable move can decrease the objective.
const MIN_STEP: f64 = 1e-60;

/// Stopping and line-search parameters for [`NlsProblem::solve`].
#[derive(Debug, Clone)]
pub struct NlsConfig {
    /// Hard cap on gradient iterations.
    pub max_iterations: usize,
    /// Stop once the projected-gradient norm falls below `tolerance`
    /// times its value at the initial point.
    pub tolerance: f64,
    /// Multiplicative backtracking factor in (0, 1).
    pub step_shrink: f64,
    /// Armijo sufficient-decrease fraction in (0, 1).
    pub sufficient_decrease: f64,
}

impl Default for NlsConfig {
    fn default() -> Self {
        NlsConfig {
            max_iterations: 200,
            tolerance: 1e-4,
            step_shrink: 0.5,
            sufficient_decrease: 0.01,
        }
    }
}

impl NlsConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::contract("max_iterations must be ≥ 1"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::contract("tolerance must be positive and finite"));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::contract("step_shrink must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::contract("sufficient_decrease must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One non-negative least-squares instance: `min_{C ≥ 0} ½⟨CG, C⟩ − ⟨C, R⟩`.
#[derive(Debug, Clone)]
pub struct NlsProblem {
    gram: Array2<f64>,
    rhs: Array2<f64>,
}

impl NlsProblem {
    /// Wrap a Gram matrix (`d′ × d′`) and right-hand side (`N × d′`).
    ///
    /// `gram` must be finite and symmetric to within `1e-10` relative
    /// asymmetry with strictly positive diagonal; the coupling penalty α
    /// guarantees both when the problem comes from training.
    pub fn new(gram: Array2<f64>, rhs: Array2<f64>) -> Result<Self> {
        if gram.nrows() != gram.ncols() {
            return Err(Error::contract(format!(
                "gram must be square, got {} × {}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if gram.nrows() == 0 {
            return Err(Error::contract("gram must be at least 1 × 1"));
        }
        if rhs.ncols() != gram.nrows() {
            return Err(Error::contract(format!(
                "rhs has {} columns but gram is {} × {}",
                rhs.ncols(),
                gram.nrows(),
                gram.nrows()
            )));
        }
        if gram.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("problem data contains non-finite values"));
        }
        let scale = gram.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..gram.nrows() {
            for j in (i + 1)..gram.ncols() {
                if (gram[[i, j]] - gram[[j, i]]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::contract(format!(
                        "gram is not symmetric at ({i}, {j}): {} vs {}",
                        gram[[i, j]],
                        gram[[j, i]]
                    )));
                }
            }
        }
        if let Some(i) = (0..gram.nrows()).find(|&i| gram[[i, i]] <= 0.0) {
            return Err(Error::contract(format!(
                "gram diagonal must be positive, entry {i} is {}",
                gram[[i, i]]
            )));
        }
        Ok(NlsProblem { gram, rhs })
    }

    /// Factor dimension `d′`.
    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// Number of rows `N` being solved for.
    pub fn rows(&self) -> usize {
        self.rhs.nrows()
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn rhs(&self) -> &Array2<f64> {
        &self.rhs
    }

    /// Objective `½⟨C·G, C⟩_F − ⟨C, R⟩_F` (constant term dropped).
    pub fn objective(&self, candidate: &Array2<f64>) -> f64 {
        let cg = candidate.dot(&self.gram);
        0.5 * frob_inner(&cg, candidate) - frob_inner(candidate, &self.rhs)
    }

    /// Raw gradient `C·G − R`.
    pub fn gradient(&self, candidate: &Array2<f64>) -> Array2<f64> {
        let mut grad = candidate.dot(&self.gram);
        grad -= &self.rhs;
        grad
    }

    /// Gradient projected onto the feasible directions at `candidate`:
    /// the raw entry where `candidate > 0`, and `min(entry, 0)` where
    /// `candidate = 0`. A zero projected gradient is exactly the KKT
    /// first-order optimality certificate.
    pub fn projected_gradient(&self, candidate: &Array2<f64>) -> Array2<f64> {
        let mut grad = self.gradient(candidate);
        Zip::from(&mut grad).and(candidate).for_each(|g, &c| {
            if c <= 0.0 {
                *g = g.min(0.0);
            }
        });
        grad
    }

    /// Minimize over `C ≥ 0` starting from `initial`.
    ///
    /// Stops when the projected-gradient norm drops below
    /// `config.tolerance` times its initial value, when no representable
    /// step can decrease the objective any further, or after
    /// `config.max_iterations` iterations. The returned matrix is
    /// non-negative and its objective never exceeds the starting one.
    pub fn solve(&self, initial: &Array2<f64>, config: &NlsConfig) -> Result<Array2<f64>> {
        config.validate()?;
        if initial.dim() != self.rhs.dim() {
            return Err(Error::contract(format!(
                "initial point is {:?}, problem wants {:?}",
                initial.dim(),
                self.rhs.dim()
            )));
        }
        if initial.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::contract("initial point must be finite and element-wise ≥ 0"));
        }

        let mut c = initial.clone();
        let mut grad = self.gradient(&c);
        let pg0 = projected_norm(&grad, &c);
        if !pg0.is_finite() {
            return Err(Error::numerical(0, "non-finite gradient at the initial point"));
        }
        if pg0 == 0.0 {
            return Ok(c); // already a KKT point
        }

        // λ_max(G) ≤ max row sum of |G|, so this step is always safe to
        // start from and usually passes the first Armijo test.
        let mut step = 1.0 / gram_row_sum_bound(&self.gram);

        for iteration in 0..config.max_iterations {
            let pg = projected_norm(&grad, &c);
            if !pg.is_finite() {
                return Err(Error::numerical(iteration, "projected gradient became non-finite"));
            }
            if pg <= config.tolerance * pg0 {
                break;
            }

            // Backtrack along the projection arc until the quadratic
            // decrease test accepts. For this objective
            //   f(C+Δ) − f(C) = ⟨∇f, Δ⟩ + ½⟨ΔG, Δ⟩
            // exactly, so the Armijo condition is evaluated in
            // difference form, which avoids cancellation between two
            // nearly equal objective values.
            let mut accepted = false;
            while step >= MIN_STEP {
                let mut candidate = Array2::zeros(c.dim());
                Zip::from(&mut candidate)
                    .and(&c)
                    .and(&grad)
                    .for_each(|n, &x, &g| *n = (x - step * g).max(0.0));
                let mut delta = candidate.clone();
                delta -= &c;
                let lin = frob_inner(&grad, &delta);
                if delta.iter().all(|v| *v == 0.0) {
                    // The step underflowed against the constraint set;
                    // nothing representable moves, so treat as converged.
                    return Ok(c);
                }
                let dg = delta.dot(&self.gram);
                let decrease = lin + 0.5 * frob_inner(&dg, &delta);
                if !decrease.is_finite() {
                    return Err(Error::numerical(iteration, "non-finite line-search decrease"));
                }
                if decrease <= config.sufficient_decrease * lin {
                    debug_assert!(decrease <= 0.0);
                    debug_assert!(candidate.iter().all(|v| *v >= 0.0));
                    c = candidate;
                    accepted = true;
                    break;
                }
                step *= config.step_shrink;
            }
            if !accepted {
                // No representable step decreases f: stationary to
                // machine precision.
                return Ok(c);
            }
            grad = self.gradient(&c);
        }
        Ok(c)
    }
}

/// Frobenius inner product without temporaries.
fn frob_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
}

/// Frobenius norm of the projected gradient at `c`.
fn projected_norm(grad: &Array2<f64>, c: &Array2<f64>) -> f64 {
    Zip::from(grad)
        .and(c)
        .fold(0.0, |acc, &g, &x| {
            let p = if x > 0.0 { g } else { g.min(0.0) };
            acc + p * p
        })
        .sqrt()
}

/// Upper bound on λ_max: the largest absolute row sum, floored at a tiny
/// positive value so the initial step stays finite.
fn gram_row_sum_bound(gram: &Array2<f64>) -> f64 {
    gram.rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(f64::MIN_POSITIVE, f64::max)
}
