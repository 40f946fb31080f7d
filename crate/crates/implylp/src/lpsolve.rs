//! A self-contained simplex solver for the programs built by `relax`.
//!
//! The implementation is a revised simplex over the bounded-variable
//! standard form: every column (structural, slack, or artificial) carries
//! finite lower and upper bounds, nonbasic columns sit at one of their
//! bounds, and the basis is held as a dense LU factorization updated in
//! product form and refactorized every [`REFACTOR_EVERY`] pivots.
//!
//! Two properties shape the design:
//!
//! * Termination over speed: Dantzig pricing with a switch to Bland's rule
//!   after a run of degenerate pivots, so cycling is impossible; all tie
//!   breaks are by index, so a given program always takes the same pivot
//!   sequence and returns bit-identical results.
//! * No unbounded case: slacks of inequality rows get the implied upper
//!   bound `rhs - min(row over the variable box)`, which is finite because
//!   every variable box is. With all columns boxed, the minimum is finite
//!   by construction and the usual unbounded-ray handling disappears.
//!
//! Feasibility starts from the all-slack basis; rows whose slack cannot
//! absorb the initial residual get an artificial column and a phase-1
//! objective drives the artificials to zero (or proves infeasibility).
//! A final refactorization recomputes the primal point from scratch and
//! the reported `max_primal_violation` is measured against the *original*
//! rows, so an `Optimal` verdict is backed by an independent residual
//! check rather than by solver bookkeeping.

use crate::relax::{LinearProgram, Relation};
use crate::{Error, Result};

/// Rebuild the LU factorization after this many product-form updates.
const REFACTOR_EVERY: usize = 50;
/// Smallest pivot magnitude admitted by the ratio test.
const PIVOT_TOL: f64 = 1e-9;
/// Steps shorter than this count as degenerate for stall detection.
const DEGEN_STEP: f64 = 1e-11;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 200;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Residual tolerance for feasibility decisions and certification.
    pub feas_tol: f64,
    /// Reduced-cost tolerance: smaller improvements are treated as zero.
    pub opt_tol: f64,
    /// Pivot budget across both phases.
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            max_iters: 50_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    /// Minimum found; `max_primal_violation` is within tolerance.
    Optimal,
    /// Phase 1 proved the rows unsatisfiable over the variable boxes.
    Infeasible,
    /// Pivot budget exhausted, or the final residual check failed: the
    /// objective value is NOT a usable bound.
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective at `primal`; meaningful only when status is `Optimal`.
    pub objective: f64,
    /// Values of the structural variables.
    pub primal: Vec<f64>,
    pub iterations: usize,
    /// Independently recomputed worst residual of `primal` against the
    /// original rows and bounds.
    pub max_primal_violation: f64,
}

/// Result of [`verify_solution`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certification {
    pub max_violation: f64,
    pub bound_certified: bool,
}

/// Recompute every row and bound residual of `sol.primal` from the
/// program data alone and certify the solution against the default
/// feasibility tolerance. Shares no state with the solver, so a solver
/// bookkeeping bug cannot certify itself.
pub fn verify_solution(lp: &LinearProgram, sol: &LpSolution) -> Certification {
    verify_solution_with(lp, sol, SolveOptions::default().feas_tol)
}

pub fn verify_solution_with(lp: &LinearProgram, sol: &LpSolution, feas_tol: f64) -> Certification {
    if sol.primal.len() != lp.num_vars || sol.primal.iter().any(|v| !v.is_finite()) {
        return Certification {
            max_violation: f64::INFINITY,
            bound_certified: false,
        };
    }
    let max_violation = lp.max_violation(&sol.primal);
    Certification {
        max_violation,
        bound_certified: sol.status == LpStatus::Optimal && max_violation <= feas_tol,
    }
}

/// Minimize the program. Structural errors (malformed program, singular
/// basis after refactorization) surface as `Err`; infeasibility and budget
/// exhaustion are ordinary statuses.
pub fn solve(lp: &LinearProgram, opts: &SolveOptions) -> Result<LpSolution> {
    lp.validate()?;
    if !(opts.feas_tol > 0.0 && opts.feas_tol.is_finite()) || !(opts.opt_tol > 0.0) {
        return Err(Error::Config(format!(
            "tolerances must be positive, got feas_tol {} opt_tol {}",
            opts.feas_tol, opts.opt_tol
        )));
    }
    let mut s = Simplex::new(lp, opts)?;

    if s.num_artificials > 0 {
        s.set_phase1_objective();
        if s.run_phase()? == PhaseEnd::IterLimit {
            return s.finish(lp, LpStatus::IterationLimit);
        }
        s.refactor()?;
        let infeas = s.artificial_mass();
        let threshold = 10.0 * opts.feas_tol * (1.0 + s.rhs_scale);
        if infeas > threshold {
            return s.finish(lp, LpStatus::Infeasible);
        }
        s.lock_artificials();
        s.drive_out_artificials()?;
    }

    s.set_phase2_objective();
    let end = s.run_phase()?;
    s.finish(
        lp,
        match end {
            PhaseEnd::Optimum => LpStatus::Optimal,
            PhaseEnd::IterLimit => LpStatus::IterationLimit,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseEnd {
    Optimum,
    IterLimit,
}

/// Dense LU with partial pivoting for the basis matrix. `factor` works on
/// a row-major square matrix; solves run in place.
struct LuFactors {
    m: usize,
    lu: Vec<f64>,
    ipiv: Vec<usize>,
}

impl LuFactors {
    fn factor(mat: &[f64], m: usize) -> Result<LuFactors> {
        let mut lu = mat.to_vec();
        let mut ipiv = vec![0usize; m];
        let scale = lu.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for k in 0..m {
            let mut p = k;
            let mut best = lu[k * m + k].abs();
            for i in k + 1..m {
                let v = lu[i * m + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < 1e-12 * scale {
                return Err(Error::Solver(format!(
                    "basis matrix is numerically singular at column {k}"
                )));
            }
            ipiv[k] = p;
            if p != k {
                for j in 0..m {
                    lu.swap(k * m + j, p * m + j);
                }
            }
            let pivot = lu[k * m + k];
            for i in k + 1..m {
                let l = lu[i * m + k] / pivot;
                lu[i * m + k] = l;
                if l != 0.0 {
                    for j in k + 1..m {
                        lu[i * m + j] -= l * lu[k * m + j];
                    }
                }
            }
        }
        Ok(LuFactors { m, lu, ipiv })
    }

    /// Solve `A x = b` in place (PA = LU).
    fn solve(&self, b: &mut [f64]) {
        let m = self.m;
        for k in 0..m {
            b.swap(k, self.ipiv[k]);
        }
        for i in 1..m {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.lu[i * m + j] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..m).rev() {
            let mut acc = b[i];
            for j in i + 1..m {
                acc -= self.lu[i * m + j] * b[j];
            }
            b[i] = acc / self.lu[i * m + i];
        }
    }

    /// Solve `A^T x = b` in place.
    fn solve_transpose(&self, b: &mut [f64]) {
        let m = self.m;
        // U^T y = b: forward substitution against U's columns.
        for i in 0..m {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.lu[j * m + i] * b[j];
            }
            b[i] = acc / self.lu[i * m + i];
        }
        // L^T z = y: back substitution, unit diagonal.
        for i in (0..m).rev() {
            let mut acc = b[i];
            for j in i + 1..m {
                acc -= self.lu[j * m + i] * b[j];
            }
            b[i] = acc;
        }
        for k in (0..m).rev() {
            b.swap(k, self.ipiv[k]);
        }
    }
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    opts: SolveOptions,
    n: usize,
    m: usize,
    ncols: usize,
    num_artificials: usize,
    /// Sparse column entries for every column, slacks and artificials
    /// included.
    cols: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    rhs: Vec<f64>,
    rhs_scale: f64,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Column -> basis row, or `usize::MAX` when nonbasic.
    basis_pos: Vec<usize>,
    at_upper: Vec<bool>,
    xval: Vec<f64>,
    lu: LuFactors,
    /// Product-form updates since the last refactorization: (pivot row,
    /// spike column).
    etas: Vec<(usize, Vec<f64>)>,
    iterations: usize,
    degen_run: usize,
    bland: bool,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, opts: &SolveOptions) -> Result<Self> {
        let n = lp.num_vars;
        let m = lp.constraints.len();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut rhs = Vec::with_capacity(m);
        for (r, c) in lp.constraints.iter().enumerate() {
            for &(j, v) in &c.coeffs {
                cols[j].push((r, v));
            }
            rhs.push(c.rhs);
        }
        let rhs_scale = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        let mut lo = lp.var_low.clone();
        let mut hi = lp.var_high.clone();
        // Nonbasic structurals start at the finite bound nearest zero.
        let mut xval: Vec<f64> = (0..n)
            .map(|j| {
                if lo[j].abs() <= hi[j].abs() {
                    lo[j]
                } else {
                    hi[j]
                }
            })
            .collect();
        let mut at_upper: Vec<bool> = (0..n).map(|j| xval[j] == hi[j] && lo[j] != hi[j]).collect();

        // Slack columns. An inequality row `a.x <= b` becomes
        // `a.x + s = b` with `s` in `[0, b - rowmin]`, rowmin being the
        // row's minimum over the variable box; the pad below only widens
        // the slack's own box, never the x-feasible set, and keeps a
        // knife-edge tight row from being misread as infeasible.
        for (r, c) in lp.constraints.iter().enumerate() {
            let (slo, shi) = match c.relation {
                Relation::Eq => (0.0, 0.0),
                Relation::Le => {
                    let rowmin: f64 = c
                        .coeffs
                        .iter()
                        .map(|&(j, v)| if v >= 0.0 { v * lo[j] } else { v * hi[j] })
                        .sum();
                    let pad = opts.feas_tol * (1.0 + rhs[r].abs() + rowmin.abs());
                    (0.0, (rhs[r] - rowmin).max(0.0) + pad)
                }
            };
            cols.push(vec![(r, 1.0)]);
            lo.push(slo);
            hi.push(shi);
            xval.push(0.0);
            at_upper.push(false);
        }

        // Initial residuals decide which rows need an artificial.
        let mut residual = rhs.clone();
        for (j, x) in xval.iter().enumerate().take(n) {
            if *x != 0.0 {
                for &(r, v) in &cols[j] {
                    residual[r] -= v * x;
                }
            }
        }
        let mut basis = Vec::with_capacity(m);
        let mut num_artificials = 0;
        for r in 0..m {
            let s = n + r;
            let d = residual[r];
            if d >= lo[s] - opts.feas_tol && d <= hi[s] + opts.feas_tol {
                xval[s] = d;
                basis.push(s);
            } else {
                // Slack to its nearest bound, artificial absorbs the rest.
                let clamped = d.clamp(lo[s], hi[s]);
                xval[s] = clamped;
                at_upper[s] = clamped == hi[s] && lo[s] != hi[s];
                let gap = d - clamped;
                let a = cols.len();
                cols.push(vec![(r, gap.signum())]);
                lo.push(0.0);
                hi.push(gap.abs());
                xval.push(gap.abs());
                at_upper.push(false);
                basis.push(a);
                num_artificials += 1;
            }
        }
        let ncols = cols.len();
        let mut basis_pos = vec![usize::MAX; ncols];
        for (r, &j) in basis.iter().enumerate() {
            basis_pos[j] = r;
        }

        let mut s = Simplex {
            lp,
            opts: opts.clone(),
            n,
            m,
            ncols,
            num_artificials,
            cols,
            lo,
            hi,
            rhs,
            rhs_scale,
            obj: vec![0.0; ncols],
            basis,
            basis_pos,
            at_upper,
            xval,
            lu: LuFactors::factor(&[], 0)?,
            etas: Vec::new(),
            iterations: 0,
            degen_run: 0,
            bland: false,
        };
        s.refactor()?;
        Ok(s)
    }

    fn set_phase1_objective(&mut self) {
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        for j in self.n + self.m..self.ncols {
            self.obj[j] = 1.0;
        }
    }

    fn set_phase2_objective(&mut self) {
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        for &(j, v) in &self.lp.objective {
            self.obj[j] = v;
        }
        // A fresh phase, a fresh stall counter.
        self.degen_run = 0;
        self.bland = false;
    }

    fn artificial_mass(&self) -> f64 {
        self.xval[self.n + self.m..].iter().map(|v| v.max(0.0)).sum()
    }

    fn lock_artificials(&mut self) {
        for j in self.n + self.m..self.ncols {
            self.lo[j] = 0.0;
            self.hi[j] = 0.0;
            self.xval[j] = 0.0;
            self.at_upper[j] = false;
        }
    }

    /// Rebuild the LU factorization from the current basis and recompute
    /// the basic values from scratch, discarding accumulated update error.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut dense = vec![0.0; m * m];
        for (r, &j) in self.basis.iter().enumerate() {
            let _ = r;
            for &(row, v) in &self.cols[j] {
                dense[row * m + r] = v;
            }
        }
        self.lu = LuFactors::factor(&dense, m)?;
        self.etas.clear();

        let mut b = self.rhs.clone();
        for j in 0..self.ncols {
            if self.basis_pos[j] == usize::MAX && self.xval[j] != 0.0 {
                for &(r, v) in &self.cols[j] {
                    b[r] -= v * self.xval[j];
                }
            }
        }
        self.lu.solve(&mut b);
        for (r, &j) in self.basis.iter().enumerate() {
            self.xval[j] = b[r];
        }
        Ok(())
    }

    /// `B^-1 a_j` via the factorization plus the eta file.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.m];
        for &(r, v) in &self.cols[j] {
            w[r] = v;
        }
        self.lu.solve(&mut w);
        for (p, z) in &self.etas {
            let t = w[*p] / z[*p];
            if t != 0.0 {
                for (i, zi) in z.iter().enumerate() {
                    if i != *p {
                        w[i] -= zi * t;
                    }
                }
            }
            w[*p] = t;
        }
        w
    }

    /// `B^-T u` via the eta file (newest first) plus the factorization.
    fn btran(&self, mut u: Vec<f64>) -> Vec<f64> {
        for (p, z) in self.etas.iter().rev() {
            let s: f64 = z.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            u[*p] = (u[*p] - (s - z[*p] * u[*p])) / z[*p];
        }
        self.lu.solve_transpose(&mut u);
        u
    }

    fn sparse_dot(&self, y: &[f64], j: usize) -> f64 {
        self.cols[j].iter().map(|&(r, v)| y[r] * v).sum()
    }

    /// Pick the entering column, or `None` at phase optimum. Dantzig by
    /// default (most negative improvement, ties to the smallest index),
    /// Bland's smallest-index rule while stalled.
    fn price(&self) -> Option<(usize, f64)> {
        let cb: Vec<f64> = self.basis.iter().map(|&j| self.obj[j]).collect();
        let y = self.btran(cb);
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.ncols {
            if self.basis_pos[j] != usize::MAX || self.lo[j] == self.hi[j] {
                continue;
            }
            let d = self.obj[j] - self.sparse_dot(&y, j);
            let dir = if !self.at_upper[j] && d < -self.opts.opt_tol {
                1.0
            } else if self.at_upper[j] && d > self.opts.opt_tol {
                -1.0
            } else {
                continue;
            };
            if self.bland {
                return Some((j, dir));
            }
            if best.map_or(true, |(_, _, score)| d.abs() > score) {
                best = Some((j, dir, d.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Ratio test and pivot for entering column `q` moving in direction
    /// `dir` off its bound. Bound flips are preferred on ties; the leaving
    /// tie break is the largest pivot magnitude, then the smallest row
    /// (Bland mode: smallest leaving variable index).
    fn step(&mut self, q: usize, dir: f64) -> Result<()> {
        let w = self.ftran(q);
        let width = self.hi[q] - self.lo[q];
        let mut t_best = width;
        let mut leave: Option<(usize, bool, f64)> = None; // (row, hits lower, |pivot|)
        for (r, wr) in w.iter().enumerate() {
            let g = dir * wr;
            let i = self.basis[r];
            let (cand, hits_lower) = if g > PIVOT_TOL {
                ((self.xval[i] - self.lo[i]).max(0.0) / g, true)
            } else if g < -PIVOT_TOL {
                ((self.xval[i] - self.hi[i]) / g, false)
            } else {
                continue;
            };
            let cand = cand.max(0.0);
            if cand < t_best - 1e-12 {
                t_best = cand;
                leave = Some((r, hits_lower, wr.abs()));
            } else if cand <= t_best + 1e-12 {
                if let Some((r0, _, mag0)) = leave {
                    let better = if self.bland {
                        self.basis[r] < self.basis[r0]
                    } else {
                        wr.abs() > mag0 + 1e-15 || (wr.abs() >= mag0 - 1e-15 && r < r0)
                    };
                    if better && cand <= t_best {
                        t_best = t_best.min(cand);
                        leave = Some((r, hits_lower, wr.abs()));
                    }
                }
                // Ties against a pure bound flip keep the flip.
            }
        }

        // Apply the step.
        self.xval[q] += dir * t_best;
        if t_best != 0.0 {
            for (r, wr) in w.iter().enumerate() {
                if *wr != 0.0 {
                    let i = self.basis[r];
                    self.xval[i] -= t_best * dir * wr;
                }
            }
        }
        match leave {
            None => {
                // Bound flip: snap to the opposite bound exactly.
                self.at_upper[q] = !self.at_upper[q];
                self.xval[q] = if self.at_upper[q] {
                    self.hi[q]
                } else {
                    self.lo[q]
                };
                self.degen_run = 0;
            }
            Some((r, hits_lower, _)) => {
                let i = self.basis[r];
                self.xval[i] = if hits_lower { self.lo[i] } else { self.hi[i] };
                self.at_upper[i] = !hits_lower;
                self.basis_pos[i] = usize::MAX;
                self.basis[r] = q;
                self.basis_pos[q] = r;
                self.etas.push((r, w));
                if self.etas.len() >= REFACTOR_EVERY {
                    self.refactor()?;
                }
                if t_best < DEGEN_STEP {
                    self.degen_run += 1;
                    if self.degen_run >= STALL_LIMIT {
                        self.bland = true;
                    }
                } else {
                    self.degen_run = 0;
                    self.bland = false;
                }
            }
        }
        self.iterations += 1;
        Ok(())
    }

    fn run_phase(&mut self) -> Result<PhaseEnd> {
        loop {
            if self.iterations >= self.opts.max_iters {
                return Ok(PhaseEnd::IterLimit);
            }
            match self.price() {
                None => return Ok(PhaseEnd::Optimum),
                Some((q, dir)) => self.step(q, dir)?,
            }
        }
    }

    /// After phase 1, pivot remaining basic artificials out of the basis
    /// (degenerate swaps at value zero). A row where no candidate column
    /// has a usable pivot is linearly dependent on the others; its
    /// artificial stays basic at zero, fenced by its locked bounds.
    fn drive_out_artificials(&mut self) -> Result<()> {
        for r in 0..self.m {
            if self.basis[r] < self.n + self.m {
                continue;
            }
            let mut e = vec![0.0; self.m];
            e[r] = 1.0;
            let v = self.btran(e);
            let mut pick: Option<(usize, f64)> = None;
            for j in 0..self.n + self.m {
                if self.basis_pos[j] != usize::MAX {
                    continue;
                }
                let alpha = self.sparse_dot(&v, j);
                if alpha.abs() > PIVOT_TOL
                    && pick.map_or(true, |(_, mag)| alpha.abs() > mag)
                {
                    pick = Some((j, alpha.abs()));
                }
            }
            let Some((j, _)) = pick else { continue };
            let w = self.ftran(j);
            let art = self.basis[r];
            self.xval[art] = 0.0;
            self.basis_pos[art] = usize::MAX;
            self.basis[r] = j;
            self.basis_pos[j] = r;
            self.etas.push((r, w));
            self.iterations += 1;
            if self.etas.len() >= REFACTOR_EVERY {
                self.refactor()?;
            }
        }
        Ok(())
    }

    /// Final recomputation and honest status: `Optimal` is downgraded if
    /// the independently measured residual exceeds the tolerance.
    fn finish(mut self, lp: &LinearProgram, status: LpStatus) -> Result<LpSolution> {
        self.refactor()?;
        let primal: Vec<f64> = self.xval[..self.n].to_vec();
        let max_primal_violation = lp.max_violation(&primal);
        let status = if status == LpStatus::Optimal && max_primal_violation > self.opts.feas_tol {
            LpStatus::IterationLimit
        } else {
            status
        };
        Ok(LpSolution {
            status,
            objective: lp.eval_objective(&primal),
            primal,
            iterations: self.iterations,
            max_primal_violation,
        })
    }
}
