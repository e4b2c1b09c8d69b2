//! Dense two-phase tableau simplex.
//!
//! Entering column: largest reduced cost, lowest index on ties. After a run
//! of degenerate pivots the rule switches to Bland's (lowest eligible
//! index, lowest basic index in the ratio test) until progress resumes, so
//! the pivot sequence is a deterministic function of the input.

use super::{LinearProgram, LpSolution, LpSolver, LpStatus, Sense};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-13;
const DEGENERATE_STREAK: usize = 40;

#[derive(Clone, Debug)]
pub struct DenseSimplex {
    /// Primal feasibility tolerance used to accept a solution.
    pub feasibility_tol: f64,
    pub max_iterations: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        Self { feasibility_tol: 1e-7, max_iterations: 50_000 }
    }
}

struct Tableau {
    rows: usize,
    width: usize,
    /// Row-major `rows x width`, last column is the right-hand side.
    a: Vec<f64>,
    /// Reduced costs; last entry is minus the objective.
    cost: Vec<f64>,
    basis: Vec<usize>,
    /// Columns allowed to enter.
    eligible: Vec<bool>,
    scratch: Vec<usize>,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.a[i * self.width + self.width - 1]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width + j]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let inv = 1.0 / self.a[r * w + c];
        self.scratch.clear();
        for j in 0..w {
            let v = &mut self.a[r * w + j];
            if *v != 0.0 {
                *v *= inv;
                if v.abs() < DROP_TOL {
                    *v = 0.0;
                } else {
                    self.scratch.push(j);
                }
            }
        }
        self.a[r * w + c] = 1.0;
        let (before, rest) = self.a.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let nz = &self.scratch;
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f == 0.0 {
                return;
            }
            for &j in nz {
                let v = row[j] - f * prow[j];
                row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[c] = 0.0;
        };
        for row in before.chunks_exact_mut(w) {
            eliminate(row);
        }
        for row in after.chunks_exact_mut(w) {
            eliminate(row);
        }
        let f = self.cost[c];
        if f != 0.0 {
            for &j in nz {
                self.cost[j] -= f * prow[j];
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn choose_entering(&self, bland: bool) -> Option<usize> {
        let cols = self.width - 1;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..cols {
            if !self.eligible[j] {
                continue;
            }
            let d = self.cost[j];
            if d > COST_TOL {
                if bland {
                    return Some(j);
                }
                if best.is_none_or(|(_, b)| d > b) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    fn choose_leaving(&self, c: usize, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for i in 0..self.rows {
            let aic = self.at(i, c);
            if aic <= PIVOT_TOL {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / aic;
            best = match best {
                None => Some((i, ratio, aic)),
                Some((bi, br, ba)) => {
                    let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br);
                    let better = if tie {
                        if bland {
                            self.basis[i] < self.basis[bi]
                        } else {
                            aic > ba || (aic == ba && self.basis[i] < self.basis[bi])
                        }
                    } else {
                        ratio < br
                    };
                    if better {
                        Some((i, ratio, aic))
                    } else {
                        Some((bi, br, ba))
                    }
                }
            };
        }
        best.map(|(i, r, _)| (i, r))
    }

    fn run(&mut self, max_iterations: usize, iterations: &mut usize) -> Outcome {
        let mut streak = 0usize;
        loop {
            if *iterations >= max_iterations {
                return Outcome::IterationLimit;
            }
            let bland = streak >= DEGENERATE_STREAK;
            let Some(c) = self.choose_entering(bland) else {
                return Outcome::Optimal;
            };
            let Some((r, ratio)) = self.choose_leaving(c, bland) else {
                return Outcome::Unbounded;
            };
            if ratio <= 1e-12 {
                streak += 1;
            } else {
                streak = 0;
            }
            self.pivot(r, c);
            *iterations += 1;
        }
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let w = self.width;
        self.cost.clear();
        self.cost.extend_from_slice(costs);
        self.cost.push(0.0);
        for i in 0..self.rows {
            let cb = costs[self.basis[i]];
            if cb != 0.0 {
                for j in 0..w {
                    let v = self.a[i * w + j];
                    if v != 0.0 {
                        self.cost[j] -= cb * v;
                    }
                }
            }
        }
    }

    fn remove_rows(&mut self, drop: &[bool]) {
        let w = self.width;
        let mut a = Vec::with_capacity(self.a.len());
        let mut basis = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            if !drop[i] {
                a.extend_from_slice(&self.a[i * w..(i + 1) * w]);
                basis.push(self.basis[i]);
            }
        }
        self.a = a;
        self.basis = basis;
        self.rows = self.basis.len();
    }
}

impl DenseSimplex {
    fn failed(&self, lp: &LinearProgram, status: LpStatus, iterations: usize) -> LpSolution {
        LpSolution {
            x: vec![0.0; lp.num_vars],
            objective: f64::NAN,
            status,
            primal_residual: f64::INFINITY,
            iterations,
        }
    }
}

impl LpSolver for DenseSimplex {
    fn solve(&self, lp: &LinearProgram) -> LpSolution {
        let n = lp.num_vars;
        let m = lp.rows.len();

        // Normalize to nonnegative right-hand sides.
        let mut senses = Vec::with_capacity(m);
        let mut signs = Vec::with_capacity(m);
        for row in &lp.rows {
            let (sense, sign) = if row.rhs < 0.0 {
                (
                    match row.sense {
                        Sense::Le => Sense::Ge,
                        Sense::Ge => Sense::Le,
                        Sense::Eq => Sense::Eq,
                    },
                    -1.0,
                )
            } else {
                (row.sense, 1.0)
            };
            senses.push(sense);
            signs.push(sign);
        }
        let num_slack = senses.iter().filter(|s| **s != Sense::Eq).count();
        let num_art = senses.iter().filter(|s| **s != Sense::Le).count();
        let cols = n + num_slack + num_art;
        let width = cols + 1;

        let mut t = Tableau {
            rows: m,
            width,
            a: vec![0.0; m * width],
            cost: Vec::with_capacity(width),
            basis: vec![0; m],
            eligible: vec![true; cols],
            scratch: Vec::with_capacity(width),
        };
        let mut next_slack = n;
        let mut next_art = n + num_slack;
        for (i, row) in lp.rows.iter().enumerate() {
            let base = i * width;
            for &(j, v) in &row.terms {
                t.a[base + j] += signs[i] * v;
            }
            t.a[base + cols] = signs[i] * row.rhs;
            match senses[i] {
                Sense::Le => {
                    t.a[base + next_slack] = 1.0;
                    t.basis[i] = next_slack;
                    next_slack += 1;
                }
                Sense::Ge => {
                    t.a[base + next_slack] = -1.0;
                    next_slack += 1;
                    t.a[base + next_art] = 1.0;
                    t.basis[i] = next_art;
                    next_art += 1;
                }
                Sense::Eq => {
                    t.a[base + next_art] = 1.0;
                    t.basis[i] = next_art;
                    next_art += 1;
                }
            }
        }
        let art_start = n + num_slack;
        let is_art = |j: usize| j >= art_start;

        let mut iterations = 0;
        if num_art > 0 {
            let mut phase1 = vec![0.0; cols];
            for c in phase1.iter_mut().skip(art_start) {
                *c = -1.0;
            }
            t.set_costs(&phase1);
            match t.run(self.max_iterations, &mut iterations) {
                Outcome::Optimal => {}
                Outcome::Unbounded | Outcome::IterationLimit => {
                    return self.failed(lp, LpStatus::NumericalFailure, iterations);
                }
            }
            let infeasibility = t.cost[cols];
            let scale = 1.0 + lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
            if infeasibility > self.feasibility_tol * scale {
                return self.failed(lp, LpStatus::Infeasible, iterations);
            }
            // Drive zero-level artificials out of the basis; rows where that
            // is impossible are linearly dependent and get dropped.
            let mut drop = vec![false; t.rows];
            for i in 0..t.rows {
                if !is_art(t.basis[i]) {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for j in 0..art_start {
                    let v = t.at(i, j).abs();
                    if v > PIVOT_TOL && best.is_none_or(|(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
                match best {
                    Some((j, _)) => {
                        t.pivot(i, j);
                        iterations += 1;
                    }
                    None => drop[i] = true,
                }
            }
            if drop.iter().any(|&d| d) {
                t.remove_rows(&drop);
            }
            for j in art_start..cols {
                t.eligible[j] = false;
            }
        }

        let mut phase2 = vec![0.0; cols];
        phase2[..n].copy_from_slice(&lp.objective);
        t.set_costs(&phase2);
        match t.run(self.max_iterations, &mut iterations) {
            Outcome::Optimal => {}
            Outcome::Unbounded => return self.failed(lp, LpStatus::Unbounded, iterations),
            Outcome::IterationLimit => return self.failed(lp, LpStatus::NumericalFailure, iterations),
        }

        let mut x = vec![0.0; n];
        for i in 0..t.rows {
            let j = t.basis[i];
            if j < n {
                x[j] = t.rhs(i).max(0.0);
            }
        }
        let primal_residual = lp.max_violation(&x);
        let objective = lp.objective_value(&x);
        let status = if primal_residual <= self.feasibility_tol {
            LpStatus::Optimal
        } else {
            LpStatus::NumericalFailure
        };
        LpSolution { x, objective, status, primal_residual, iterations }
    }
}
