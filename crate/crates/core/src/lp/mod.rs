//! Linear programs over occupancy measures and the solver interface.

mod hindsight;
mod occupancy;
mod simplex;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use hindsight::{lagrangian_best_response, solve_hindsight_lp, solve_hindsight_opt, BestResponse, HindsightSolution};
pub use occupancy::{argmax_penalized, build_delta_lp, FeasibleRegion, OccupancyLp, RowKind, VarSlot};
pub use simplex::DenseSimplex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `maximize objective . x` subject to `rows`, `x >= 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any row or nonnegativity bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        for row in &self.rows {
            let lhs: f64 = row.terms.iter().map(|&(j, c)| c * x[j]).sum();
            let v = match row.sense {
                Sense::Le => (lhs - row.rhs).max(0.0),
                Sense::Ge => (row.rhs - lhs).max(0.0),
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Writes the program in CPLEX LP text format. `var_name` and
    /// `row_name` supply identifiers.
    pub fn write_cplex<W: Write>(
        &self,
        mut out: W,
        var_name: impl Fn(usize) -> String,
        row_name: impl Fn(usize) -> String,
    ) -> std::io::Result<()> {
        let term = |c: f64, j: usize| {
            if c < 0.0 {
                format!(" - {:e} {}", -c, var_name(j))
            } else {
                format!(" + {:e} {}", c, var_name(j))
            }
        };
        writeln!(out, "\\ occupancy LP: {} variables, {} rows", self.num_vars, self.rows.len())?;
        writeln!(out, "Maximize")?;
        write!(out, " obj:")?;
        let mut any = false;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(out, "{}", term(c, j))?;
                any = true;
            }
        }
        if !any {
            write!(out, " 0 {}", var_name(0))?;
        }
        writeln!(out)?;
        writeln!(out, "Subject To")?;
        for (i, row) in self.rows.iter().enumerate() {
            write!(out, " {}:", row_name(i))?;
            for &(j, c) in &row.terms {
                write!(out, "{}", term(c, j))?;
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            writeln!(out, " {op} {:e}", row.rhs)?;
        }
        writeln!(out, "Bounds")?;
        for j in 0..self.num_vars {
            writeln!(out, " {} >= 0", var_name(j))?;
        }
        writeln!(out, "End")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    /// Max primal violation of `x` against the original rows.
    pub primal_residual: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Back end that maximizes a [`LinearProgram`]. Implementations must be
/// deterministic in their input.
pub trait LpSolver: Sync {
    fn solve(&self, lp: &LinearProgram) -> LpSolution;
}
