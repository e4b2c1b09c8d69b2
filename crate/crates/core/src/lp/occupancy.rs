use std::path::Path;

use ndarray::{Array1, Array3, Array4};

use super::{LinearProgram, LpSolution, LpSolver, Row, Sense};
use crate::confidence::ConfidenceSet;
use crate::error::{Error, Result};
use crate::mdp::{marginal, EpisodeFunctions, ExtendedOccupancy, MdpShape, OccupancyMeasure, TransitionKernel};

/// LP entries below this magnitude are treated as solver noise.
const NOISE_FLOOR: f64 = 1e-12;

/// Kernel information available to the planner.
#[derive(Clone, Copy, Debug)]
pub enum FeasibleRegion<'a> {
    /// Occupancies that induce exactly this kernel.
    Exact(&'a TransitionKernel),
    /// Occupancies whose induced kernel lies in the box.
    Confidence { set: &'a ConfidenceSet, init: &'a Array1<f64> },
}

impl FeasibleRegion<'_> {
    fn shape(&self) -> MdpShape {
        match self {
            FeasibleRegion::Exact(k) => k.shape(),
            FeasibleRegion::Confidence { set, .. } => set.shape,
        }
    }

    fn init(&self) -> &Array1<f64> {
        match self {
            FeasibleRegion::Exact(k) => k.init(),
            FeasibleRegion::Confidence { init, .. } => init,
        }
    }

    /// `(lower, upper)` kernel bound of one transition entry, unclipped.
    fn bounds(&self, h: usize, s: usize, a: usize, next: usize) -> (f64, f64) {
        match self {
            FeasibleRegion::Exact(k) => {
                let p = k.prob(h, s, a, next);
                (p, p)
            }
            FeasibleRegion::Confidence { set, .. } => {
                let p = set.pbar[[h, s, a, next]];
                let e = set.eps[[h, s, a, next]];
                (p - e, p + e)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    LayerMass { step: usize },
    Flow { step: usize, state: usize },
    Initial { state: usize },
    KernelUpper { step: usize, state: usize, action: usize, next: usize },
    KernelLower { step: usize, state: usize, action: usize, next: usize },
    KernelExact { step: usize, state: usize, action: usize, next: usize },
}

impl RowKind {
    pub fn label(&self) -> String {
        match *self {
            RowKind::LayerMass { step } => format!("mass_h{step}"),
            RowKind::Flow { step, state } => format!("flow_h{step}_s{state}"),
            RowKind::Initial { state } => format!("init_s{state}"),
            RowKind::KernelUpper { step, state, action, next } => format!("up_h{step}_s{state}_a{action}_n{next}"),
            RowKind::KernelLower { step, state, action, next } => format!("lo_h{step}_s{state}_a{action}_n{next}"),
            RowKind::KernelExact { step, state, action, next } => format!("eq_h{step}_s{state}_a{action}_n{next}"),
        }
    }
}

/// Where an extended-occupancy cell lives among the LP variables:
/// `qbar[h, s, a, s'] = factor * x[var]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarSlot {
    pub var: usize,
    pub factor: f64,
}

/// Linear program over extended occupancies, variables ordered step-major
/// then state, action, successor.
///
/// The last step's successor slots are pinned to `q(s, a, H) * init(s')`, so
/// that layer is represented by one variable per `(s, a)` scaled by `init`.
#[derive(Clone, Debug)]
pub struct OccupancyLp {
    shape: MdpShape,
    init: Array1<f64>,
    init_mass: f64,
    pub program: LinearProgram,
    pub row_kinds: Vec<RowKind>,
}

impl OccupancyLp {
    pub fn shape(&self) -> MdpShape {
        self.shape
    }

    fn transition_var(&self, h: usize, s: usize, a: usize, next: usize) -> usize {
        transition_index(self.shape, h, s, a, next)
    }

    fn last_var(&self, s: usize, a: usize) -> usize {
        let sh = self.shape;
        (sh.horizon - 1) * sh.states * sh.actions * sh.states + s * sh.actions + a
    }

    pub fn slot(&self, h: usize, s: usize, a: usize, next: usize) -> VarSlot {
        if h + 1 < self.shape.horizon {
            VarSlot { var: self.transition_var(h, s, a, next), factor: 1.0 }
        } else {
            VarSlot { var: self.last_var(s, a), factor: self.init[next] }
        }
    }

    pub fn var_name(&self, j: usize) -> String {
        let sh = self.shape;
        let layer = sh.states * sh.actions * sh.states;
        let h = j / layer;
        if h + 1 < sh.horizon {
            let r = j % layer;
            let (s, r) = (r / (sh.actions * sh.states), r % (sh.actions * sh.states));
            format!("x_h{h}_s{s}_a{}_n{}", r / sh.states, r % sh.states)
        } else {
            let r = j - h * layer;
            format!("y_s{}_a{}", r / sh.actions, r % sh.actions)
        }
    }

    /// Terms for `sum_{a, s'} qbar[h, s, a, s']`.
    fn outflow_terms(&self, h: usize, s: usize) -> Vec<(usize, f64)> {
        let sh = self.shape;
        let mut terms = Vec::with_capacity(sh.actions * sh.states);
        for a in 0..sh.actions {
            if h + 1 < sh.horizon {
                for next in 0..sh.states {
                    terms.push((self.transition_var(h, s, a, next), 1.0));
                }
            } else {
                terms.push((self.last_var(s, a), self.init_mass));
            }
        }
        terms
    }

    fn push(&mut self, kind: RowKind, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.program.rows.push(Row { terms, sense, rhs });
        self.row_kinds.push(kind);
    }

    /// Sets the objective to `sum_{h,s,a,s'} table[h, s, a] * qbar[h, s, a, s']`.
    pub fn set_objective(&mut self, table: &Array3<f64>) -> Result<()> {
        self.shape.check_stage(table, "objective table")?;
        let sh = self.shape;
        let mut c = vec![0.0; self.program.num_vars];
        for h in 0..sh.horizon {
            for s in 0..sh.states {
                for a in 0..sh.actions {
                    let v = table[[h, s, a]];
                    if h + 1 < sh.horizon {
                        for next in 0..sh.states {
                            c[self.transition_var(h, s, a, next)] = v;
                        }
                    } else {
                        c[self.last_var(s, a)] = v * self.init_mass;
                    }
                }
            }
        }
        self.program.objective = c;
        Ok(())
    }

    /// Maps LP variables back to an extended occupancy.
    pub fn extended(&self, x: &[f64]) -> ExtendedOccupancy {
        let sh = self.shape;
        let mut qbar = Array4::zeros((sh.horizon, sh.states, sh.actions, sh.states));
        for ((h, s, a, next), cell) in qbar.indexed_iter_mut() {
            let slot = self.slot(h, s, a, next);
            let v = slot.factor * x[slot.var];
            *cell = if v.abs() < NOISE_FLOOR { 0.0 } else { v.max(0.0) };
        }
        ExtendedOccupancy { qbar }
    }

    /// Encodes an extended occupancy as LP variables. The last layer is
    /// collapsed onto its `(s, a)` totals.
    pub fn encode(&self, ext: &ExtendedOccupancy) -> Vec<f64> {
        let sh = self.shape;
        let mut x = vec![0.0; self.program.num_vars];
        for ((h, s, a, next), &v) in ext.qbar.indexed_iter() {
            if h + 1 < sh.horizon {
                x[self.transition_var(h, s, a, next)] = v;
            } else {
                x[self.last_var(s, a)] += v / self.init_mass;
            }
        }
        x
    }

    /// Max violation of `ext` against every row, including the pinned
    /// last-layer successor slots.
    pub fn violation(&self, ext: &ExtendedOccupancy) -> f64 {
        let x = self.encode(ext);
        let mut worst = self.program.max_violation(&x);
        let sh = self.shape;
        let h = sh.horizon - 1;
        for s in 0..sh.states {
            for a in 0..sh.actions {
                let slot_total = x[self.last_var(s, a)];
                for next in 0..sh.states {
                    worst = worst.max((ext.qbar[[h, s, a, next]] - slot_total * self.init[next]).abs());
                }
            }
        }
        worst
    }

    pub fn solve(&self, solver: &dyn LpSolver) -> (ExtendedOccupancy, LpSolution) {
        let sol = solver.solve(&self.program);
        (self.extended(&sol.x), sol)
    }

    pub fn write_cplex<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        self.program.write_cplex(out, |j| self.var_name(j), |i| self.row_kinds[i].label())
    }

    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_cplex(file)?;
        Ok(())
    }
}

fn transition_index(sh: MdpShape, h: usize, s: usize, a: usize, next: usize) -> usize {
    ((h * sh.states + s) * sh.actions + a) * sh.states + next
}

/// Builds the occupancy polytope for `region` with a zero objective.
///
/// Rows: unit mass per step, flow conservation, initial marginal, and the
/// linearized kernel coupling `lower * rowsum <= qbar <= upper * rowsum`
/// (an equality when the bounds coincide). Coupling rows whose bound is
/// implied by `0 <= qbar <= rowsum` are omitted.
pub fn build_delta_lp(region: FeasibleRegion<'_>) -> OccupancyLp {
    let sh = region.shape();
    let init = region.init().clone();
    let init_mass = init.sum();
    let num_vars = (sh.horizon - 1) * sh.states * sh.actions * sh.states + sh.states * sh.actions;
    let mut lp = OccupancyLp {
        shape: sh,
        init,
        init_mass,
        program: LinearProgram { num_vars, objective: vec![0.0; num_vars], rows: Vec::new() },
        row_kinds: Vec::new(),
    };

    for h in 0..sh.horizon {
        let terms = (0..sh.states).flat_map(|s| lp.outflow_terms(h, s)).collect();
        lp.push(RowKind::LayerMass { step: h }, terms, Sense::Eq, 1.0);
    }
    for h in 1..sh.horizon {
        for s in 0..sh.states {
            let mut terms = lp.outflow_terms(h, s);
            for prev in 0..sh.states {
                for a in 0..sh.actions {
                    terms.push((lp.transition_var(h - 1, prev, a, s), -1.0));
                }
            }
            lp.push(RowKind::Flow { step: h, state: s }, terms, Sense::Eq, 0.0);
        }
    }
    for s in 0..sh.states {
        let terms = lp.outflow_terms(0, s);
        let rhs = lp.init[s];
        lp.push(RowKind::Initial { state: s }, terms, Sense::Eq, rhs);
    }
    for h in 0..sh.horizon - 1 {
        for s in 0..sh.states {
            for a in 0..sh.actions {
                for next in 0..sh.states {
                    let (lower, upper) = region.bounds(h, s, a, next);
                    let coupling = |bound: f64, sign: f64| -> Vec<(usize, f64)> {
                        (0..sh.states)
                            .map(|k| {
                                let own = if k == next { 1.0 } else { 0.0 };
                                (transition_index(sh, h, s, a, k), sign * (own - bound))
                            })
                            .collect()
                    };
                    let (step, state, action) = (h, s, a);
                    if lower == upper {
                        let terms = coupling(upper, 1.0);
                        lp.push(RowKind::KernelExact { step, state, action, next }, terms, Sense::Eq, 0.0);
                        continue;
                    }
                    if upper < 1.0 {
                        let terms = coupling(upper, 1.0);
                        lp.push(RowKind::KernelUpper { step, state, action, next }, terms, Sense::Le, 0.0);
                    }
                    if lower > 0.0 {
                        let terms = coupling(lower, -1.0);
                        lp.push(RowKind::KernelLower { step, state, action, next }, terms, Sense::Le, 0.0);
                    }
                }
            }
        }
    }
    lp
}

/// Maximizes `<f - lambda g, q>` over the region; returns the state-action
/// marginal of the optimum together with the raw solver output.
pub fn argmax_penalized(
    region: FeasibleRegion<'_>,
    fg: &EpisodeFunctions,
    lambda: f64,
    solver: &dyn LpSolver,
) -> Result<(OccupancyMeasure, LpSolution)> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("dual variable must be nonnegative, got {lambda}")));
    }
    let mut lp = build_delta_lp(region);
    lp.set_objective(&fg.penalized(lambda))?;
    let (ext, sol) = lp.solve(solver);
    if !sol.is_optimal() {
        return Err(Error::Solver { status: sol.status, residual: sol.primal_residual });
    }
    Ok((marginal(&ext), sol))
}
