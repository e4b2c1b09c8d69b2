//! Hindsight optimum: the best expected total reward over `T` known
//! episodes under the exact kernel and a single budget row.
//!
//! The coupled program has one occupancy block per episode and one linking
//! row, so it is solved through its Lagrangian: for a price `mu` on the
//! budget, episodes decouple into independent backward inductions. The
//! dual function is convex and piecewise linear in `mu`; bisection on its
//! subgradient brackets the optimal price, and mixing the two bracketing
//! best responses meets the budget with equality. The gap between the
//! dual value and the mixed primal value certifies optimality.

use ndarray::{Array1, Array2};

use super::{build_delta_lp, FeasibleRegion, LinearProgram, LpSolver, Row, Sense};
use crate::error::{Error, Result};
use crate::mdp::{marginal, occupancy_from_policy, EpisodeFunctions, OccupancyMeasure, Policy, TransitionKernel};

/// Values closer than this are ties in the backward induction.
const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct HindsightSolution {
    /// Optimal expected total reward.
    pub value: f64,
    /// Expected total consumption of the returned occupancies.
    pub consumption: f64,
    /// Budget price at the optimum (zero when the budget is slack).
    pub multiplier: f64,
    /// Dual value minus primal value; nonnegative up to rounding.
    pub duality_gap: f64,
    pub occupancies: Vec<OccupancyMeasure>,
}

/// Deterministic maximizers of `<f_t - mu g_t, q>` for every episode; ties
/// are broken towards lower expected consumption, then lower action index.
#[derive(Clone, Debug)]
pub struct BestResponse {
    pub mu: f64,
    /// `sum_t max_q <f_t - mu g_t, q>`.
    pub lagrangian: f64,
    pub reward: f64,
    pub consumption: f64,
    /// Chosen action per `[h, s]` for each episode.
    pub choices: Vec<Array2<usize>>,
}

fn episode_best_response(
    kernel: &TransitionKernel,
    ep: &EpisodeFunctions,
    mu: f64,
) -> (f64, f64, f64, Array2<usize>) {
    let shape = kernel.shape();
    let (hn, sn, an) = shape.stage_dims();
    let mut value = Array1::<f64>::zeros(sn);
    let mut reward = Array1::<f64>::zeros(sn);
    let mut cost = Array1::<f64>::zeros(sn);
    let mut choice = Array2::<usize>::zeros((hn, sn));
    for h in (0..hn).rev() {
        let mut nv = Array1::zeros(sn);
        let mut nr = Array1::zeros(sn);
        let mut nc = Array1::zeros(sn);
        for s in 0..sn {
            let mut best: Option<(usize, f64, f64, f64)> = None;
            for a in 0..an {
                let (mut v, mut r, mut c) = (0.0, 0.0, 0.0);
                if h + 1 < hn {
                    for s2 in 0..sn {
                        let p = kernel.prob(h, s, a, s2);
                        v += p * value[s2];
                        r += p * reward[s2];
                        c += p * cost[s2];
                    }
                }
                let f = ep.reward[[h, s, a]];
                let g = ep.consumption[[h, s, a]];
                v += f - mu * g;
                r += f;
                c += g;
                let better = match best {
                    None => true,
                    Some((_, bv, _, bc)) => v > bv + TIE_TOL || ((v - bv).abs() <= TIE_TOL && c < bc),
                };
                if better {
                    best = Some((a, v, r, c));
                }
            }
            let (a, v, r, c) = best.expect("at least two actions");
            choice[[h, s]] = a;
            nv[s] = v;
            nr[s] = r;
            nc[s] = c;
        }
        value = nv;
        reward = nr;
        cost = nc;
    }
    let init = kernel.init();
    (init.dot(&value), init.dot(&reward), init.dot(&cost), choice)
}

pub fn lagrangian_best_response(kernel: &TransitionKernel, episodes: &[EpisodeFunctions], mu: f64) -> BestResponse {
    let mut out = BestResponse { mu, lagrangian: 0.0, reward: 0.0, consumption: 0.0, choices: Vec::new() };
    for ep in episodes {
        let (v, r, c, choice) = episode_best_response(kernel, ep, mu);
        out.lagrangian += v;
        out.reward += r;
        out.consumption += c;
        out.choices.push(choice);
    }
    out
}

fn occupancies_of(kernel: &TransitionKernel, choices: &[Array2<usize>]) -> Result<Vec<OccupancyMeasure>> {
    choices
        .iter()
        .map(|c| {
            let pi = Policy::from_choices(kernel.shape(), c);
            Ok(marginal(&occupancy_from_policy(kernel, &pi)?))
        })
        .collect()
}

fn check_inputs(kernel: &TransitionKernel, episodes: &[EpisodeFunctions], rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {rho}")));
    }
    for ep in episodes {
        ep.validate(kernel.shape())?;
    }
    Ok(())
}

/// Hindsight optimum by Lagrangian decomposition.
pub fn solve_hindsight_opt(
    kernel: &TransitionKernel,
    episodes: &[EpisodeFunctions],
    rho: f64,
) -> Result<HindsightSolution> {
    check_inputs(kernel, episodes, rho)?;
    let shape = kernel.shape();
    let budget = episodes.len() as f64 * shape.horizon as f64 * rho;

    let free = lagrangian_best_response(kernel, episodes, 0.0);
    if free.consumption <= budget {
        return Ok(HindsightSolution {
            value: free.reward,
            consumption: free.consumption,
            multiplier: 0.0,
            duality_gap: free.lagrangian - free.reward,
            occupancies: occupancies_of(kernel, &free.choices)?,
        });
    }

    // Above the largest reward/consumption ratio every costly action has a
    // negative penalized reward, so the null action wins and nothing is spent.
    let mut hi = episodes
        .iter()
        .flat_map(|ep| ep.reward.iter().zip(ep.consumption.iter()))
        .filter(|(_, &g)| g > 0.0)
        .map(|(&f, &g)| f / g)
        .fold(0.0, f64::max)
        + 1.0;
    let mut lo = 0.0;
    let mut upper = lagrangian_best_response(kernel, episodes, hi);
    let mut lower = free;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        let br = lagrangian_best_response(kernel, episodes, mid);
        if br.consumption > budget {
            lo = mid;
            lower = br;
        } else {
            hi = mid;
            upper = br;
        }
    }

    let theta = if lower.consumption > upper.consumption {
        ((budget - upper.consumption) / (lower.consumption - upper.consumption)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let value = theta * lower.reward + (1.0 - theta) * upper.reward;
    let consumption = theta * lower.consumption + (1.0 - theta) * upper.consumption;
    let dual = (lo * budget + lower.lagrangian).min(hi * budget + upper.lagrangian);
    let q_lower = occupancies_of(kernel, &lower.choices)?;
    let q_upper = occupancies_of(kernel, &upper.choices)?;
    let occupancies = q_lower
        .into_iter()
        .zip(q_upper)
        .map(|(a, b)| OccupancyMeasure { q: theta * &a.q + (1.0 - theta) * &b.q })
        .collect();
    Ok(HindsightSolution {
        value,
        consumption,
        multiplier: 0.5 * (lo + hi),
        duality_gap: dual - value,
        occupancies,
    })
}

/// Hindsight optimum as one coupled LP (one exact-kernel block per episode
/// plus the budget row). Only practical for a handful of episodes.
pub fn solve_hindsight_lp(
    kernel: &TransitionKernel,
    episodes: &[EpisodeFunctions],
    rho: f64,
    solver: &dyn LpSolver,
) -> Result<HindsightSolution> {
    check_inputs(kernel, episodes, rho)?;
    let shape = kernel.shape();
    let budget = episodes.len() as f64 * shape.horizon as f64 * rho;
    let mut block = build_delta_lp(FeasibleRegion::Exact(kernel));
    let width = block.program.num_vars;
    let mut program = LinearProgram { num_vars: width * episodes.len(), ..Default::default() };
    let mut budget_terms = Vec::new();
    for (t, ep) in episodes.iter().enumerate() {
        let off = t * width;
        block.set_objective(&ep.reward)?;
        program.objective.extend_from_slice(&block.program.objective);
        for row in &block.program.rows {
            let terms = row.terms.iter().map(|&(j, c)| (j + off, c)).collect();
            program.rows.push(Row { terms, sense: row.sense, rhs: row.rhs });
        }
        block.set_objective(&ep.consumption)?;
        budget_terms.extend(
            block.program.objective.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(j, &c)| (j + off, c)),
        );
    }
    program.rows.push(Row { terms: budget_terms, sense: Sense::Le, rhs: budget });
    let sol = solver.solve(&program);
    if !sol.is_optimal() {
        return Err(Error::Solver { status: sol.status, residual: sol.primal_residual });
    }
    let mut occupancies = Vec::with_capacity(episodes.len());
    let mut consumption = 0.0;
    for (t, ep) in episodes.iter().enumerate() {
        let q = marginal(&block.extended(&sol.x[t * width..(t + 1) * width]));
        consumption += crate::mdp::inner(&q, &ep.consumption)?;
        occupancies.push(q);
    }
    Ok(HindsightSolution {
        value: sol.objective,
        consumption,
        multiplier: f64::NAN,
        duality_gap: f64::NAN,
        occupancies,
    })
}
