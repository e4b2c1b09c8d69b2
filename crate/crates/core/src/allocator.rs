//! The online allocator: per episode, plan an optimistic occupancy for the
//! penalized reward, execute it against the true kernel under a hard budget,
//! then update visit counters and the budget price.

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceSet, LogArgument, RadiusParams, VisitCounters};
use crate::dual::{default_step_size, dual_update, DualState, ReferenceFunction, ENTROPY_FLOOR};
use crate::error::{Error, Result};
use crate::lp::{build_delta_lp, DenseSimplex, FeasibleRegion, LpSolver, OccupancyLp};
use crate::mdp::{
    inner, marginal, occupancy_from_policy, policy_from_occupancy, sample_index, EpisodeFunctions, MdpShape,
    Policy, Step, Trajectory, TransitionKernel,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualConfig {
    pub ref_fn: ReferenceFunction,
    /// Fixed step size; `None` uses `1 / (rho H sqrt(T))`.
    pub eta: Option<f64>,
    pub initial: f64,
    pub floor: f64,
    /// Keep the price at `initial` for the whole run (fixed-price and greedy
    /// comparators).
    pub frozen: bool,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self { ref_fn: ReferenceFunction::SquaredEuclidean, eta: None, initial: 0.0, floor: ENTROPY_FLOOR, frozen: false }
    }
}

/// Kernel information given to the planner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Planning {
    /// Confidence boxes built from the visit counters.
    #[default]
    Confidence,
    /// The box collapsed onto the true kernel.
    ExactKernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rho: f64,
    pub delta: f64,
    pub episodes: usize,
    #[serde(default)]
    pub dual: DualConfig,
    #[serde(default)]
    pub planning: Planning,
    #[serde(default)]
    pub log_argument: LogArgument,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(rho: f64, delta: f64, episodes: usize, seed: u64) -> Self {
        Self {
            rho,
            delta,
            episodes,
            dual: DualConfig::default(),
            planning: Planning::default(),
            log_argument: LogArgument::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.episodes == 0 {
            return Err(Error::InvalidArgument("episode count must be positive".into()));
        }
        Ok(())
    }
}

/// Where the budget ran out: 0-based episode and step of the consuming step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopPoint {
    pub episode: usize,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Price used to plan this episode.
    pub lambda: f64,
    /// `<f - lambda g, q_hat>`.
    pub lp_value: f64,
    /// `<f, q_hat>`.
    pub planned_reward: f64,
    /// `<g, q_hat>`.
    pub planned_consumption: f64,
    pub reward: f64,
    pub consumption: f64,
    pub budget_after: f64,
    /// The budget ran out during this episode.
    pub stopped: bool,
    /// The episode began before the stop and was planned.
    pub active: bool,
    /// The true kernel lay in the planning box.
    pub kernel_covered: bool,
    pub policy: Policy,
    /// Executed steps, padded with the null action after a stop.
    pub steps: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub shape: MdpShape,
    pub config: RunConfig,
    pub initial_budget: f64,
    pub eta: f64,
    pub episodes: Vec<EpisodeRecord>,
    pub stop: Option<StopPoint>,
    pub total_reward: f64,
    pub total_consumption: f64,
    pub final_budget: f64,
    pub final_lambda: f64,
    pub counters: VisitCounters,
}

impl RunRecord {
    /// Number of episodes that began before the stop.
    pub fn active_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| e.active).count()
    }

    /// Whether the true kernel was inside every planning box.
    pub fn always_covered(&self) -> bool {
        self.episodes.iter().filter(|e| e.active).all(|e| e.kernel_covered)
    }
}

/// Runs the allocator with the dense simplex back end.
pub fn run<I>(kernel: &TransitionKernel, episodes: I, config: &RunConfig) -> Result<RunRecord>
where
    I: IntoIterator<Item = EpisodeFunctions>,
{
    run_with(kernel, episodes, config, &DenseSimplex::default(), &mut |_, _| Ok(()))
}

/// Runs the allocator. `observe` sees every planning LP (with its objective
/// set) before it is solved, tagged by 0-based episode.
pub fn run_with<I>(
    kernel: &TransitionKernel,
    episodes: I,
    config: &RunConfig,
    solver: &dyn LpSolver,
    observe: &mut dyn FnMut(usize, &OccupancyLp) -> Result<()>,
) -> Result<RunRecord>
where
    I: IntoIterator<Item = EpisodeFunctions>,
{
    config.validate()?;
    let shape = kernel.shape();
    let (hn, t_total) = (shape.horizon, config.episodes);
    let h_rho = hn as f64 * config.rho;
    let initial_budget = t_total as f64 * h_rho;
    let eta = match config.dual.eta {
        Some(eta) => eta,
        None => default_step_size(config.rho, hn, t_total)?,
    };
    let mut dual = DualState::with_floor(config.dual.initial, eta, config.dual.ref_fn, config.dual.floor)?;
    let params = RadiusParams { delta: config.delta, episodes: t_total, log_argument: config.log_argument };
    params.log_term(shape)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut record = RunRecord {
        shape,
        config: *config,
        initial_budget,
        eta,
        episodes: Vec::with_capacity(t_total),
        stop: None,
        total_reward: 0.0,
        total_consumption: 0.0,
        final_budget: initial_budget,
        final_lambda: dual.lambda,
        counters: VisitCounters::new(shape),
    };
    if initial_budget < 1.0 {
        // the post-charge stop test cannot protect a budget below one step
        record.stop = Some(StopPoint { episode: 0, step: 0 });
    }
    let star = Policy::deterministic_constant(shape, shape.star_action);
    let mut stream = episodes.into_iter();

    for t in 0..t_total {
        let fg = stream
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("episode stream ended after {t} of {t_total} episodes")))?;
        fg.validate(shape)?;

        if record.stop.is_some() {
            let traj = execute(kernel, &star, &fg, &mut rng, &mut record, t, false);
            record.episodes.push(EpisodeRecord {
                lambda: dual.lambda,
                lp_value: 0.0,
                planned_reward: 0.0,
                planned_consumption: 0.0,
                reward: 0.0,
                consumption: 0.0,
                budget_after: record.final_budget,
                stopped: false,
                active: false,
                kernel_covered: true,
                policy: star.clone(),
                steps: traj.steps,
            });
            continue;
        }

        let set = match config.planning {
            Planning::Confidence => ConfidenceSet::build(&record.counters, params)?,
            Planning::ExactKernel => ConfidenceSet::exact(kernel),
        };
        let kernel_covered = set.contains(kernel)?;
        let mut lp = build_delta_lp(FeasibleRegion::Confidence { set: &set, init: kernel.init() });
        lp.set_objective(&fg.penalized(dual.lambda))?;
        let planned = observe(t, &lp).and_then(|_| {
            let (ext, sol) = lp.solve(solver);
            if sol.is_optimal() {
                Ok((marginal(&ext), sol))
            } else {
                Err(Error::Solver { status: sol.status, residual: sol.primal_residual })
            }
        });
        let (q_hat, sol) = match planned {
            Ok(p) => p,
            Err(e) => {
                record.final_lambda = dual.lambda;
                return Err(Error::Aborted { episode: t, source: Box::new(e), partial: Box::new(record) });
            }
        };
        let policy = policy_from_occupancy(&q_hat, shape.star_action)?;
        let planned_reward = inner(&q_hat, &fg.reward)?;
        let planned_consumption = inner(&q_hat, &fg.consumption)?;

        let lambda = dual.lambda;
        let traj = execute(kernel, &policy, &fg, &mut rng, &mut record, t, true);
        let stopped = record.stop.is_some();
        if !stopped && !config.dual.frozen {
            dual = dual_update(dual, h_rho, planned_consumption);
        }
        record.episodes.push(EpisodeRecord {
            lambda,
            lp_value: sol.objective,
            planned_reward,
            planned_consumption,
            reward: traj.total_reward(),
            consumption: traj.total_consumption(),
            budget_after: record.final_budget,
            stopped,
            active: true,
            kernel_covered,
            policy,
            steps: traj.steps,
        });
    }
    record.final_lambda = dual.lambda;
    Ok(record)
}

/// Plays one episode. While `learning`, every consumption is charged to the
/// budget, the stop rule is checked right after it, and observed
/// transitions are counted; after the stop the null action is played and
/// nothing is counted.
fn execute(
    kernel: &TransitionKernel,
    policy: &Policy,
    fg: &EpisodeFunctions,
    rng: &mut ChaCha8Rng,
    record: &mut RunRecord,
    episode: usize,
    learning: bool,
) -> Trajectory {
    let shape = kernel.shape();
    let star = shape.star_action;
    let mut traj = Trajectory::empty(shape);
    let mut state = sample_index(rng, kernel.init().iter().copied());
    for h in 0..shape.horizon {
        let live = learning && record.stop.is_none();
        let action = if live { sample_index(rng, policy.table().slice(s![h, state, ..]).iter().copied()) } else { star };
        let (reward, consumption) = (fg.reward[[h, state, action]], fg.consumption[[h, state, action]]);
        if live {
            record.total_reward += reward;
            record.total_consumption += consumption;
            record.final_budget = record.initial_budget - record.total_consumption;
            if record.final_budget < 1.0 {
                record.stop = Some(StopPoint { episode, step: h });
            }
        }
        let next_state = (h + 1 < shape.horizon)
            .then(|| sample_index(rng, kernel.trans().slice(s![h, state, action, ..]).iter().copied()));
        traj.push(Step { state, action, reward, consumption, next_state });
        if let Some(next) = next_state {
            if live && record.stop.is_none() {
                record.counters.record(h, state, action, next);
            }
            state = next;
        }
    }
    traj
}

/// The three-way regret split against a hindsight optimum `opt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretTerms {
    /// `OPT - sum_t <f_t, q_hat_t>`.
    pub term_i: f64,
    /// `sum_t <f_t, q_hat_t - q_t>` with `q_t` the true occupancy of `pi_t`.
    pub term_ii: f64,
    /// `sum_t <f_t, q_t>` minus the realized reward.
    pub term_iii: f64,
    pub total: f64,
}

/// Splits `opt - realized reward` using the recorded policies replayed on
/// the true kernel. `episodes` must be the stream the run consumed.
pub fn regret_terms(
    record: &RunRecord,
    kernel: &TransitionKernel,
    episodes: &[EpisodeFunctions],
    opt: f64,
) -> Result<RegretTerms> {
    if episodes.len() < record.episodes.len() {
        return Err(Error::InvalidArgument(format!(
            "replay has {} episodes, record has {}",
            episodes.len(),
            record.episodes.len()
        )));
    }
    let (mut planned, mut expected, mut realized) = (0.0, 0.0, 0.0);
    for (rec, fg) in record.episodes.iter().zip(episodes) {
        planned += rec.planned_reward;
        realized += rec.reward;
        if rec.active {
            let q = marginal(&occupancy_from_policy(kernel, &rec.policy)?);
            expected += inner(&q, &fg.reward)?;
        }
    }
    let term_i = opt - planned;
    let term_ii = planned - expected;
    let term_iii = expected - realized;
    Ok(RegretTerms { term_i, term_ii, term_iii, total: term_i + term_ii + term_iii })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3, Array4};

    fn chain() -> TransitionKernel {
        // two states, two actions, H = 3; action 1 flips the state
        let shape = MdpShape::new(2, 2, 3, 0).unwrap();
        let mut trans = Array4::zeros(shape.transition_dims());
        for h in 0..2 {
            for s in 0..2 {
                trans[[h, s, 0, s]] = 0.7;
                trans[[h, s, 0, 1 - s]] = 0.3;
                trans[[h, s, 1, 1 - s]] = 0.6;
                trans[[h, s, 1, s]] = 0.4;
            }
        }
        TransitionKernel::new(shape, trans, array![0.5, 0.5]).unwrap()
    }

    fn episodes(shape: MdpShape, n: usize, f: f64, g: f64) -> Vec<EpisodeFunctions> {
        let mut reward = Array3::zeros(shape.stage_dims());
        let mut consumption = Array3::zeros(shape.stage_dims());
        reward.slice_mut(s![.., .., 1]).fill(f);
        consumption.slice_mut(s![.., .., 1]).fill(g);
        vec![EpisodeFunctions::new(shape, reward, consumption).unwrap(); n]
    }

    #[test]
    fn free_resource_never_stops() {
        let k = chain();
        let eps = episodes(k.shape(), 20, 0.5, 0.0);
        let rec = run(&k, eps, &RunConfig::new(0.5, 0.1, 20, 1)).unwrap();
        assert!(rec.stop.is_none());
        assert_eq!(rec.total_consumption, 0.0);
        assert_eq!(rec.final_budget, rec.initial_budget);
    }

    #[test]
    fn budget_is_never_exceeded_and_stop_plays_null() {
        let k = chain();
        let eps = episodes(k.shape(), 30, 1.0, 1.0);
        let cfg = RunConfig { dual: DualConfig { frozen: true, ..Default::default() }, ..RunConfig::new(0.3, 0.1, 30, 4) };
        let rec = run(&k, eps, &cfg).unwrap();
        let stop = rec.stop.expect("greedy spending must exhaust the budget");
        assert!(rec.total_consumption <= rec.initial_budget);
        for (t, ep) in rec.episodes.iter().enumerate() {
            for (h, step) in ep.steps.iter().enumerate() {
                if (t, h) > (stop.episode, stop.step) {
                    assert_eq!(step.action, 0);
                }
            }
        }
        assert_eq!(rec.active_episodes(), stop.episode + 1);
    }

    #[test]
    fn short_stream_is_rejected() {
        let k = chain();
        let eps = episodes(k.shape(), 3, 0.5, 0.5);
        assert!(run(&k, eps, &RunConfig::new(0.5, 0.1, 5, 0)).is_err());
    }

    #[test]
    fn identical_seeds_identical_records() {
        let k = chain();
        let cfg = RunConfig::new(0.5, 0.1, 15, 9);
        let a = run(&k, episodes(k.shape(), 15, 0.8, 0.6), &cfg).unwrap();
        let b = run(&k, episodes(k.shape(), 15, 0.8, 0.6), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_planning_has_no_estimation_gap() {
        let k = chain();
        let eps = episodes(k.shape(), 10, 0.8, 0.6);
        let cfg = RunConfig { planning: Planning::ExactKernel, ..RunConfig::new(0.5, 0.1, 10, 2) };
        let rec = run(&k, eps.clone(), &cfg).unwrap();
        let terms = regret_terms(&rec, &k, &eps, 0.0).unwrap();
        assert!(terms.term_ii.abs() < 1e-8);
        assert!((terms.total + rec.total_reward).abs() < 1e-8);
    }

    #[test]
    fn lp_observer_sees_every_active_episode() {
        let k = chain();
        let mut seen = Vec::new();
        run_with(&k, episodes(k.shape(), 4, 0.5, 0.1), &RunConfig::new(0.5, 0.1, 4, 0), &DenseSimplex::default(), &mut |t, _| {
            seen.push(t);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }
}
