//! Visit counters, the empirical kernel and Bernstein-style confidence boxes.

use ndarray::{s, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MdpShape, TransitionKernel, Trajectory};
use crate::nested;

/// Argument of the logarithm in the radius formulas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogArgument {
    /// `H S A T / delta`.
    #[default]
    Hsat,
    /// `H S^2 A T / delta`.
    Hs2at,
}

impl LogArgument {
    pub fn log_term(self, shape: MdpShape, episodes: usize, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        if episodes == 0 {
            return Err(Error::InvalidArgument("episode count must be positive".into()));
        }
        let s = shape.states as f64;
        let base = shape.horizon as f64 * s * shape.actions as f64 * episodes as f64 / delta;
        Ok(match self {
            LogArgument::Hsat => base.ln(),
            LogArgument::Hs2at => (base * s).ln(),
        })
    }
}

/// `N[[h, s, a]]` and `M[[h, s, a, s']]` over the `H - 1` transition layers.
/// Only transitions whose successor was observed are counted, so the last
/// step of an episode never contributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitCounters {
    pub shape: MdpShape,
    #[serde(with = "nested::array3_u64")]
    pub visits: Array3<u64>,
    #[serde(with = "nested::array4_u64")]
    pub transitions: Array4<u64>,
}

impl VisitCounters {
    pub fn new(shape: MdpShape) -> Self {
        let (h, s, a, s2) = shape.transition_dims();
        Self { shape, visits: Array3::zeros((h, s, a)), transitions: Array4::zeros((h, s, a, s2)) }
    }

    pub fn record(&mut self, h: usize, s: usize, a: usize, next: usize) {
        self.visits[[h, s, a]] += 1;
        self.transitions[[h, s, a, next]] += 1;
    }

    pub fn is_consistent(&self) -> bool {
        self.visits
            .indexed_iter()
            .all(|((h, s, a), &n)| self.transitions.slice(s![h, s, a, ..]).sum() == n)
    }
}

/// Adds every observed transition of `traj`.
pub fn update_counters(counters: &mut VisitCounters, traj: &Trajectory) {
    for (h, step) in traj.steps.iter().enumerate() {
        if h + 1 >= counters.shape.horizon {
            break;
        }
        if let Some(next) = step.next_state {
            counters.record(h, step.state, step.action, next);
        }
    }
}

/// `M / max(1, N)`.
pub fn empirical_kernel(counters: &VisitCounters) -> Array4<f64> {
    let mut pbar = Array4::zeros(counters.transitions.dim());
    for ((h, s, a, s2), &m) in counters.transitions.indexed_iter() {
        let n = counters.visits[[h, s, a]].max(1);
        pbar[[h, s, a, s2]] = m as f64 / n as f64;
    }
    pbar
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusParams {
    pub delta: f64,
    /// Total number of episodes `T`.
    pub episodes: usize,
    #[serde(default)]
    pub log_argument: LogArgument,
}

impl RadiusParams {
    pub fn log_term(&self, shape: MdpShape) -> Result<f64> {
        self.log_argument.log_term(shape, self.episodes, self.delta)
    }
}

/// Bernstein radius for one entry given `N` and the empirical probability.
pub fn radius_entry(visits: u64, pbar: f64, log_term: f64) -> f64 {
    let denom = (visits.saturating_sub(1)).max(1) as f64;
    2.0 * (pbar * log_term / denom).sqrt() + 14.0 * log_term / (3.0 * denom)
}

pub fn confidence_radius(
    counters: &VisitCounters,
    pbar: &Array4<f64>,
    params: RadiusParams,
) -> Result<Array4<f64>> {
    if pbar.dim() != counters.transitions.dim() {
        return Err(Error::ShapeMismatch("empirical kernel does not match counters".into()));
    }
    let log_term = params.log_term(counters.shape)?;
    let mut eps = Array4::zeros(pbar.dim());
    for ((h, s, a, s2), &p) in pbar.indexed_iter() {
        eps[[h, s, a, s2]] = radius_entry(counters.visits[[h, s, a]], p, log_term);
    }
    Ok(eps)
}

/// Entrywise box `|P - pbar| <= eps` around the empirical kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub shape: MdpShape,
    #[serde(with = "nested::array4")]
    pub pbar: Array4<f64>,
    #[serde(with = "nested::array4")]
    pub eps: Array4<f64>,
    pub delta: f64,
}

impl ConfidenceSet {
    pub fn build(counters: &VisitCounters, params: RadiusParams) -> Result<Self> {
        let pbar = empirical_kernel(counters);
        let eps = confidence_radius(counters, &pbar, params)?;
        Ok(Self { shape: counters.shape, pbar, eps, delta: params.delta })
    }

    /// Degenerate box `{kernel}`.
    pub fn exact(kernel: &TransitionKernel) -> Self {
        Self {
            shape: kernel.shape(),
            pbar: kernel.trans().clone(),
            eps: Array4::zeros(kernel.trans().dim()),
            delta: f64::NAN,
        }
    }

    /// Lower and upper probability bounds of one entry, clipped to `[0, 1]`.
    pub fn bounds(&self, h: usize, s: usize, a: usize, next: usize) -> (f64, f64) {
        let p = self.pbar[[h, s, a, next]];
        let e = self.eps[[h, s, a, next]];
        ((p - e).max(0.0), (p + e).min(1.0))
    }

    /// Whether every transition entry of `kernel` lies in the box. The
    /// initial distribution is known and not checked.
    pub fn contains(&self, kernel: &TransitionKernel) -> Result<bool> {
        if kernel.trans().dim() != self.pbar.dim() {
            return Err(Error::ShapeMismatch("kernel does not match confidence set".into()));
        }
        Ok(kernel
            .trans()
            .iter()
            .zip(self.pbar.iter().zip(self.eps.iter()))
            .all(|(p, (pb, e))| (p - pb).abs() <= *e))
    }
}

/// Wider radius `6 sqrt(P L / max(1,N)) + 94 L / max(1,N)` that bounds the
/// distance between any two members of the box (analysis diagnostic).
pub fn star_radius(
    counters: &VisitCounters,
    kernel: &TransitionKernel,
    params: RadiusParams,
) -> Result<Array4<f64>> {
    if kernel.trans().dim() != counters.transitions.dim() {
        return Err(Error::ShapeMismatch("kernel does not match counters".into()));
    }
    let log_term = params.log_term(counters.shape)?;
    let mut out = Array4::zeros(counters.transitions.dim());
    for ((h, s, a, s2), &p) in kernel.trans().indexed_iter() {
        let n = counters.visits[[h, s, a]].max(1) as f64;
        out[[h, s, a, s2]] = 6.0 * (p * log_term / n).sqrt() + 94.0 * log_term / n;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;
    use approx::assert_abs_diff_eq;

    fn shape() -> MdpShape {
        MdpShape::new(3, 2, 3, 0).unwrap()
    }

    fn params() -> RadiusParams {
        RadiusParams { delta: 0.1, episodes: 100, log_argument: LogArgument::Hsat }
    }

    #[test]
    fn empty_trajectory_leaves_counters() {
        let mut c = VisitCounters::new(shape());
        update_counters(&mut c, &Trajectory::empty(shape()));
        assert_eq!(c, VisitCounters::new(shape()));
    }

    #[test]
    fn full_episode_counts_h_minus_one_transitions() {
        let mut c = VisitCounters::new(shape());
        let mut t = Trajectory::empty(shape());
        for (h, (s, n)) in [(0, Some(1)), (1, Some(2)), (2, None)].into_iter().enumerate() {
            t.push(Step { state: s, action: h % 2, reward: 0.0, consumption: 0.0, next_state: n });
        }
        update_counters(&mut c, &t);
        assert_eq!(c.visits.sum(), 2);
        assert_eq!(c.transitions.sum(), 2);
        assert_eq!(c.transitions[[0, 0, 0, 1]], 1);
        assert_eq!(c.transitions[[1, 1, 1, 2]], 1);
        assert!(c.is_consistent());
    }

    #[test]
    fn empirical_kernel_formula() {
        let mut c = VisitCounters::new(shape());
        let p = empirical_kernel(&c);
        assert!(p.iter().all(|&v| v == 0.0));
        for _ in 0..3 {
            c.record(0, 0, 0, 0);
        }
        for _ in 0..2 {
            c.record(0, 0, 0, 1);
        }
        c.record(0, 0, 0, 2);
        let p = empirical_kernel(&c);
        assert_abs_diff_eq!(p[[0, 0, 0, 0]], 0.5);
        assert_abs_diff_eq!(p[[0, 0, 0, 1]], 1.0 / 3.0);
        assert_abs_diff_eq!(p[[0, 0, 0, 2]], 1.0 / 6.0);

        let mut c = VisitCounters::new(shape());
        for n in [0, 1, 1, 2] {
            c.record(1, 1, 1, n);
        }
        assert_abs_diff_eq!(empirical_kernel(&c)[[1, 1, 1, 2]], 0.25);
    }

    #[test]
    fn radius_guards_and_closed_forms() {
        let l = params().log_term(shape()).unwrap();
        assert_abs_diff_eq!(l, (3.0f64 * 3.0 * 2.0 * 100.0 / 0.1).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(radius_entry(0, 0.0, l), 14.0 / 3.0 * l, epsilon = 1e-12);
        assert_abs_diff_eq!(radius_entry(1, 0.0, l), 14.0 / 3.0 * l, epsilon = 1e-12);
        assert_abs_diff_eq!(radius_entry(5, 1.0, l), l.sqrt() + 7.0 * l / 6.0, epsilon = 1e-12);
        let mut prev = f64::INFINITY;
        for n in 0..200 {
            let e = radius_entry(n, 0.3, l);
            assert!(e <= prev);
            prev = e;
        }
        let bad = RadiusParams { delta: 0.0, ..params() };
        assert!(bad.log_term(shape()).is_err());
    }

    #[test]
    fn star_radius_closed_forms() {
        let sh = MdpShape::new(2, 2, 2, 0).unwrap();
        let mut c = VisitCounters::new(sh);
        for _ in 0..9 {
            c.record(0, 0, 0, 0);
        }
        let mut trans = Array4::zeros(sh.transition_dims());
        trans.slice_mut(s![.., .., .., 0]).fill(1.0);
        let k = TransitionKernel::new(sh, trans, ndarray::array![1.0, 0.0]).unwrap();
        let p = RadiusParams { delta: 0.1, episodes: 10, log_argument: LogArgument::Hsat };
        let l = p.log_term(sh).unwrap();
        let e = star_radius(&c, &k, p).unwrap();
        assert_abs_diff_eq!(e[[0, 0, 0, 0]], 2.0 * l.sqrt() + 94.0 * l / 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[[0, 0, 0, 1]], 94.0 * l / 9.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[[0, 1, 0, 1]], 94.0 * l, epsilon = 1e-12);
    }

    #[test]
    fn fresh_box_contains_everything() {
        let sh = shape();
        let set = ConfidenceSet::build(&VisitCounters::new(sh), params()).unwrap();
        assert!(set.eps.iter().all(|&e| e > 1.0));
        let mut trans = Array4::zeros(sh.transition_dims());
        trans.slice_mut(s![.., .., .., 2]).fill(1.0);
        let k = TransitionKernel::new(sh, trans, ndarray::array![1.0, 0.0, 0.0]).unwrap();
        assert!(set.contains(&k).unwrap());

        let exact = ConfidenceSet::exact(&k);
        assert!(exact.contains(&k).unwrap());
        let mut moved = k.trans().clone();
        moved[[0, 0, 0, 2]] = 0.5;
        moved[[0, 0, 0, 1]] = 0.5;
        let k2 = TransitionKernel::new(sh, moved, k.init().clone()).unwrap();
        assert!(!exact.contains(&k2).unwrap());
    }
}
