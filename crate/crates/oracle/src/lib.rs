//! Deliberately naive reference implementations. Nothing here calls the
//! algorithmic code of `allocsim`; only its data types are shared.

use allocsim::{ConfidenceSet, EpisodeFunctions, MdpShape, Policy, TransitionKernel};
use ndarray::{Array1, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest number of deterministic policies `enumerate_best_policy` visits.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Action per `[h, s]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeterministicPolicy(pub Array2<usize>);

impl DeterministicPolicy {
    pub fn to_policy(&self, shape: MdpShape) -> Policy {
        Policy::from_choices(shape, &self.0)
    }
}

/// `q[h, s, a]` of `pi` under `trans` and `init` by forward recursion.
pub fn forward_occupancy(trans: &Array4<f64>, init: &Array1<f64>, pi: &Array3<f64>) -> Array3<f64> {
    let (hn, sn, an) = pi.dim();
    let mut q = Array3::zeros((hn, sn, an));
    let mut dist = init.clone();
    for h in 0..hn {
        let mut next = Array1::<f64>::zeros(sn);
        for s in 0..sn {
            for a in 0..an {
                q[[h, s, a]] = dist[s] * pi[[h, s, a]];
                if h + 1 < hn {
                    for n in 0..sn {
                        next[n] += q[[h, s, a]] * trans[[h, s, a, n]];
                    }
                }
            }
        }
        dist = next;
    }
    q
}

/// Occupancy of `pi` started in `state` at `step`; earlier steps are zero.
pub fn forward_occupancy_from(trans: &Array4<f64>, pi: &Array3<f64>, state: usize, step: usize) -> Array3<f64> {
    let (hn, sn, an) = pi.dim();
    let mut sub_pi = Array3::zeros((hn - step, sn, an));
    sub_pi.assign(&pi.slice(ndarray::s![step.., .., ..]));
    let mut sub_trans = Array4::zeros((hn - step - 1, sn, an, sn));
    if hn - step > 1 {
        sub_trans.assign(&trans.slice(ndarray::s![step.., .., .., ..]));
    }
    let mut init = Array1::zeros(sn);
    init[state] = 1.0;
    let tail = forward_occupancy(&sub_trans, &init, &sub_pi);
    let mut q = Array3::zeros((hn, sn, an));
    q.slice_mut(ndarray::s![step.., .., ..]).assign(&tail);
    q
}

fn deterministic_table(shape: MdpShape, choice: &Array2<usize>) -> Array3<f64> {
    let mut pi = Array3::zeros(shape.stage_dims());
    for ((h, s), &a) in choice.indexed_iter() {
        pi[[h, s, a]] = 1.0;
    }
    pi
}

/// Best deterministic policy for the linear objective `c` by trying all
/// `A^(S H)` of them. Returns `None` above [`ENUMERATION_LIMIT`].
pub fn enumerate_best_policy(kernel: &TransitionKernel, c: &Array3<f64>) -> Option<(f64, DeterministicPolicy)> {
    let shape = kernel.shape();
    let (hn, sn, an) = shape.stage_dims();
    let cells = (hn * sn) as u32;
    let count = (an as u128).checked_pow(cells)?;
    if count > ENUMERATION_LIMIT {
        return None;
    }
    let mut best: Option<(f64, DeterministicPolicy)> = None;
    for code in 0..count {
        let mut rest = code;
        let mut choice = Array2::zeros((hn, sn));
        for cell in choice.iter_mut() {
            *cell = (rest % an as u128) as usize;
            rest /= an as u128;
        }
        let q = forward_occupancy(kernel.trans(), kernel.init(), &deterministic_table(shape, &choice));
        let value = (&q * c).sum();
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, DeterministicPolicy(choice)));
        }
    }
    best
}

/// Same optimum by backward induction.
pub fn dp_best_policy(kernel: &TransitionKernel, c: &Array3<f64>) -> (f64, DeterministicPolicy) {
    let (hn, sn, an) = kernel.shape().stage_dims();
    let mut v = vec![0.0; sn];
    let mut choice = Array2::zeros((hn, sn));
    for h in (0..hn).rev() {
        let mut nv = vec![f64::NEG_INFINITY; sn];
        for s in 0..sn {
            for a in 0..an {
                let mut x = c[[h, s, a]];
                if h + 1 < hn {
                    x += (0..sn).map(|n| kernel.trans()[[h, s, a, n]] * v[n]).sum::<f64>();
                }
                if x > nv[s] {
                    nv[s] = x;
                    choice[[h, s]] = a;
                }
            }
        }
        v = nv;
    }
    let value = (0..sn).map(|s| kernel.init()[s] * v[s]).sum();
    (value, DeterministicPolicy(choice))
}

/// `max p . values` over `lower <= p <= upper`, `sum p = 1`: start from the
/// lower bounds and pour the remaining mass into successors in decreasing
/// order of value. `None` when the set is empty.
pub fn greedy_inner_max(values: &[f64], lower: &[f64], upper: &[f64]) -> Option<f64> {
    let mut p: Vec<f64> = lower.to_vec();
    let mut left = 1.0 - p.iter().sum::<f64>();
    if left < -1e-12 {
        return None;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    for i in order {
        let add = (upper[i] - lower[i]).min(left.max(0.0));
        p[i] += add;
        left -= add;
    }
    if left > 1e-12 {
        return None;
    }
    Some(p.iter().zip(values).map(|(a, b)| a * b).sum())
}

/// Optimistic value `max_{pi, P' in box} <c, q^{P', pi}>` by extended
/// backward induction. `None` when some box row has no distribution.
pub fn optimistic_dp(set: &ConfidenceSet, init: &Array1<f64>, c: &Array3<f64>) -> Option<f64> {
    let (hn, sn, an) = c.dim();
    let mut v = vec![0.0; sn];
    for h in (0..hn).rev() {
        let mut nv = vec![f64::NEG_INFINITY; sn];
        for s in 0..sn {
            for a in 0..an {
                let mut x = c[[h, s, a]];
                if h + 1 < hn {
                    let mut lower = vec![0.0; sn];
                    let mut upper = vec![0.0; sn];
                    for n in 0..sn {
                        let (p, e) = (set.pbar[[h, s, a, n]], set.eps[[h, s, a, n]]);
                        lower[n] = (p - e).max(0.0);
                        upper[n] = (p + e).min(1.0);
                    }
                    x += greedy_inner_max(&v, &lower, &upper)?;
                }
                nv[s] = nv[s].max(x);
            }
        }
        v = nv;
    }
    Some((0..sn).map(|s| init[s] * v[s]).sum())
}

/// Sample means of `<n, f>` and `<n, g>` with their standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarlo {
    pub mean_reward: f64,
    pub mean_consumption: f64,
    pub stderr_reward: f64,
    pub stderr_consumption: f64,
    /// Sample mean of `<n, f>^2`.
    pub mean_reward_squared: f64,
    pub stderr_reward_squared: f64,
}

fn draw<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn mean_and_stderr(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

pub fn monte_carlo_mean(
    kernel: &TransitionKernel,
    pi: &Policy,
    fg: &EpisodeFunctions,
    episodes: usize,
    seed: u64,
) -> MonteCarlo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hn, sn, _) = kernel.shape().stage_dims();
    let (mut sr, mut sr2, mut sc, mut sc2, mut sr4) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..episodes {
        let mut s = draw(&mut rng, kernel.init().iter().copied());
        let (mut r, mut c) = (0.0, 0.0);
        for h in 0..hn {
            let a = draw(&mut rng, pi.table().slice(ndarray::s![h, s, ..]).iter().copied());
            r += fg.reward[[h, s, a]];
            c += fg.consumption[[h, s, a]];
            if h + 1 < hn {
                s = draw(&mut rng, (0..sn).map(|n| kernel.trans()[[h, s, a, n]]));
            }
        }
        sr += r;
        sr2 += r * r;
        sc += c;
        sc2 += c * c;
        sr4 += r * r * r * r;
    }
    let n = episodes as f64;
    let (mean_reward, stderr_reward) = mean_and_stderr(sr, sr2, n);
    let (mean_consumption, stderr_consumption) = mean_and_stderr(sc, sc2, n);
    let (mean_reward_squared, stderr_reward_squared) = mean_and_stderr(sr2, sr4, n);
    MonteCarlo {
        mean_reward,
        mean_consumption,
        stderr_reward,
        stderr_consumption,
        mean_reward_squared,
        stderr_reward_squared,
    }
}

pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    // exponential spacings give a uniform draw on the simplex
    let mut row: Array1<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total = row.sum();
    row /= total;
    row
}

pub fn random_kernel<R: Rng>(rng: &mut R, shape: MdpShape) -> TransitionKernel {
    let (hn, sn, an, _) = shape.transition_dims();
    let mut trans = Array4::zeros(shape.transition_dims());
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                trans.slice_mut(ndarray::s![h, s, a, ..]).assign(&random_distribution(rng, sn));
            }
        }
    }
    let init = random_distribution(rng, sn);
    TransitionKernel::with_tolerance(shape, trans, init, 1e-9).expect("rows are normalized")
}

pub fn random_policy<R: Rng>(rng: &mut R, shape: MdpShape) -> Policy {
    let (hn, sn, an) = shape.stage_dims();
    let mut pi = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        for s in 0..sn {
            pi.slice_mut(ndarray::s![h, s, ..]).assign(&random_distribution(rng, an));
        }
    }
    Policy::new(pi).expect("rows are normalized")
}

/// Uniform `[0, 1]` reward and consumption with a free null action.
pub fn random_functions<R: Rng>(rng: &mut R, shape: MdpShape) -> EpisodeFunctions {
    let dims = shape.stage_dims();
    let mut reward = Array3::from_shape_simple_fn(dims, || rng.random::<f64>());
    let mut consumption = Array3::from_shape_simple_fn(dims, || rng.random::<f64>());
    reward.slice_mut(ndarray::s![.., .., shape.star_action]).fill(0.0);
    consumption.slice_mut(ndarray::s![.., .., shape.star_action]).fill(0.0);
    EpisodeFunctions { reward, consumption }
}

/// Box around `kernel` whose radii are drawn from `[0, max_eps]` and whose
/// center is shifted by at most the radius, so `kernel` stays inside.
pub fn random_box_around<R: Rng>(rng: &mut R, kernel: &TransitionKernel, max_eps: f64) -> ConfidenceSet {
    let mut set = ConfidenceSet::exact(kernel);
    for (e, p) in set.eps.iter_mut().zip(set.pbar.iter_mut()) {
        *e = rng.random::<f64>() * max_eps;
        *p += (2.0 * rng.random::<f64>() - 1.0) * *e;
    }
    set
}

/// A kernel whose rows lie in `set`, found by clipping a random convex
/// combination of the box's greedy vertices. `None` if a row cannot be
/// placed in the box.
pub fn sample_kernel_in_box<R: Rng>(rng: &mut R, set: &ConfidenceSet, init: &Array1<f64>) -> Option<TransitionKernel> {
    let shape = set.shape;
    let (hn, sn, an, _) = shape.transition_dims();
    let mut trans = Array4::zeros(shape.transition_dims());
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                let lower: Vec<f64> = (0..sn).map(|n| (set.pbar[[h, s, a, n]] - set.eps[[h, s, a, n]]).max(0.0)).collect();
                let upper: Vec<f64> = (0..sn).map(|n| (set.pbar[[h, s, a, n]] + set.eps[[h, s, a, n]]).min(1.0)).collect();
                // fill the slack above the lower bounds in a random order
                let mut row = lower.clone();
                let mut left = 1.0 - row.iter().sum::<f64>();
                if left < -1e-12 {
                    return None;
                }
                let weights = random_distribution(rng, sn);
                for (n, w) in weights.iter().enumerate() {
                    let add = (upper[n] - lower[n]).min(left * w * sn as f64).min(left.max(0.0));
                    row[n] += add;
                    left -= add;
                }
                for n in 0..sn {
                    let add = (upper[n] - row[n]).min(left.max(0.0));
                    row[n] += add;
                    left -= add;
                }
                if left > 1e-12 {
                    return None;
                }
                let total: f64 = row.iter().sum();
                for n in 0..sn {
                    trans[[h, s, a, n]] = row[n] / total;
                }
            }
        }
    }
    TransitionKernel::with_tolerance(shape, trans, init.clone(), 1e-9).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn greedy_pours_into_best_successor() {
        let v = greedy_inner_max(&[1.0, 5.0, 2.0], &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(v, 5.0);
        let v = greedy_inner_max(&[1.0, 5.0, 2.0], &[0.2, 0.0, 0.0], &[1.0, 0.5, 1.0]).unwrap();
        assert!((v - (0.2 + 2.5 + 0.6)).abs() < 1e-12);
        assert!(greedy_inner_max(&[0.0, 0.0], &[0.0, 0.0], &[0.3, 0.3]).is_none());
    }

    #[test]
    fn zero_objective_has_zero_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let shape = MdpShape::new(2, 2, 2, 0).unwrap();
        let k = random_kernel(&mut rng, shape);
        assert_eq!(enumerate_best_policy(&k, &shape.zeros_stage()).unwrap().0, 0.0);
        assert_eq!(dp_best_policy(&k, &shape.zeros_stage()).0, 0.0);
    }

    #[test]
    fn one_step_is_weighted_row_max() {
        let shape = MdpShape::new(2, 2, 1, 0).unwrap();
        let k = TransitionKernel::new(shape, Array4::zeros(shape.transition_dims()), array![0.25, 0.75]).unwrap();
        let c = array![[[0.0, 0.4], [0.9, 0.1]]];
        let (v, _) = enumerate_best_policy(&k, &c).unwrap();
        assert!((v - (0.25 * 0.4 + 0.75 * 0.9)).abs() < 1e-15);
    }

    #[test]
    fn enumeration_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = MdpShape::new(5, 4, 5, 0).unwrap();
        let k = random_kernel(&mut rng, shape);
        assert!(enumerate_best_policy(&k, &shape.zeros_stage()).is_none());
    }

    #[test]
    fn deterministic_chain_has_no_variance() {
        let shape = MdpShape::new(2, 2, 3, 0).unwrap();
        let mut trans = Array4::zeros(shape.transition_dims());
        for h in 0..2 {
            for s in 0..2 {
                for a in 0..2 {
                    trans[[h, s, a, 1 - s]] = 1.0;
                }
            }
        }
        let k = TransitionKernel::new(shape, trans, array![1.0, 0.0]).unwrap();
        let pi = Policy::deterministic_constant(shape, 1);
        let mut reward = shape.zeros_stage();
        reward[[0, 0, 1]] = 0.5;
        reward[[1, 1, 1]] = 0.25;
        reward[[2, 0, 1]] = 1.0;
        let fg = EpisodeFunctions { reward, consumption: shape.zeros_stage() };
        let mc = monte_carlo_mean(&k, &pi, &fg, 50, 3);
        assert_eq!(mc.mean_reward, 1.75);
        assert_eq!(mc.stderr_reward, 0.0);
    }
}
