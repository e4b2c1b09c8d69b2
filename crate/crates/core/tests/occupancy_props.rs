use allocsim::mdp::{
    conditional_occupancy, inner, kernel_from_extended, marginal, occupancy_from_policy, policy_from_occupancy,
    reward_to_go, sample_episode, validate_occupancy,
};
use allocsim::{MdpShape, OccupancyMeasure};
use allocsim_oracle::{forward_occupancy, forward_occupancy_from, monte_carlo_mean, random_functions, random_kernel, random_policy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape_from(rng: &mut ChaCha8Rng) -> MdpShape {
    MdpShape::new(rng.random_range(1..=4), rng.random_range(2..=4), rng.random_range(1..=5), 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn forward_recursion_agrees_with_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = shape_from(&mut rng);
        let kernel = random_kernel(&mut rng, shape);
        let pi = random_policy(&mut rng, shape);
        let ext = occupancy_from_policy(&kernel, &pi).unwrap();
        prop_assert!(validate_occupancy(&ext, 1e-12).is_empty());
        let reference = forward_occupancy(kernel.trans(), kernel.init(), pi.table());
        let q = marginal(&ext);
        for (a, b) in q.q.iter().zip(reference.iter()) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn policy_and_kernel_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = shape_from(&mut rng);
        let kernel = random_kernel(&mut rng, shape);
        let pi = random_policy(&mut rng, shape);
        let ext = occupancy_from_policy(&kernel, &pi).unwrap();
        let q = marginal(&ext);
        let back = policy_from_occupancy(&q, shape.star_action).unwrap();
        let induced = kernel_from_extended(&ext, shape.star_action).unwrap();
        // exponential-spacing draws are strictly positive, so every row is visited
        for (a, b) in back.table().iter().zip(pi.table().iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in induced.trans().iter().zip(kernel.trans().iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let again = marginal(&occupancy_from_policy(&kernel, &back).unwrap());
        for (a, b) in again.q.iter().zip(q.q.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_occupancy_agrees_with_reference(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = shape_from(&mut rng);
        let kernel = random_kernel(&mut rng, shape);
        let pi = random_policy(&mut rng, shape);
        let state = rng.random_range(0..shape.states);
        let step = rng.random_range(0..shape.horizon);
        let q = conditional_occupancy(&kernel, &pi, state, step).unwrap();
        let reference = forward_occupancy_from(kernel.trans(), pi.table(), state, step);
        for (a, b) in q.q.iter().zip(reference.iter()) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn value_recursion_equals_inner_product(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = shape_from(&mut rng);
        let kernel = random_kernel(&mut rng, shape);
        let pi = random_policy(&mut rng, shape);
        let f = random_functions(&mut rng, shape).reward;
        let q = marginal(&occupancy_from_policy(&kernel, &pi).unwrap());
        let j = reward_to_go(&kernel, &pi, &f).unwrap();
        let start: f64 = (0..shape.states).map(|s| kernel.init()[s] * j[[0, s]]).sum();
        prop_assert!((start - inner(&q, &f).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perturbed_occupancy_is_flagged(seed in any::<u64>(), bump in 1e-6..1e-2f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = MdpShape::new(3, 2, 3, 0).unwrap();
        let kernel = random_kernel(&mut rng, shape);
        let pi = random_policy(&mut rng, shape);
        let mut ext = occupancy_from_policy(&kernel, &pi).unwrap();
        ext.qbar[[1, 0, 1, 2]] += bump;
        prop_assert!(!validate_occupancy(&ext, 1e-9).is_empty());
    }
}

#[test]
fn sampled_returns_match_occupancy_inner_products() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = MdpShape::new(3, 3, 4, 0).unwrap();
        let kernel = random_kernel(&mut rng, shape);
        let pi = random_policy(&mut rng, shape);
        let fg = random_functions(&mut rng, shape);
        let q: OccupancyMeasure = marginal(&occupancy_from_policy(&kernel, &pi).unwrap());
        let mc = monte_carlo_mean(&kernel, &pi, &fg, 100_000, seed + 100);
        let r = inner(&q, &fg.reward).unwrap();
        let c = inner(&q, &fg.consumption).unwrap();
        assert!((mc.mean_reward - r).abs() <= 4.0 * mc.stderr_reward, "reward {} vs {}", mc.mean_reward, r);
        assert!((mc.mean_consumption - c).abs() <= 4.0 * mc.stderr_consumption);
    }
}

#[test]
fn library_sampler_visits_with_occupancy_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = MdpShape::new(3, 2, 3, 0).unwrap();
    let kernel = random_kernel(&mut rng, shape);
    let pi = random_policy(&mut rng, shape);
    let q = marginal(&occupancy_from_policy(&kernel, &pi).unwrap());
    let n = 40_000;
    let mut counts = ndarray::Array3::<f64>::zeros(shape.stage_dims());
    for i in 0..n {
        let traj = sample_episode(&kernel, &pi, &random_functions(&mut rng, shape), i).unwrap();
        counts += &traj.visits.mapv(f64::from);
    }
    for (c, p) in counts.iter().zip(q.q.iter()) {
        let freq = c / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 4.0 * sigma + 1e-12, "freq {freq} vs {p}");
    }
}
