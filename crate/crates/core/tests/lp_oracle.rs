use allocsim::lp::{argmax_penalized, solve_hindsight_lp, solve_hindsight_opt, DenseSimplex, FeasibleRegion};
use allocsim::mdp::{inner, marginal, occupancy_from_policy};
use allocsim::{ConfidenceSet, MdpShape, RadiusParams, VisitCounters};
use allocsim_oracle::{
    dp_best_policy, enumerate_best_policy, optimistic_dp, random_box_around, random_functions, random_kernel,
    random_policy, sample_kernel_in_box,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_shape(rng: &mut ChaCha8Rng) -> MdpShape {
    MdpShape::new(rng.random_range(1..=3), rng.random_range(2..=3), rng.random_range(1..=3), 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_lp_matches_enumeration(seed in any::<u64>(), lambda in 0.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tiny_shape(&mut rng);
        let kernel = random_kernel(&mut rng, shape);
        let fg = random_functions(&mut rng, shape);
        let (q, sol) = argmax_penalized(FeasibleRegion::Exact(&kernel), &fg, lambda, &DenseSimplex::default()).unwrap();
        let (brute, _) = enumerate_best_policy(&kernel, &fg.penalized(lambda)).unwrap();
        let (dp, _) = dp_best_policy(&kernel, &fg.penalized(lambda));
        prop_assert!((sol.objective - brute).abs() < 1e-6, "lp {} brute {}", sol.objective, brute);
        prop_assert!((brute - dp).abs() < 1e-12);
        prop_assert!((inner(&q, &fg.penalized(lambda)).unwrap() - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn box_lp_matches_extended_backward_induction(seed in any::<u64>(), max_eps in 0.0..0.6f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tiny_shape(&mut rng);
        let kernel = random_kernel(&mut rng, shape);
        let set = random_box_around(&mut rng, &kernel, max_eps);
        let fg = random_functions(&mut rng, shape);
        let lambda = rng.random::<f64>();
        let region = FeasibleRegion::Confidence { set: &set, init: kernel.init() };
        let (_, sol) = argmax_penalized(region, &fg, lambda, &DenseSimplex::default()).unwrap();
        let oracle = optimistic_dp(&set, kernel.init(), &fg.penalized(lambda)).unwrap();
        prop_assert!((sol.objective - oracle).abs() < 1e-6, "lp {} oracle {}", sol.objective, oracle);
    }

    #[test]
    fn optimism_dominates_members_of_the_box(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tiny_shape(&mut rng);
        let kernel = random_kernel(&mut rng, shape);
        let set = random_box_around(&mut rng, &kernel, 0.3);
        let c = random_functions(&mut rng, shape).reward;
        let top = optimistic_dp(&set, kernel.init(), &c).unwrap();
        for _ in 0..100 {
            let member = sample_kernel_in_box(&mut rng, &set, kernel.init()).unwrap();
            let (v, _) = dp_best_policy(&member, &c);
            prop_assert!(v <= top + 1e-9);
        }
    }

    #[test]
    fn lp_solution_is_a_valid_occupancy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = MdpShape::new(3, 3, 4, 0).unwrap();
        let kernel = random_kernel(&mut rng, shape);
        let set = random_box_around(&mut rng, &kernel, 0.2);
        let fg = random_functions(&mut rng, shape);
        let lp = {
            let mut lp = allocsim::lp::build_delta_lp(FeasibleRegion::Confidence { set: &set, init: kernel.init() });
            lp.set_objective(&fg.reward).unwrap();
            lp
        };
        let (ext, sol) = lp.solve(&DenseSimplex::default());
        prop_assert!(sol.is_optimal());
        prop_assert!(allocsim::mdp::validate_occupancy(&ext, 1e-8).is_empty());
        prop_assert!(lp.violation(&ext) < 1e-7);
        let induced = allocsim::mdp::kernel_from_extended(&ext, shape.star_action).unwrap();
        let q = marginal(&ext);
        for ((h, s, a, n), &p) in induced.trans().indexed_iter() {
            if q.q[[h, s, a]] > 1e-6 {
                let (lo, hi) = set.bounds(h, s, a, n);
                prop_assert!(p >= lo - 1e-6 && p <= hi + 1e-6);
            }
        }
    }
}

#[test]
fn fresh_counters_give_free_routing_value() {
    // nothing observed: every box row is the whole simplex, so the optimum
    // collects the best reward reachable at every step
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = MdpShape::new(3, 3, 3, 0).unwrap();
    let kernel = random_kernel(&mut rng, shape);
    let set = ConfidenceSet::build(&VisitCounters::new(shape), RadiusParams { delta: 0.1, episodes: 10, log_argument: Default::default() })
        .unwrap();
    let fg = random_functions(&mut rng, shape);
    let region = FeasibleRegion::Confidence { set: &set, init: kernel.init() };
    let (_, sol) = argmax_penalized(region, &fg, 0.0, &DenseSimplex::default()).unwrap();
    let best_at = |h: usize| (0..3).flat_map(|s| (0..3).map(move |a| (s, a))).map(|(s, a)| fg.reward[[h, s, a]]).fold(0.0, f64::max);
    let first: f64 = (0..3).map(|s| kernel.init()[s] * (0..3).map(|a| fg.reward[[0, s, a]]).fold(0.0, f64::max)).sum();
    let expected = first + best_at(1) + best_at(2);
    assert!((sol.objective - expected).abs() < 1e-9);
    assert!((optimistic_dp(&set, kernel.init(), &fg.reward).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn optimistic_value_grows_with_the_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let shape = MdpShape::new(3, 2, 3, 0).unwrap();
    let kernel = random_kernel(&mut rng, shape);
    let c = random_functions(&mut rng, shape).reward;
    let mut set = ConfidenceSet::exact(&kernel);
    let mut last = optimistic_dp(&set, kernel.init(), &c).unwrap();
    assert!((last - dp_best_policy(&kernel, &c).0).abs() < 1e-12);
    for _ in 0..10 {
        set.eps.mapv_inplace(|e| e + 0.03);
        let v = optimistic_dp(&set, kernel.init(), &c).unwrap();
        assert!(v >= last - 1e-12);
        last = v;
    }
}

#[test]
fn lagrangian_hindsight_matches_coupled_lp() {
    let solver = DenseSimplex::default();
    for seed in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = MdpShape::new(2, 3, 3, 0).unwrap();
        let kernel = random_kernel(&mut rng, shape);
        let episodes: Vec<_> = (0..5).map(|_| random_functions(&mut rng, shape)).collect();
        let rho = 0.1 + 0.8 * rng.random::<f64>();
        let fast = solve_hindsight_opt(&kernel, &episodes, rho).unwrap();
        let lp = solve_hindsight_lp(&kernel, &episodes, rho, &solver).unwrap();
        assert!((fast.value - lp.value).abs() < 1e-6, "seed {seed}: {} vs {}", fast.value, lp.value);
        assert!(fast.duality_gap.abs() < 1e-6);
        let budget = 5.0 * 3.0 * rho;
        assert!(fast.consumption <= budget + 1e-9);
        let reward: f64 = fast.occupancies.iter().zip(&episodes).map(|(q, ep)| inner(q, &ep.reward).unwrap()).sum();
        assert!((reward - fast.value).abs() < 1e-9);
    }
}

#[test]
fn hindsight_optimum_dominates_fixed_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shape = MdpShape::new(3, 3, 4, 0).unwrap();
    let kernel = random_kernel(&mut rng, shape);
    let episodes: Vec<_> = (0..40).map(|_| random_functions(&mut rng, shape)).collect();
    let rho = 0.5;
    let opt = solve_hindsight_opt(&kernel, &episodes, rho).unwrap();
    for _ in 0..50 {
        let q = marginal(&occupancy_from_policy(&kernel, &random_policy(&mut rng, shape)).unwrap());
        let cost: f64 = episodes.iter().map(|ep| inner(&q, &ep.consumption).unwrap()).sum();
        let reward: f64 = episodes.iter().map(|ep| inner(&q, &ep.reward).unwrap()).sum();
        // scale the policy down towards the null action until it fits
        let budget = 40.0 * 4.0 * rho;
        let scale = (budget / cost).min(1.0);
        assert!(scale * reward <= opt.value + 1e-9);
    }
}
