//! Allocator output against the independent brute-force oracles.

use proptest::prelude::*;
use rollout_budget::allocator::{
    continuous_neyman, estimator_variance, solve_dual, AllocatorConfig, DualClosure,
};
use rollout_budget::oracle::{brute_force_allocation, integer_brute_force};
use rollout_budget::PromptId;

fn ids(m: usize) -> Vec<PromptId> {
    (0..m as u32).map(PromptId).collect()
}

#[test]
fn grid_examples() {
    let g = brute_force_allocation(&[1.0, 2.0], &[4.0, 1.0], 8.0, 400).unwrap();
    let c = continuous_neyman(&[1.0, 2.0], &[4.0, 1.0], 8.0).unwrap();
    assert!((g.min_variance - c.v_star).abs() < 1e-9);
    assert!((c.n_star[0] - 1.0).abs() < 1e-12 && (c.n_star[1] - 4.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn realised_plan_is_near_the_integer_optimum(
        inst in prop::collection::vec((0.1f64..5.0, 1u32..20), 1..=3),
        per_prompt in 4.0f64..24.0,
    ) {
        let sig: Vec<f64> = inst.iter().map(|x| x.0).collect();
        let len: Vec<f64> = inst.iter().map(|x| x.1 as f64).collect();
        let m = sig.len() as f64;
        let l_max = len.iter().cloned().fold(0.0, f64::max);
        let b = per_prompt * len.iter().sum::<f64>();
        let cfg = AllocatorConfig { closure: DualClosure::Realized, ..AllocatorConfig::default() };
        let plan = solve_dual(&ids(sig.len()), &sig, &len, b, 1.0, &cfg).unwrap();
        prop_assume!(plan.counts.iter().all(|&n| n <= 64));
        let best = integer_brute_force(&sig, &len, b, 1, 64).unwrap().unwrap();
        let counts: Vec<f64> = plan.counts.iter().map(|&n| n as f64).collect();
        let v = estimator_variance(&counts, &sig).unwrap();
        let v_star = continuous_neyman(&sig, &len, b).unwrap().v_star;
        prop_assert!(plan.predicted_tokens <= b * (1.0 + 1e-12));
        prop_assert!(v_star <= best.variance * (1.0 + 1e-12));
        prop_assert!(best.variance <= v * (1.0 + 1e-12));
        prop_assert!(v - best.variance <= 10.0 * m * l_max / b * v_star, "v {v} int {}", best.variance);
    }
}
