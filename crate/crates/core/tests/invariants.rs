use foldscope::analysis::pair_folding_sweep;
use foldscope::cantornet::{build_cantornet, decision_region_contains, nested_generating_function};
use foldscope::folding::{
    chi_upper_bound, folding_with_layer_mask, refine_path, sample_segment, FoldingProfile, PathStat,
};
use foldscope::{folding_profile, hamming, ActivationPattern, LayerMask, MlpNetwork};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct evaluation of the range measures from a raw pattern sequence.
fn oracle(patterns: &[ActivationPattern]) -> (usize, usize, f64) {
    let mut walk: Vec<&ActivationPattern> = Vec::new();
    for p in patterns {
        if walk.last() != Some(&p) {
            walk.push(p);
        }
    }
    let r1 = walk.iter().map(|p| hamming(walk[0], p).unwrap()).max().unwrap_or(0);
    let r2: usize = walk.windows(2).map(|w| hamming(w[0], w[1]).unwrap()).sum();
    let chi = if r2 == 0 { 0.0 } else { 1.0 - r1 as f64 / r2 as f64 };
    (r1, r2, chi)
}

fn patterns_strategy() -> impl Strategy<Value = Vec<ActivationPattern>> {
    (1usize..12).prop_flat_map(|bits| {
        prop::collection::vec(prop::collection::vec(any::<bool>(), bits), 1..30)
            .prop_map(|rows| rows.into_iter().map(ActivationPattern::from_bits).collect())
    })
}

fn random_net(rng: &mut ChaCha8Rng, input: usize, depth: usize) -> MlpNetwork {
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..9)).collect();
    MlpNetwork::he_uniform(input, &hidden, 2, rng).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
}

proptest! {
    #[test]
    fn profile_matches_oracle(patterns in patterns_strategy()) {
        let profile = FoldingProfile::from_patterns(&patterns, None).unwrap();
        let (r1, r2, chi) = oracle(&patterns);
        prop_assert_eq!(profile.r1(), r1);
        prop_assert_eq!(profile.r2(), r2);
        prop_assert_eq!(profile.chi_final, chi);
        prop_assert_eq!(profile.degenerate, r2 == 0);
    }

    #[test]
    fn chi_within_bounds(patterns in patterns_strategy()) {
        let profile = FoldingProfile::from_patterns(&patterns, None).unwrap();
        prop_assert!(profile.chi_final >= 0.0);
        if !profile.degenerate {
            prop_assert!(profile.chi_final <= chi_upper_bound(profile.distinct_count()));
        }
    }

    #[test]
    fn duplicating_samples_changes_nothing(
        patterns in patterns_strategy(),
        repeats in prop::collection::vec(1usize..4, 30),
    ) {
        let stretched: Vec<ActivationPattern> = patterns
            .iter()
            .zip(repeats.iter().cycle())
            .flat_map(|(p, &r)| std::iter::repeat_n(p.clone(), r))
            .collect();
        let a = FoldingProfile::from_patterns(&patterns, None).unwrap();
        let b = FoldingProfile::from_patterns(&stretched, None).unwrap();
        prop_assert_eq!((a.r1(), a.r2(), a.chi_final), (b.r1(), b.r2(), b.chi_final));
        prop_assert_eq!(a.chi_prefix_max(), b.chi_prefix_max());
    }

    #[test]
    fn range_gap_never_shrinks(patterns in patterns_strategy()) {
        let p = FoldingProfile::from_patterns(&patterns, None).unwrap();
        let gaps: Vec<i64> = p.r2_prefix.iter().zip(&p.r1_prefix).map(|(&r2, &r1)| r2 as i64 - r1 as i64).collect();
        prop_assert!(gaps.windows(2).all(|w| w[1] >= w[0]));
        // A flat walk is flat on every prefix.
        if p.chi_final == 0.0 {
            prop_assert!(p.chi_prefix.iter().flatten().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn total_length_is_reversal_invariant(patterns in patterns_strategy()) {
        let mut rev = patterns.clone();
        rev.reverse();
        let a = FoldingProfile::from_patterns(&patterns, None).unwrap();
        let b = FoldingProfile::from_patterns(&rev, None).unwrap();
        prop_assert_eq!(a.r2(), b.r2());
    }

    #[test]
    fn network_paths_match_oracle(seed in any::<u64>(), depth in 1usize..4, steps in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, 3, depth);
        let (a, b) = (random_point(&mut rng, 3), random_point(&mut rng, 3));
        let path = sample_segment(&a, &b, steps).unwrap();
        let pats: Vec<ActivationPattern> = path.points().map(|x| net.forward_with_pattern(&x).unwrap().1).collect();
        let profile = folding_profile(&net, &path).unwrap();
        let (r1, r2, chi) = oracle(&pats);
        prop_assert_eq!((profile.r1(), profile.r2(), profile.chi_final), (r1, r2, chi));
        if depth == 1 {
            prop_assert_eq!(profile.chi_final, 0.0);
        }
    }

    #[test]
    fn network_is_affine_inside_a_region(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_net(&mut rng, 2, 3);
        let a = random_point(&mut rng, 2);
        let dir = random_point(&mut rng, 2);
        let b: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + 1e-3 * d).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (fa, pa) = net.forward_with_pattern(&a).unwrap();
        let (fb, pb) = net.forward_with_pattern(&b).unwrap();
        let (fm, pm) = net.forward_with_pattern(&mid).unwrap();
        if pa == pb && pb == pm {
            for i in 0..fa.len() {
                prop_assert!((fm[i] - 0.5 * (fa[i] + fb[i])).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn refined_depth_one_walks_move_one_bit_at_a_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let net = random_net(&mut rng, 2, 1);
        let (a, b) = (random_point(&mut rng, 2), random_point(&mut rng, 2));
        let mask = LayerMask::hidden(&net);
        let r = refine_path(&net, &sample_segment(&a, &b, 3).unwrap(), 4096, &mask).unwrap();
        assert_eq!(r.unresolved, 0);
        let p = folding_with_layer_mask(&net, &r.path, &mask).unwrap();
        assert!(p.patterns.windows(2).all(|w| hamming(&w[0], &w[1]).unwrap() == 1));
        // Every step moves away from the start.
        assert!(p.hamming_to_start.windows(2).all(|w| w[1] == w[0] + 1));
        assert_eq!(p.chi_final, 0.0);
    }
}

#[test]
fn cantornet_output_sign_matches_region_on_grid() {
    for k in 1..=3 {
        let net = build_cantornet(k).unwrap();
        for iy in 0..200 {
            for ix in 0..200 {
                // Offset by half a cell so no sample sits on the boundary.
                let p = [(ix as f64 + 0.5) / 200.0, (iy as f64 + 0.5) / 200.0];
                let out = net.forward(&p).unwrap()[0];
                assert_eq!(out <= 0.0, decision_region_contains(k, p), "k={k} at {p:?}");
            }
        }
    }
}

#[test]
fn cantornet_depth_two_matches_nested_function() {
    let net = build_cantornet(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (x, y): (f64, f64) = (rng.random(), rng.random());
        let expected = -0.5 * nested_generating_function(x, 2) + y - 0.5;
        let got = net.forward(&[x, y]).unwrap()[0];
        assert!((got - expected).abs() < 1e-12, "({x}, {y}): {got} vs {expected}");
    }
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = MlpNetwork::he_uniform(6, &[10, 10, 10], 3, &mut rng).unwrap();
    let a = Array2::from_shape_fn((7, 6), |_| rng.random::<f64>());
    let b = Array2::from_shape_fn((5, 6), |_| rng.random::<f64>());
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| pair_folding_sweep(&net, a.view(), b.view(), 30, PathStat::PrefixMax).unwrap())
    };
    let one = run(1);
    assert_eq!(one.len(), 35);
    for t in [2, 3, 8] {
        assert_eq!(run(t), one);
    }
}
