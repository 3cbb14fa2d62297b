use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;

use kingman_lab::chain::{choose2, simulate_path, transition_law, CountVector, Jump};
use kingman_lab::coalescent::{lengths_by_branches, lengths_by_levels, order_counts, sample_merge_history, sample_times};
use kingman_lab::coupling::{check_coupling_identities, optimal_coupling, tv_distance, Coupler, CoupledState};
use kingman_lab::moments::mean_w;
use kingman_lab::rng::{run_replicates, stream};

/// A level `k` and tracked counts with `Σ w <= k`.
fn state(max_k: usize, max_s: usize) -> impl Strategy<Value = (usize, Vec<u32>)> {
    (2..=max_k, 1..=max_s).prop_flat_map(|(k, s)| {
        proptest::collection::vec(0..=k as u32, s).prop_map(move |mut w| {
            // scale down until the counts fit in k branches
            while w.iter().sum::<u32>() as usize > k {
                let i = w.iter().enumerate().max_by_key(|e| e.1).unwrap().0;
                w[i] /= 2;
            }
            (k, w)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transition_law_is_a_law((k, w) in state(400, 6)) {
        let law = transition_law(k, &w).unwrap();
        prop_assert_eq!(law.total(), choose2(k as u64) as u128);
        for &(z, _) in law.entries() {
            let mut next = w.clone();
            z.apply(&mut next);
            // one merge removes at most two tracked branches and adds at most one
            let before: i64 = w.iter().map(|&x| x as i64).sum();
            let after: i64 = next.iter().map(|&x| x as i64).sum();
            prop_assert!(before - after <= 2 && after - before <= 0);
            prop_assert!(CountVector::new(k - 1, next).is_ok());
        }
    }

    #[test]
    fn jump_components_round_trip(z in proptest::collection::vec(-2i8..=1, 1..=16)) {
        let jump = Jump::from_components(&z).unwrap();
        prop_assert_eq!(jump.components(z.len()), z);
    }

    #[test]
    fn coupling_identities_hold((k, v) in state(300, 3), seed in any::<u64>()) {
        let mut rng = stream(seed, 0);
        let vt: Vec<u32> = v.iter().map(|_| rand::Rng::random_range(&mut rng, 0..=k as u32)).collect();
        prop_assert_eq!(check_coupling_identities(k, &v, &vt).unwrap(), Ok(()));
    }

    #[test]
    fn coupling_of_equal_single_order_is_perfect(k in 2usize..500, w in 0u32..500) {
        let w = w.min(k as u32);
        let d = optimal_coupling(k, &CountVector::new(k, vec![w]).unwrap(), &[w]).unwrap();
        prop_assert!(d.tv().is_zero());
    }

    #[test]
    fn tv_is_symmetric_and_bounded((k, v) in state(80, 3), (_, u) in state(80, 3)) {
        prop_assume!(v.len() == u.len() && u.iter().sum::<u32>() as usize <= k);
        let (p, q) = (transition_law(k, &v).unwrap(), transition_law(k, &u).unwrap());
        let (a, b) = (tv_distance(&p, &q).unwrap(), tv_distance(&q, &p).unwrap());
        prop_assert_eq!(a, b);
        prop_assert!(*a.numer() <= *a.denom());
    }

    #[test]
    fn chain_paths_respect_structure(n in 2usize..300, s in 1usize..5, seed in any::<u64>()) {
        prop_assume!(s < n);
        let path = simulate_path(n, s, &mut stream(seed, 0)).unwrap();
        prop_assert!(path.is_legal());
        prop_assert_eq!(path.at(n)[0] as usize, n);
        for (k, w) in path.levels() {
            let tracked: usize = w.iter().sum::<u32>() as usize;
            let leaves: usize = w.iter().enumerate().map(|(i, &x)| (i + 1) * x as usize).sum();
            prop_assert!(tracked <= k && leaves <= n);
        }
    }

    #[test]
    fn tree_counts_and_lengths_agree(n in 2usize..200, seed in any::<u64>()) {
        let mut rng = stream(seed, 1);
        let h = sample_merge_history(n, &mut rng).unwrap();
        let t = sample_times(n, &mut rng).unwrap();
        let s = (n - 1).min(4);
        let by_branch = lengths_by_branches(&h, &t, s).unwrap();
        let by_level = lengths_by_levels(&h, &t, s).unwrap();
        for (a, b) in by_branch.iter().zip(&by_level) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
        let path = order_counts(&h, s).unwrap();
        prop_assert!(path.is_legal());
        for (k, w) in path.levels() {
            let sizes = h.block_sizes(k);
            for r in 1..=s {
                let direct = sizes.iter().filter(|&&b| b as usize == r).count() as u32;
                prop_assert_eq!(w[r - 1], direct);
            }
        }
    }

    #[test]
    fn coupled_steps_keep_states_valid((k, v) in state(200, 3), seed in any::<u64>()) {
        let mut rng = stream(seed, 2);
        let vt: Vec<u32> = v.iter().map(|_| rand::Rng::random_range(&mut rng, 0..=k as u32)).collect();
        let mut st = CoupledState::new(k, v, vt).unwrap();
        let mut coupler = Coupler::new();
        while st.level > 1 {
            coupler.step(&mut st, &mut rng).unwrap();
            prop_assert!(CountVector::new(st.level, st.v.clone()).is_ok());
            prop_assert!(st.v_tilde.iter().all(|&x| x as usize <= st.level));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    /// Every block at level `k >= 2` has order below `n`, so the expected
    /// counts add up to `k` branches and `n` leaves.
    #[test]
    fn expected_counts_partition_the_leaves(n in 3usize..60, k in 2usize..60) {
        prop_assume!(k <= n);
        let (mut branches, mut leaves) = (BigRational::zero(), BigRational::zero());
        for r in 1..n {
            let m = mean_w(n, k, r).unwrap();
            leaves += &m * BigRational::from_integer(BigInt::from(r));
            branches += m;
        }
        prop_assert_eq!(branches, BigRational::from_integer(BigInt::from(k)));
        prop_assert_eq!(leaves, BigRational::from_integer(BigInt::from(n)));
    }

    #[test]
    fn replicate_results_ignore_worker_count(seed in any::<u64>(), workers in 1usize..5) {
        let draw = |w| run_replicates(17, seed, Some(w), |i, rng| Ok((i, rand::Rng::random::<u64>(rng)))).unwrap();
        prop_assert_eq!(draw(1), draw(workers));
    }
}
