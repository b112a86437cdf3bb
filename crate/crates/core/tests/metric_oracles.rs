mod common;

use cloudburst_core::evaluation::metrics::{contingency, crps, reliability_index, MetricError};
use cloudburst_core::grid::GridField;
use cloudburst_core::response::triage::CostModel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_counts, crps_integral, expected_cost};

#[test]
fn crps_matches_integral_on_random_ensembles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(1..=12);
        let members: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..50.0)).collect();
        let obs = rng.random_range(-5.0..50.0);
        worst = worst.max((crps(&members, obs).unwrap() - crps_integral(&members, obs)).abs());
    }
    assert!(worst <= 1e-6, "max error {worst}");
}

#[test]
fn crps_examples() {
    assert_eq!(crps(&[0.0, 2.0], 1.0).unwrap(), 0.5);
    assert_eq!(crps(&[5.0, 5.0, 5.0], 5.0).unwrap(), 0.0);
    assert_eq!(crps(&[], 1.0), Err(MetricError::EmptyEnsemble));
    assert_eq!(crps(&[f64::NAN], 1.0), Err(MetricError::NonFinite));
}

#[test]
fn cost_loss_threshold_never_loses_to_fixed_policies() {
    for (l_miss, l_false) in [(9.0, 1.0), (1.0, 1.0), (1.0, 4.0), (20.0, 3.0)] {
        let costs = CostModel::new(l_miss, l_false).unwrap();
        let p_star = costs.p_star();
        for i in 0..=20 {
            let p = i as f64 * 0.05;
            let rule = expected_cost(p, p >= p_star, l_miss, l_false);
            assert!(rule <= expected_cost(p, true, l_miss, l_false), "p={p}");
            assert!(rule <= expected_cost(p, false, l_miss, l_false), "p={p}");
        }
    }
}

fn field(bits: &[bool], nx: usize) -> GridField {
    let data = bits.iter().map(|&b| if b { 30.0 } else { 5.0 }).collect();
    GridField::from_vec(nx, bits.len() / nx, 1.0, 0, data).unwrap()
}

proptest! {
    #[test]
    fn crps_of_single_member_is_absolute_error(x in -100.0f64..100.0, y in -100.0f64..100.0) {
        prop_assert_eq!(crps(&[x], y).unwrap(), (x - y).abs());
    }

    #[test]
    fn contingency_matches_brute_force(
        cells in prop::collection::vec((any::<bool>(), any::<bool>()), 16..=16 * 8),
    ) {
        let n = cells.len() - cells.len() % 4;
        let f: Vec<bool> = cells[..n].iter().map(|c| c.0).collect();
        let o: Vec<bool> = cells[..n].iter().map(|c| c.1).collect();
        let t = contingency(&field(&f, 4), &field(&o, 4), 20.0, None).unwrap();
        let (h, m, fa, cn) = brute_counts(&f, &o);
        prop_assert_eq!((t.hits, t.misses, t.false_alarms, t.correct_negatives), (h, m, fa, cn));
        prop_assert_eq!(t.total(), n as u64);
        let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        prop_assert_eq!(t.csi(), ratio(h, h + m + fa));
        prop_assert_eq!(t.pod(), ratio(h, h + m));
        prop_assert_eq!(t.far(), ratio(fa, h + fa));
    }

    #[test]
    fn reliability_ignores_pair_order(
        pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200),
        seed in any::<u64>(),
    ) {
        let mut shuffled = pairs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = reliability_index(&pairs, 10).unwrap();
        let b = reliability_index(&shuffled, 10).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn reliability_hand_cases() {
    assert_eq!(reliability_index(&[(1.0, true); 5], 10), Some(1.0));
    assert_eq!(reliability_index(&[(1.0, false); 5], 10), Some(0.0));
    assert_eq!(reliability_index(&[(0.5, true), (0.5, false)], 10), Some(1.0));
    assert_eq!(reliability_index(&[], 10), None);
}
