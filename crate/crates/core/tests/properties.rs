mod common;

use ndarray::Array3;
use proptest::prelude::*;
use udor_core::latent::{EmptyPartBank, PartitionedLatent};
use udor_core::metrics::{integrity_score, modularity_score};

fn latent(n: usize, len: usize) -> impl Strategy<Value = PartitionedLatent> {
    prop::collection::vec(-10.0f32..10.0, n * len).prop_map(move |v| PartitionedLatent::split(&v, n).unwrap())
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (1usize..6, 1usize..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn split_concat_round_trip((n, len) in shape(), seed in any::<u64>()) {
        let v: Vec<f32> = (0..n * len).map(|i| ((seed.wrapping_add(i as u64) % 997) as f32) * 0.01).collect();
        let l = PartitionedLatent::split(&v, n).unwrap();
        prop_assert_eq!(l.concat(), v);
        prop_assert_eq!(l.part_length(), len);
    }

    #[test]
    fn reset_is_pure_and_idempotent(
        (r, bank, k) in shape().prop_flat_map(|(n, len)| (latent(n, len), latent(n, len), 0..n))
    ) {
        let bank = EmptyPartBank::new(bank);
        let once = r.reset_part(k, &bank).unwrap();
        prop_assert_eq!(once.part(k), bank.part(k));
        prop_assert_eq!(&once.reset_part(k, &bank).unwrap(), &once);
        for j in (0..r.n_parts()).filter(|&j| j != k) {
            prop_assert_eq!(once.part(j), r.part(j));
        }
    }

    #[test]
    fn swap_back_restores(
        (a, b, k) in shape().prop_flat_map(|(n, len)| (latent(n, len), latent(n, len), 0..n))
    ) {
        prop_assert_eq!(&a.swap_part(&a, k).unwrap(), &a);
        let s = a.swap_part(&b, k).unwrap();
        prop_assert_eq!(s.part(k), b.part(k));
        prop_assert_eq!(&s.swap_part(&a, k).unwrap(), &a);
    }

    #[test]
    fn modularity_scales_linearly(
        (t, d, l) in (1usize..6, 1usize..6, 1usize..5),
        c in 0.01f64..100.0,
        seed in any::<u64>(),
    ) {
        let mut x = seed;
        let z = Array3::from_shape_fn((t, d, l), |_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64
        });
        let m = modularity_score(z.view()).unwrap();
        let mc = modularity_score((&z * c).view()).unwrap();
        prop_assert!((mc - c * m).abs() <= 1e-9 * (1.0 + mc.abs()));
        let zeros = Array3::<f64>::zeros((t, d, l));
        prop_assert!(integrity_score(z.view(), zeros.view()).unwrap() >= 0.0);
    }
}
