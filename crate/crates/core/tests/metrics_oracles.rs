mod common;

use common::{calinski_harabasz_direct, davies_bouldin_direct, silhouette_direct};
use ppg_gate_core::matrix::Matrix;
use ppg_gate_core::metrics::{calinski_harabasz, davies_bouldin, silhouette};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Matrix, Vec<i64>)> {
    (2usize..=5, 1usize..=4).prop_flat_map(|(k, dim)| {
        (k + 1..=60).prop_flat_map(move |n| {
            (
                proptest::collection::vec(-10.0f64..10.0, n * dim),
                // The first k labels cover every cluster; the rest are free.
                proptest::collection::vec(0..k as i64, n - k),
            )
                .prop_map(move |(values, rest)| {
                    let labels: Vec<i64> = (0..k as i64).chain(rest).collect();
                    (Matrix::from_vec(n, dim, values).unwrap(), labels)
                })
        })
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn validity_matches_direct_formulas((points, labels) in instance()) {
        let s = silhouette(&points, &labels).unwrap();
        prop_assert!(close(s, silhouette_direct(&points, &labels)));
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(close(davies_bouldin(&points, &labels).unwrap(), davies_bouldin_direct(&points, &labels)));
        prop_assert!(close(calinski_harabasz(&points, &labels).unwrap(), calinski_harabasz_direct(&points, &labels)));
    }

    #[test]
    fn validity_ignores_label_names((points, labels) in instance(), shift in 1i64..100) {
        let renamed: Vec<i64> = labels.iter().map(|l| l * 7 + shift).collect();
        prop_assert_eq!(silhouette(&points, &labels).unwrap(), silhouette(&points, &renamed).unwrap());
        prop_assert!(close(davies_bouldin(&points, &labels).unwrap(), davies_bouldin(&points, &renamed).unwrap()));
    }
}
