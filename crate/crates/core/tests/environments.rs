use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use ts_sgld::env::{
    low_rank_from_factors, normalize, spectrum_ratios, EnvKind, EnvSpec, Environment,
};
use ts_sgld::rng::rng_from_seed;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_spec_same_matrix(seed in any::<u64>(), kind in 0usize..2) {
        let spec = EnvSpec {
            n_users: 30,
            n_arms: 6,
            rank: 3,
            kind: [EnvKind::LowRank, EnvKind::Cluster][kind],
            seed,
            ..EnvSpec::default()
        };
        prop_assert_eq!(Environment::generate(&spec).unwrap(), Environment::generate(&spec).unwrap());
    }

    #[test]
    fn noiseless_factors_have_rank_c(seed in any::<u64>(), c in 1usize..5) {
        let mut rng = rng_from_seed(seed);
        let u = DMatrix::from_fn(20, c, |_, _| rng.random::<f64>());
        let v = DMatrix::from_fn(c, 8, |_, _| rng.random::<f64>());
        let sorted = |m: &DMatrix<f64>| {
            let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        };
        let s = sorted(&(&u * &v));
        prop_assert!(s[c..].iter().all(|&x| x < 1e-9 * s[0]));
        // Min-max normalization is affine, so it adds at most one direction.
        let s = sorted(&low_rank_from_factors(&u, &v, 0.0, 0.0, &mut rng).unwrap());
        prop_assert!(s[c + 1..].iter().all(|&x| x < 1e-9 * s[0]));
    }

    #[test]
    fn cluster_rows_follow_assignment(seed in any::<u64>(), c in 1usize..5) {
        let env = Environment::generate(&EnvSpec { n_users: 25, n_arms: 5, rank: c, kind: EnvKind::Cluster, seed, ..EnvSpec::default() }).unwrap();
        let a = env.assignment.unwrap();
        let m = env.matrix.values();
        let mut distinct: Vec<Vec<u64>> = Vec::new();
        for i in 0..25 {
            let row: Vec<u64> = m.row(i).iter().map(|x| x.to_bits()).collect();
            if !distinct.contains(&row) {
                distinct.push(row);
            }
            for j in 0..25 {
                if a[i] == a[j] {
                    prop_assert_eq!(m.row(i), m.row(j));
                }
            }
        }
        prop_assert!(distinct.len() <= c);
    }

    #[test]
    fn normalize_is_idempotent(values in prop::collection::vec(-5.0f64..5.0, 12)) {
        let once = normalize(&DMatrix::from_row_slice(3, 4, &values));
        prop_assert_eq!(normalize(&once), once);
    }
}

#[test]
fn fourteen_slot_spectrum_passes_eigen_oracle() {
    let env = Environment::generate(&EnvSpec {
        n_users: 200,
        n_arms: 14,
        rank: 4,
        kind: EnvKind::SpectrumMatched,
        seed: 11,
        ..EnvSpec::default()
    })
    .unwrap();
    let m = env.matrix.values();
    // Singular values from the eigenvalues of MᵀM.
    let mut s: Vec<f64> = (m.transpose() * m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    assert!(s[13] / s[1] >= 0.3, "tail ratio {}", s[13] / s[1]);
    let (top, tail) = spectrum_ratios(m);
    assert!((top - s[0] / s[1]).abs() < 1e-6);
    assert!((tail - s[13] / s[1]).abs() < 1e-6);
    let zero_rows = (0..200).filter(|&i| m.row(i).iter().all(|&x| x == 0.0)).count();
    assert_eq!(zero_rows, 20);
}
