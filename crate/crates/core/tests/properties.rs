use proptest::prelude::*;
use sysid_core::estimators::{lad_rowwise, LadConfig, RegressionData};
use sysid_core::filtering::{filter_ranking, filter_threshold, middle_window, RankingParams, ThresholdParams};
use sysid_core::simulate::{simulate, AttackKind, AttackStrategy, NoiseModel};
use sysid_core::sysgen::{generate_system, SystemSpec};
use sysid_core::{Matrix, Vector};

fn l1_objective(data: &RegressionData, coef: &[f64]) -> f64 {
    data.residuals(coef).unwrap().iter().map(|r| r.abs()).sum()
}

fn regression(dim: usize, rows: Vec<(Vec<f64>, f64)>) -> RegressionData {
    let x = Matrix::from_rows(&rows.iter().map(|(r, _)| r[..dim].to_vec()).collect::<Vec<_>>()).unwrap();
    RegressionData::new(x, Vector(rows.iter().map(|(_, y)| *y).collect())).unwrap()
}

fn regression_strategy() -> impl Strategy<Value = RegressionData> {
    (1usize..=3, 8usize..=24).prop_flat_map(|(dim, m)| {
        proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 3), -20.0f64..20.0), m)
            .prop_map(move |rows| regression(dim, rows))
    })
}

fn states_strategy() -> impl Strategy<Value = (Vec<Vector>, Matrix)> {
    (2usize..=4, 6usize..=30).prop_flat_map(|(n, t)| {
        (
            proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, n), t + 1),
            proptest::collection::vec(-1.0f64..1.0, n * n),
        )
            .prop_map(move |(xs, a)| (xs.into_iter().map(Vector).collect(), Matrix::new(n, n, a).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lad_objective_scales_with_targets(data in regression_strategy(), c in 0.1f64..10.0) {
        let cfg = LadConfig::default();
        let base = lad_rowwise(&data, &cfg).unwrap();
        let scaled = RegressionData::new(data.x.clone(), Vector(data.y.iter().map(|v| c * v).collect())).unwrap();
        let fit = lad_rowwise(&scaled, &cfg).unwrap();
        let f0 = l1_objective(&data, &base.coef);
        let f1 = l1_objective(&scaled, &fit.coef);
        prop_assert!((f1 - c * f0).abs() <= 1e-7 * (1.0 + c * f0));
    }

    #[test]
    fn lad_beats_perturbations(data in regression_strategy(), delta in proptest::collection::vec(-0.5f64..0.5, 3)) {
        let fit = lad_rowwise(&data, &LadConfig::default()).unwrap();
        let f = l1_objective(&data, &fit.coef);
        let moved: Vec<f64> = fit.coef.iter().zip(&delta).map(|(a, d)| a + d).collect();
        prop_assert!(f <= l1_objective(&data, &moved) + 1e-9 * (1.0 + f));
    }

    #[test]
    fn threshold_filter_is_monotone((states, a) in states_strategy(), b1 in 0.0f64..1.0, b2 in 0.0f64..10.0, extra in 0.0f64..5.0) {
        let tight = filter_threshold(&states, &a, &ThresholdParams::new(b1, b2).unwrap()).unwrap();
        let loose = filter_threshold(&states, &a, &ThresholdParams::new(b1, b2 + extra).unwrap()).unwrap();
        for (small, big) in tight.retained.iter().zip(&loose.retained) {
            prop_assert!(small.iter().all(|t| big.contains(t)));
        }
    }

    #[test]
    fn filters_are_row_local((states, a) in states_strategy(), row in proptest::collection::vec(-3.0f64..3.0, 4), q2 in 0.1f64..0.9) {
        let n = a.rows();
        let mut changed = a.clone();
        changed.row_mut(n - 1).copy_from_slice(&row[..n]);
        let params = ThresholdParams::new(0.3, 1.0).unwrap();
        let before = filter_threshold(&states, &a, &params).unwrap();
        let after = filter_threshold(&states, &changed, &params).unwrap();
        prop_assert_eq!(&before.retained[..n - 1], &after.retained[..n - 1]);
        let rank = RankingParams::quantile(0.8, q2);
        let before = filter_ranking(&states, &a, &rank).unwrap();
        let after = filter_ranking(&states, &changed, &rank).unwrap();
        prop_assert_eq!(&before.retained[..n - 1], &after.retained[..n - 1]);
    }

    #[test]
    fn threshold_filter_commutes_with_node_permutation((states, a) in states_strategy(), shift in 1usize..4) {
        let n = a.rows();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let p_states: Vec<Vector> = states.iter().map(|x| Vector(perm.iter().map(|&j| x[j]).collect())).collect();
        let p_a = Matrix::from_fn(n, n, |i, j| a.row(perm[i])[perm[j]]);
        let params = ThresholdParams::new(0.2, 2.0).unwrap();
        let base = filter_threshold(&states, &a, &params).unwrap();
        let moved = filter_threshold(&p_states, &p_a, &params).unwrap();
        for i in 0..n {
            prop_assert_eq!(&moved.retained[i], &base.retained[perm[i]]);
        }
    }

    #[test]
    fn ranking_cardinality_is_exact((states, a) in states_strategy(), q1 in 0.2f64..1.0, q2 in 0.0f64..1.0) {
        let result = filter_ranking(&states, &a, &RankingParams::quantile(q1, q2));
        let t_len = states.len() - 1;
        match middle_window(t_len, q1) {
            None => prop_assert!(result.is_err()),
            Some((lo, hi)) => {
                let result = result.unwrap();
                let c = hi - lo + 1;
                let keep = (q2 * c as f64).floor() as usize;
                prop_assert_eq!(result.middle_set.as_ref().unwrap().len(), c);
                for set in &result.retained {
                    prop_assert_eq!(set.len(), keep);
                    prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }

    #[test]
    fn simulation_reconstructs_states(seed in any::<u64>(), p in 0.0f64..0.5, mu in 0.0f64..50.0) {
        let sys = generate_system(&SystemSpec { n: 3, rho_target: 0.7, opnorm_target: 1.2, seed: seed % 17 }).unwrap();
        let attack = AttackStrategy { kind: AttackKind::FixedOffset { mu }, p };
        let rec = simulate(&sys, 50, &NoiseModel::gaussian(2.0), &attack, None, seed).unwrap();
        for t in 0..50 {
            let ax = sys.a.matvec(&rec.states[t]).unwrap();
            for i in 0..3 {
                let expect = ax[i] + rec.noise[t][i] + rec.attacks[t][i];
                prop_assert!((rec.states[t + 1][i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
                prop_assert_eq!(rec.attacks[t][i] != 0.0, rec.schedule.attacked(t, i) && mu != 0.0);
            }
        }
    }
}
