//! Property tests over randomized inputs.

use proptest::prelude::*;

use effdyn::{subsample, Trajectory};

fn traj(values: Vec<f64>) -> Trajectory {
    Trajectory {
        dim: 1,
        positions: values,
        velocities: None,
        dt: 0.1,
        lag: 1,
    }
}

proptest! {
    /// Subsampling keeps exactly the points at multiples of the lag.
    #[test]
    fn subsample_picks_lag_multiples(len in 2usize..200, lag in 1usize..40) {
        let t = traj((0..len).map(|i| i as f64).collect());
        let result = subsample(&t, lag);
        if lag >= len {
            prop_assert!(result.is_err());
        } else {
            let s = result.unwrap();
            let expect: Vec<f64> = (0..len).step_by(lag).map(|i| i as f64).collect();
            prop_assert_eq!(s.positions, expect);
            prop_assert_eq!(s.lag, lag);
        }
    }

    /// Binary trajectory serialization round-trips exactly.
    #[test]
    fn trajectory_binary_roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 2..60)) {
        let t = traj(values);
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        let back = Trajectory::read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(t, back);
    }

    /// Models built from random positive weight matrices satisfy the
    /// stochasticity and stationarity invariants, and the adjoint is an
    /// involution that preserves mu.
    #[test]
    fn random_models_satisfy_invariants(
        weights in proptest::collection::vec(0.05f64..1.0, 16..=16),
    ) {
        let n = 4;
        let mut p = effdyn::nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            let row = &weights[i * n..(i + 1) * n];
            let s: f64 = row.iter().sum();
            for j in 0..n {
                p[(i, j)] = row[j] / s;
            }
        }
        let model = effdyn::TransitionModel::from_matrix(p, 1.0).unwrap();
        model.validate().unwrap();
        let adj = model.adjoint();
        for i in 0..n {
            let row_sum: f64 = adj.row(i).iter().sum();
            prop_assert!((row_sum - 1.0).abs() < 1e-10);
        }
        // involution
        let adj_model = effdyn::TransitionModel::from_matrix(adj, 1.0).unwrap();
        let back = adj_model.adjoint();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((back[(i, j)] - model.p()[(i, j)]).abs() < 1e-9);
            }
        }
        // splitting reassembles the matrix to the last bit or two: the
        // complement is computed as p - rev, so re-adding loses at most one
        // rounding
        let (rev, non) = model.decompose();
        for i in 0..n {
            for j in 0..n {
                let back = rev[(i, j)] + non[(i, j)];
                prop_assert!((back - model.p()[(i, j)]).abs() <= 1e-15);
            }
        }
    }

    /// Committors stay in [0, 1] and the flux identity holds on random
    /// reversible chains.
    #[test]
    fn committor_bounds_hold(seed in 0u64..5000) {
        let mut rng = effdyn::rng::seeded(seed);
        use rand::Rng;
        let n = rng.gen_range(4..=9);
        let m = effdyn::fixtures::random_reversible(&mut rng, n);
        let sets = effdyn::fixtures::random_set_pair(&mut rng, n);
        let q = effdyn::committor(&m, &sets).unwrap();
        for &v in &q {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
        let (ka, kb) = effdyn::rate_flux(&m, &sets, &q);
        prop_assert!((ka - kb).abs() < 1e-12);
    }
}
