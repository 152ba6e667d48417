use gibbsdiff::gibbs::{self, FiniteSpace, JointSpace};
use gibbsdiff::linalg;
use gibbsdiff::rng::{PathStream, Purpose};
use gibbsdiff::sde;
use gibbsdiff::stats;
use gibbsdiff::{DiffusionModel, InitialLaw, PathEnsemble, ScalarField, TimeGrid};
use proptest::prelude::*;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn free_energy_is_bounded_by_equilibrium(
        p in simplex(5),
        q in simplex(5),
        h in prop::collection::vec(-5.0f64..5.0, 5),
    ) {
        let space = FiniteSpace::unlabelled(p, h).unwrap();
        let i = gibbs::equilibrium_free_energy(&space).unwrap();
        let f = gibbs::free_energy(&q, &space).unwrap();
        prop_assert!(f >= i - 1e-12);
        let star = gibbs::gibbs_minimizer(&space).unwrap();
        let f_star = gibbs::free_energy(&star, &space).unwrap();
        prop_assert!((f_star - i).abs() < 1e-12);
        // the gap is the divergence from the minimizer
        let gap = gibbs::relative_entropy(&q, &star).unwrap();
        prop_assert!((f - i - gap).abs() < 1e-10);
    }

    #[test]
    fn relative_entropy_is_nonnegative(p in simplex(6), q in simplex(6)) {
        prop_assert!(gibbs::relative_entropy(&p, &q).unwrap() >= -1e-15);
        prop_assert!(gibbs::relative_entropy(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn decomposition_recombines(
        reference in simplex(6),
        p_tilde in simplex(6),
        energy in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        let joint = JointSpace { rows: 2, cols: 3, reference, energy };
        let d = gibbs::decompose_free_energy(&p_tilde, &joint).unwrap();
        prop_assert!((d.recombined - d.direct).abs() < 1e-10);
        prop_assert!((d.mixture_minimum - d.equilibrium).abs() < 1e-10);
    }

    #[test]
    fn tridiagonal_solutions_satisfy_the_system(
        n in 2usize..40,
        seed in any::<u64>(),
    ) {
        let mut s = PathStream::new(seed, 0, Purpose::Auxiliary);
        let lower: Vec<f64> = (0..n).map(|_| s.uniform() - 0.5).collect();
        let upper: Vec<f64> = (0..n).map(|_| s.uniform() - 0.5).collect();
        let diag: Vec<f64> = (0..n).map(|_| 1.5 + s.uniform()).collect();
        let rhs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let x = linalg::solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for i in 0..n {
            let mut r = diag[i] * x[i] - rhs[i];
            if i > 0 { r += lower[i] * x[i - 1]; }
            if i + 1 < n { r += upper[i] * x[i + 1]; }
            prop_assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn systematic_resampling_respects_weights(
        w in prop::collection::vec(0.0f64..1.0, 1..20),
        u0 in 0.0f64..1.0,
    ) {
        prop_assume!(w.iter().sum::<f64>() > 1e-6);
        let n = 1000;
        let idx = stats::systematic_resample(&w, n, u0);
        prop_assert_eq!(idx.len(), n);
        let total: f64 = w.iter().sum();
        for (i, wi) in w.iter().enumerate() {
            let count = idx.iter().filter(|&&k| k == i).count() as f64;
            prop_assert!((count - n as f64 * wi / total).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn ensemble_binary_round_trip(n_paths in 1usize..6, steps in 1usize..8, seed in any::<u64>()) {
        let m = DiffusionModel::brownian(2, 0.7);
        let g = TimeGrid::new(0.0, 0.5, steps).unwrap();
        let e = sde::simulate_reference(&m, &g, &InitialLaw::Point(vec![0.1, -0.2]), n_paths, seed).unwrap();
        let lw: Vec<f64> = (0..n_paths).map(|i| -(i as f64) * 0.3).collect();
        let e = e.with_log_weights(lw).unwrap();
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        let back = PathEnsemble::read_binary(&buf[..]).unwrap();
        prop_assert_eq!(back, e);
    }

    #[test]
    fn field_binary_round_trip(n in 2usize..12, steps in 1usize..5, shift in -3.0f64..3.0) {
        let grid = gibbsdiff::FieldGrid::uniform_1d(-1.0, 1.0, n, 1.0, steps).unwrap();
        let f = ScalarField::from_fn(grid, |x, t| x[0] * shift + t).unwrap();
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        prop_assert_eq!(ScalarField::read_binary(&buf[..]).unwrap(), f);
    }

    #[test]
    fn paths_do_not_depend_on_ensemble_size(extra in 1usize..5, seed in any::<u64>()) {
        let m = DiffusionModel::ornstein_uhlenbeck(1.0, 0.5);
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std_dev: vec![1.0] };
        let small = sde::simulate_reference(&m, &g, &init, 3, seed).unwrap();
        let big = sde::simulate_reference(&m, &g, &init, 3 + extra, seed).unwrap();
        prop_assert_eq!(&small.paths[..], &big.paths[..3]);
    }
}
