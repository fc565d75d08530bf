use std::sync::OnceLock;

use nalgebra::DMatrix;
use proptest::prelude::*;
use propchaos::boltzmann::{kac_model, uniform_clock_simulate, CollisionRun};
use propchaos::chaos::fournier_guillin_beta;
use propchaos::jumps::{choose_leader_model, pdmp_simulate, JumpRun, LeaderKernel};
use propchaos::mckean::{
    kuramoto_model, nonlinear_reference, simulate_particles, synchronous_coupling, wrapped_normal_init, DiffusionRun,
    ReferenceConfig, SyncConfig,
};
use propchaos::metrics::lipschitz::{d1_dist, LipschitzFamily};
use propchaos::metrics::sobolev::{hs_sq, SobolevKernel};
use propchaos::metrics::wasserstein::{w1_exact_1d, wp_assignment};
use propchaos::oracle::{build_generator, check_csiszar, check_grunbaum, exact_evolve, random_symmetric, FiniteModel};
use propchaos::stats::fit_loglog;
use propchaos::{Domain, Empirical, ParticleState, RngStream};

fn atoms(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..10).prop_flat_map(|n| (atoms(n), atoms(n), atoms(n)))
}

fn measure(xs: &[f64]) -> Empirical {
    Empirical::from_scalars(xs.to_vec()).unwrap()
}

fn family() -> &'static LipschitzFamily {
    static F: OnceLock<LipschitzFamily> = OnceLock::new();
    F.get_or_init(|| LipschitzFamily::dyadic(1, -3.0, 3.0, 5).unwrap())
}

fn kernel(d: usize) -> &'static SobolevKernel {
    static K: [OnceLock<SobolevKernel>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    K[d - 1].get_or_init(|| SobolevKernel::new(d, d as f64 / 2.0 + 0.5).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn w1_is_a_metric((a, b, c) in triple()) {
        let (a, b, c) = (measure(&a), measure(&b), measure(&c));
        let ab = w1_exact_1d(&a, &b).unwrap();
        prop_assert!((ab - w1_exact_1d(&b, &a).unwrap()).abs() <= 1e-10);
        prop_assert!(w1_exact_1d(&a, &a).unwrap().abs() <= 1e-10);
        prop_assert!(ab <= w1_exact_1d(&a, &c).unwrap() + w1_exact_1d(&c, &b).unwrap() + 1e-10);
    }

    #[test]
    fn wp_assignment_is_a_metric((a, b, c) in triple(), p in 1u32..3) {
        let (a, b, c) = (measure(&a), measure(&b), measure(&c));
        let ab = wp_assignment(&a, &b, p).unwrap();
        prop_assert!((ab - wp_assignment(&b, &a, p).unwrap()).abs() <= 1e-10);
        prop_assert!(wp_assignment(&a, &a, p).unwrap().abs() <= 1e-10);
        prop_assert!(ab <= wp_assignment(&a, &c, p).unwrap() + wp_assignment(&c, &b, p).unwrap() + 1e-10);
    }

    #[test]
    fn d1_is_a_pseudometric((a, b, c) in triple()) {
        let (a, b, c) = (measure(&a), measure(&b), measure(&c));
        let f = family();
        let ab = d1_dist(&a, &b, f).unwrap();
        prop_assert!((ab - d1_dist(&b, &a, f).unwrap()).abs() <= 1e-10);
        prop_assert!(ab <= d1_dist(&a, &c, f).unwrap() + d1_dist(&c, &b, f).unwrap() + 1e-10);
    }

    #[test]
    fn distances_are_ordered((a, b, _c) in triple()) {
        let (a, b) = (measure(&a), measure(&b));
        let w1 = w1_exact_1d(&a, &b).unwrap();
        prop_assert!(w1 <= wp_assignment(&a, &b, 2).unwrap() + 1e-10);
        prop_assert!(d1_dist(&a, &b, family()).unwrap() <= w1 + family().truncation_tail() + 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hs_sq_is_nonnegative(d in 1usize..4, n in 1usize..8, seed in any::<u64>()) {
        let mut g = RngStream::new(seed).rng();
        let mut draw = |k: usize| -> Empirical {
            Empirical::new(d, (0..k * d).map(|_| 2.0 * g.normal::<f64>()).collect()).unwrap()
        };
        let (mu, nu) = (draw(n), draw(n + 1));
        prop_assert!(hs_sq(&mu, &nu, kernel(d)).unwrap() >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sobolev_gram_matrices_are_psd(d in 1usize..4, n in 2usize..24, seed in any::<u64>()) {
        let k = kernel(d);
        let mut g = RngStream::new(seed).rng();
        let xs: Vec<f64> = (0..n * d).map(|_| 3.0 * g.normal::<f64>()).collect();
        let gram = DMatrix::from_fn(n, n, |i, j| k.between(&xs[i * d..(i + 1) * d], &xs[j * d..(j + 1) * d]));
        let min = gram.clone().symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-8 * gram.trace(), "min eigenvalue {min}");
    }

    #[test]
    fn uniformization_keeps_mass_and_sign(n in 2usize..5, t in 0.0f64..4.0, seed in any::<u64>()) {
        let mut g = RngStream::new(seed).rng();
        let f0 = random_symmetric(3, n, &mut g).unwrap();
        for model in [FiniteModel::kac_like(3, n).unwrap(), FiniteModel::choose_leader(vec![0.5, 0.5, 0.0, 0.1, 0.8, 0.1, 0.0, 0.3, 0.7], n).unwrap()] {
            let f = exact_evolve(&build_generator(&model).unwrap(), &f0, t).unwrap();
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(f.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn exchangeable_law_bounds_hold(n in 3usize..6, k in 2usize..4, seed in any::<u64>()) {
        let mut g = RngStream::new(seed).rng();
        let f_n = random_symmetric(3, n, &mut g).unwrap();
        prop_assert!(check_grunbaum(&f_n, 3, n, k).unwrap().pass);
        let w: Vec<f64> = (0..3).map(|_| g.exponential(1.0)).collect();
        let f: Vec<f64> = w.iter().map(|x| x / w.iter().sum::<f64>()).collect();
        for k in 1..=n.min(3) {
            prop_assert!(check_csiszar(&f_n, &f, 3, n, k).unwrap().pass);
        }
    }

    #[test]
    fn slope_fit_ignores_replica_order(seed in any::<u64>(), shift in 1usize..7) {
        let mut g = RngStream::new(seed).rng();
        let ns = [16.0, 64.0, 256.0];
        let samples: Vec<Vec<f64>> = ns.iter().map(|n| (0..7).map(|_| g.exponential(*n)).collect()).collect();
        let rotated: Vec<Vec<f64>> = samples.iter().map(|s| {
            let mut r = s.clone();
            r.rotate_left(shift);
            r.reverse();
            r
        }).collect();
        let a = fit_loglog(&ns, &samples, &mut RngStream::new(1).rng()).unwrap();
        let b = fit_loglog(&ns, &rotated, &mut RngStream::new(2).rng()).unwrap();
        prop_assert!((a.slope - b.slope).abs() <= 1e-12);
        prop_assert!((a.intercept - b.intercept).abs() <= 1e-12);
    }

    #[test]
    fn beta_is_positive_and_nonincreasing(d in 1usize..5, p in 0.5f64..3.0, dq in 0.1f64..4.0, n in 1usize..5000) {
        let q = p + dq;
        match (fournier_guillin_beta(n, d, p, q), fournier_guillin_beta(n + 1, d, p, q)) {
            (Ok(a), Ok(b)) => {
                prop_assert!(a > 0.0 && a.is_finite());
                prop_assert!(b <= a);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "exclusion must not depend on N"),
        }
    }
}

fn permutation() -> impl Strategy<Value = Vec<usize>> {
    Just((0..8).collect::<Vec<usize>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pointwise_never_exceeds_pathwise(seed in any::<u64>(), sigma in 0.1f64..1.5) {
        let model = kuramoto_model(1.0, sigma).unwrap();
        let run = DiffusionRun::new(0.2, 0.01, 5);
        let root = RngStream::new(seed);
        let init = wrapped_normal_init(0.0, 1.0);
        let reference = nonlinear_reference(&model, init, 32, &run, &ReferenceConfig::default(), &root.split(1)).unwrap();
        let config = SyncConfig { replicas: 6, p: 2.0 };
        let rep = synchronous_coupling(&model, 4, &reference, &run, init, &config, &root.split(2)).unwrap();
        prop_assert!(rep.pointwise_eps <= rep.pathwise_eps);
    }

    #[test]
    fn simulators_are_exchangeable(perm in permutation(), seed in any::<u64>()) {
        let labels: Vec<u64> = (0..8).map(|k| 3 * k + 1).collect();
        let labels_p: Vec<u64> = perm.iter().map(|&k| labels[k]).collect();
        let rng = RngStream::new(seed);
        let xs: Vec<f64> = (0..8).map(|k| 0.7 * k as f64).collect();

        let torus = ParticleState::new(0.0, 1, Domain::Torus, xs.clone()).unwrap();
        let model = kuramoto_model(1.0, 0.5).unwrap();
        let run = DiffusionRun::new(0.2, 0.02, 5);
        let a = simulate_particles(&model, &torus, &run, &rng, Some(&labels)).unwrap();
        let b = simulate_particles(&model, &torus.permuted(&perm), &run, &rng, Some(&labels_p)).unwrap();
        prop_assert_eq!(a.permuted(&perm).states, b.states);

        let line = ParticleState::from_scalars(0.0, xs).unwrap();
        let kac = kac_model(1.0);
        let run = CollisionRun::new(1.0, 4).without_log();
        let a = uniform_clock_simulate(&kac, &line, &run, &rng, Some(&labels)).unwrap();
        let b = uniform_clock_simulate(&kac, &line.permuted(&perm), &run, &rng, Some(&labels_p)).unwrap();
        prop_assert_eq!(a.bundle.permuted(&perm).states, b.bundle.states);

        let cells = ParticleState::from_scalars(0.0, (0..8).map(|k| (k % 3) as f64).collect()).unwrap();
        let leader = choose_leader_model(LeaderKernel::Finite { m: 3, rows: vec![0.6, 0.3, 0.1, 0.2, 0.6, 0.2, 0.1, 0.3, 0.6] }).unwrap();
        let run = JumpRun::new(1.0, 4).without_log();
        let a = pdmp_simulate(&leader, &cells, &run, &rng, Some(&labels)).unwrap();
        let b = pdmp_simulate(&leader, &cells.permuted(&perm), &run, &rng, Some(&labels_p)).unwrap();
        prop_assert_eq!(a.bundle.permuted(&perm).states, b.bundle.states);
    }
}
