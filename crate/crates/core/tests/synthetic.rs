use centaur::client::sample_subset;
use centaur::linalg::gaussian_matrix;
use centaur::metrics::OrthonormalBasis;
use centaur::stream::{derive_stream, Domain};
use centaur::synthetic::{gen_client_data, gen_ground_truth, gen_problem, response, FrlProblem};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
fn empirical_isometry_holds_on_most_batches() {
    let (d, k, n, m, mbar) = (50, 3, 200, 100, 50);
    let problem = gen_problem(d, k, n, m, 2.0, 5.0, 11).unwrap();
    let band = 5.0 * ((k as f64) * (n as f64).ln() / mbar as f64).sqrt();
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let mut inside = 0;
    for _ in 0..100 {
        let b = OrthonormalBasis::random(d, k, &mut rng).unwrap();
        let mut v = gaussian_matrix(n, k, &mut rng);
        v /= v.norm();
        let mut total = 0.0;
        for (i, data) in problem.clients.iter().enumerate() {
            let vi = v.row(i).transpose();
            for j in sample_subset(m, mbar, &mut rng).unwrap() {
                let z = b.matrix().tr_mul(&data.inputs.column(j));
                total += n as f64 * z.dot(&vi).powi(2);
            }
        }
        let value = total / (mbar * n) as f64;
        if (value - 1.0).abs() <= band {
            inside += 1;
        }
    }
    assert!(inside >= 95, "{inside}/100 batches inside the band");
}

#[test]
fn input_covariance_concentrates() {
    let (d, m) = (20usize, 10_000usize);
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let truth = gen_ground_truth(d, 2, 10, 1.0, 5.0, &mut rng).unwrap();
    let data = gen_client_data(&truth, 0, m, &mut rng).unwrap();
    let cov = &data.inputs * data.inputs.transpose() / m as f64;
    let dev = (cov - DMatrix::<f64>::identity(d, d)).symmetric_eigenvalues().amax();
    assert!(dev <= 5.0 * (d as f64 / m as f64).sqrt(), "deviation {dev}");
}

#[test]
fn declared_spectrum_matches_eigen_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let truth = gen_ground_truth(20, 3, 50, 2.0, 5.0, &mut rng).unwrap();
    let gram = truth.w_star.transpose() * &truth.w_star / 50.0;
    let mut s: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|e| e.sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    for (got, want) in s.iter().zip([2.0, 2f64.sqrt(), 1.0]) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
    for (got, want) in truth.singular_values.iter().zip(&s) {
        assert!((got - want).abs() < 1e-9);
    }
    assert!(truth.b_star.defect() <= 1e-12);
}

#[test]
fn different_seeds_give_different_factors() {
    for s in 0..100u64 {
        let a = gen_problem(10, 2, 20, 2, 1.5, 5.0, 2 * s).unwrap();
        let b = gen_problem(10, 2, 20, 2, 1.5, 5.0, 2 * s + 1).unwrap();
        assert!((a.truth.b_star.matrix() - b.truth.b_star.matrix()).norm() > 1e-3);
    }
}

#[test]
fn problem_survives_json_round_trip() {
    let p = gen_problem(7, 2, 5, 4, 1.5, 5.0, 9).unwrap();
    let text = p.to_json().unwrap();
    let q = FrlProblem::from_json(&text).unwrap();
    assert_eq!(p, q);
    assert_eq!(q.to_json().unwrap(), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn truths_satisfy_incoherence_and_rank(seed in any::<u64>(), k in 1usize..4, kappa in 1.0f64..3.0) {
        let kappa = if k == 1 { 1.0 } else { kappa };
        let mut rng = derive_stream(seed, Domain::DataGen, 0, 0);
        let mu = 5.0;
        let truth = gen_ground_truth(15, k, 40, kappa, mu, &mut rng).unwrap();
        let bound = mu * (k as f64).sqrt() * truth.s_k();
        for i in 0..truth.n() {
            prop_assert!(truth.head(i).norm() <= bound * (1.0 + 1e-12));
        }
        prop_assert!(truth.s_k() / truth.s_1() >= 1.0 / (2.0 * kappa));
        prop_assert!((truth.kappa - truth.s_1() / truth.s_k()).abs() < 1e-9);
        prop_assert!(truth.b_star.defect() <= 1e-12);
    }

    #[test]
    fn responses_are_exactly_consistent(seed in any::<u64>()) {
        let p = gen_problem(6, 2, 4, 5, 1.5, 5.0, seed).unwrap();
        for (i, data) in p.clients.iter().enumerate() {
            for j in 0..data.len() {
                let x: Vec<f64> = data.inputs.column(j).iter().copied().collect();
                prop_assert_eq!(data.responses[j], response(&p.truth, i, &x));
            }
        }
    }
}
