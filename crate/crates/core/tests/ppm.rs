use centaur::accountant::{default_alpha_grid, init_rdp_curve, Adjacency, PrivacyLedger};
use centaur::client::sample_subset;
use centaur::linalg::gaussian_matrix;
use centaur::mechanisms::GaussianMechanismParams;
use centaur::metrics::{principal_angle_dist, OrthonormalBasis};
use centaur::ppm::{
    cross_validate_select, initialize, local_second_moment, power_iterations_recipe, ppm_trial,
    spectral_oracle_init, target_matrix, MomentSource, PpmConfig,
};
use centaur::stream::{derive_stream, Domain};
use centaur::synthetic::{gen_client_data, gen_ground_truth, gen_problem, Dims, FrlProblem, GroundTruth};
use centaur::CentaurError;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn quiet(power_iterations: usize, mbar0: usize, trials: usize, moments: MomentSource) -> PpmConfig {
    PpmConfig {
        power_iterations,
        gm: GaussianMechanismParams::non_private(),
        mbar0,
        trials,
        eps_i: 0.01,
        eps_0: 0.2,
        moments,
    }
}

/// `d = 2`, `k = 1`, `B* = e_1`, unit heads: `A = diag(3, 1)`.
fn planar_problem() -> FrlProblem {
    let n = 4;
    let truth = GroundTruth {
        b_star: OrthonormalBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap(),
        w_star: DMatrix::from_element(n, 1, 1.0),
        singular_values: vec![1.0],
        kappa: 1.0,
        mu: 1.0,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let clients = (0..n).map(|i| gen_client_data(&truth, i, 4, &mut rng).unwrap()).collect();
    FrlProblem {
        truth,
        clients,
        dims: Dims { d: 2, k: 1, n, m: 4 },
    }
}

#[test]
fn exact_moments_converge_on_the_planar_case() {
    let p = planar_problem();
    assert_eq!(target_matrix(&p.truth), DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]));
    for seed in 0..50 {
        let mut s = derive_stream(seed, Domain::InitTrial, 0, 0);
        let x = ppm_trial(&p, &quiet(40, 1, 1, MomentSource::Exact), &mut s).unwrap();
        assert!(principal_angle_dist(&x, &p.truth.b_star).unwrap() <= 1e-8);
        assert!(x.defect() <= 1e-10);
    }
}

#[test]
fn target_eigenspace_is_the_truth() {
    for (d, k, seed) in [(5, 2, 1u64), (30, 3, 2), (100, 4, 3)] {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let truth = gen_ground_truth(d, k, 60, 2.0, 6.0, &mut rng).unwrap();
        let eig = SymmetricEigen::new(target_matrix(&truth));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = DMatrix::from_columns(&order[..k].iter().map(|&j| eig.eigenvectors.column(j)).collect::<Vec<_>>());
        let basis = OrthonormalBasis::new(top).unwrap();
        assert!(principal_angle_dist(&basis, &truth.b_star).unwrap() <= 1e-10);
    }
}

#[test]
fn moment_matches_dense_product() {
    let p = gen_problem(7, 2, 3, 12, 1.5, 5.0, 5).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    for data in &p.clients {
        let idx = sample_subset(12, 8, &mut rng).unwrap();
        let x = gaussian_matrix(7, 2, &mut rng);
        let mut m = DMatrix::zeros(7, 7);
        for &j in &idx {
            let col = data.inputs.column(j);
            m += col * col.transpose() * data.responses[j].powi(2);
        }
        m /= idx.len() as f64;
        let got = local_second_moment(data, &idx, &x).unwrap();
        assert!((got - m * x).amax() <= 1e-10);
    }
}

fn tilted(truth_basis: &OrthonormalBasis, eps: f64, rng: &mut ChaCha12Rng) -> OrthonormalBasis {
    let (d, k) = truth_basis.dims();
    let mut noise = gaussian_matrix(d, k, rng);
    let b = truth_basis.matrix();
    noise -= b * b.tr_mul(&noise);
    noise *= eps / noise.norm();
    OrthonormalBasis::from_qr(&(b + noise)).unwrap()
}

#[test]
fn majority_of_good_candidates_wins() {
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let b_star = OrthonormalBasis::random(200, 3, &mut rng).unwrap();
    for _ in 0..200 {
        let mut pool: Vec<(bool, OrthonormalBasis)> = Vec::new();
        for _ in 0..7 {
            pool.push((true, tilted(&b_star, 0.004, &mut rng)));
        }
        for _ in 0..3 {
            pool.push((false, OrthonormalBasis::random(200, 3, &mut rng).unwrap()));
        }
        pool.shuffle(&mut rng);
        let candidates: Vec<OrthonormalBasis> = pool.iter().map(|c| c.1.clone()).collect();
        let idx = cross_validate_select(&candidates, 0.01).unwrap();
        assert!(pool[idx].0);
        assert!(principal_angle_dist(&candidates[idx], &b_star).unwrap() <= 0.2);
    }
}

#[test]
fn identical_candidates_select_the_first() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let b = OrthonormalBasis::random(10, 2, &mut rng).unwrap();
    assert_eq!(cross_validate_select(&vec![b; 4], 0.01).unwrap(), 0);
}

#[test]
fn orthogonal_pools_have_no_majority() {
    let q = OrthonormalBasis::random(12, 12, &mut ChaCha12Rng::seed_from_u64(2)).unwrap();
    let pool: Vec<OrthonormalBasis> = (0..4)
        .map(|c| OrthonormalBasis::new(q.matrix().columns(3 * c, 3).into_owned()).unwrap())
        .collect();
    assert!(matches!(cross_validate_select(&pool, 0.01), Err(CentaurError::Selection(_))));
}

#[test]
fn voting_beats_a_single_trial() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let b_star = OrthonormalBasis::random(50, 3, &mut rng).unwrap();
    let (runs, t0, p_good) = (1000, 5, 0.9);
    let (mut single_fail, mut voted_fail) = (0, 0);
    for _ in 0..runs {
        let candidates: Vec<OrthonormalBasis> = (0..t0)
            .map(|_| {
                if rand::Rng::random_bool(&mut rng, p_good) {
                    tilted(&b_star, 0.005, &mut rng)
                } else {
                    OrthonormalBasis::random(50, 3, &mut rng).unwrap()
                }
            })
            .collect();
        if principal_angle_dist(&candidates[0], &b_star).unwrap() > 0.01 {
            single_fail += 1;
        }
        match cross_validate_select(&candidates, 0.01) {
            Ok(i) if principal_angle_dist(&candidates[i], &b_star).unwrap() <= 0.2 => {}
            _ => voted_fail += 1,
        }
    }
    assert!(voted_fail < single_fail, "voted {voted_fail} vs single {single_fail}");
}

/// Sample-rich regime where a single noiseless trial reliably lands near `B*`.
fn rich_problem(seed: u64) -> FrlProblem {
    gen_problem(6, 2, 200, 100, 1.0, 4.0, seed).unwrap()
}

#[test]
fn noiseless_initializer_lands_near_the_truth() {
    let mut failures = 0;
    for run in 0..1000u64 {
        let p = rich_problem(run);
        let l = power_iterations_recipe(&p.truth, 0.01, 1.0).unwrap();
        let cfg = quiet(l, 100, 3, MomentSource::Sampled);
        match initialize(&p, &cfg, run, None) {
            Ok(out) if principal_angle_dist(&out.basis, &p.truth.b_star).unwrap() <= 0.2 => {}
            _ => failures += 1,
        }
    }
    assert!(failures <= 1, "{failures} failures in 1000 runs");
}

#[test]
fn private_initializer_charges_its_curve_exactly() {
    let p = rich_problem(1);
    let cfg = PpmConfig {
        gm: GaussianMechanismParams::new(50.0, 2.0).unwrap(),
        ..quiet(5, 20, 3, MomentSource::Sampled)
    };
    let mut ledger = PrivacyLedger::new(default_alpha_grid(), 1e-5, Adjacency::ReplaceOneUser).unwrap();
    let out = initialize(&p, &cfg, 4, Some(&mut ledger));
    let expected = init_rdp_curve(default_alpha_grid(), 3, 5, 2.0, Adjacency::ReplaceOneUser).unwrap();
    assert_eq!(ledger.init_curve(), &expected);
    if let Ok(out) = out {
        assert_eq!(out.charged.as_ref(), Some(&expected));
    }
    assert!(initialize(&p, &cfg, 4, None).is_err());
}

#[test]
fn single_trial_selects_itself() {
    let p = rich_problem(2);
    let out = initialize(&p, &quiet(10, 50, 1, MomentSource::Sampled), 0, None).unwrap();
    assert_eq!(out.selected, 0);
    assert_eq!(out.candidates.len(), 1);
    assert!(out.basis.defect() <= 1e-10);
}

#[test]
fn oracle_start_sits_at_the_requested_distance() {
    let p = gen_problem(50, 3, 20, 4, 2.0, 6.0, 3).unwrap();
    for seed in 0..100 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let b = spectral_oracle_init(&p.truth, 0.2, &mut rng).unwrap();
        assert!((principal_angle_dist(&b, &p.truth.b_star).unwrap() - 0.2).abs() <= 1e-10);
        assert!(b.defect() <= 1e-10);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let exact = spectral_oracle_init(&p.truth, 0.0, &mut rng).unwrap();
    assert!(principal_angle_dist(&exact, &p.truth.b_star).unwrap() <= 1e-15);
}
