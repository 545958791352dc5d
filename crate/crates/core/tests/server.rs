use centaur::accountant::{default_alpha_grid, Adjacency, PrivacyLedger};
use centaur::linalg::gaussian_matrix;
use centaur::mechanisms::GaussianMechanismParams;
use centaur::metrics::{principal_angle_dist, OrthonormalBasis};
use centaur::ppm::spectral_oracle_init;
use centaur::server::{
    aggregate_qr, gradient_norm_quantile, run_centaur, theorem_recipe, Aggregation, ClientMode, ClientParams,
    RecipeConstants, ServerConfig,
};
use centaur::synthetic::{gen_problem, FrlProblem};
use centaur::CentaurError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn small_problem() -> FrlProblem {
    gen_problem(12, 2, 20, 20, 1.5, 5.0, 4).unwrap()
}

fn config(p_g: f64, rounds: u64, sigma: f64, parallel: bool) -> ServerConfig {
    ServerConfig {
        p_g,
        rounds,
        eta_g: 0.2,
        gm: GaussianMechanismParams::new(5.0, sigma).unwrap(),
        aggregation: Aggregation::QrRetraction,
        parallel_clients: parallel,
    }
}

const LRL: ClientParams = ClientParams {
    mbar: 10,
    mode: ClientMode::Lrl,
};

fn ledger() -> PrivacyLedger {
    PrivacyLedger::new(default_alpha_grid(), 1e-5, Adjacency::ReplaceOneUser).unwrap()
}

fn start(p: &FrlProblem) -> OrthonormalBasis {
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    spectral_oracle_init(&p.truth, 0.3, &mut rng).unwrap()
}

#[test]
fn qr_retraction_outputs_are_orthonormal() {
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    for _ in 0..1000 {
        let d = rng.random_range(2..40);
        let k = rng.random_range(1..=d.min(6));
        let b = OrthonormalBasis::random(d, k, &mut rng).unwrap();
        let g = gaussian_matrix(d, k, &mut rng) * rng.random_range(0.01..10.0);
        let eta = rng.random_range(0.0..2.0);
        let out = aggregate_qr(&b, &g, eta).unwrap();
        assert!(out.defect() <= 1e-10);
    }
}

#[test]
fn zero_rounds_return_the_start() {
    let p = small_problem();
    let b0 = start(&p);
    let mut l = ledger();
    let trace = run_centaur(&p, &config(1.0, 0, 1.0, true), &LRL, &b0, Some(&mut l), 1).unwrap();
    assert!(trace.rounds.is_empty());
    assert_eq!(&trace.final_state, b0.matrix());
    assert_eq!(l.rounds(), 0);
}

#[test]
fn trace_does_not_depend_on_the_schedule() {
    let p = small_problem();
    let b0 = start(&p);
    let mut l1 = ledger();
    let mut l2 = ledger();
    let a = run_centaur(&p, &config(0.5, 30, 0.5, true), &LRL, &b0, Some(&mut l1), 9).unwrap();
    let b = run_centaur(&p, &config(0.5, 30, 0.5, false), &LRL, &b0, Some(&mut l2), 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(l1, l2);
}

#[test]
fn every_round_is_charged_and_empty_rounds_hold_still() {
    let p = small_problem();
    let b0 = start(&p);
    let mut l = ledger();
    let trace = run_centaur(&p, &config(0.05, 60, 1.0, true), &LRL, &b0, Some(&mut l), 2).unwrap();
    assert_eq!(l.rounds(), 60);
    let empty = trace.rounds.iter().filter(|r| r.active_clients == 0).count();
    assert!(empty > 0, "expected some empty rounds at p = 0.05");
    let path = trace.dist_path();
    for (t, r) in trace.rounds.iter().enumerate() {
        assert!(r.clip_count <= r.active_clients);
        if r.active_clients == 0 {
            assert_eq!(path[t + 1], path[t]);
            assert_eq!(r.grad_norm, 0.0);
        }
    }
    let last = trace.rounds.last().unwrap().eps_dp_cum.unwrap();
    assert!((last - l.dp().epsilon).abs() <= 1e-12);
    assert!(OrthonormalBasis::new(trace.final_state.clone()).unwrap().defect() <= 1e-10);
}

#[test]
fn nobody_sampled_still_spends() {
    let p = small_problem();
    let b0 = start(&p);
    let mut l = ledger();
    let trace = run_centaur(&p, &config(0.0, 5, 1.0, true), &LRL, &b0, Some(&mut l), 2).unwrap();
    assert_eq!(l.rounds(), 5);
    assert_eq!(&trace.final_state, b0.matrix());
    assert!(trace.rounds.iter().all(|r| r.active_clients == 0));
}

#[test]
fn ledger_must_match_privacy() {
    let p = small_problem();
    let b0 = start(&p);
    let noisy = config(1.0, 1, 1.0, true);
    assert!(matches!(run_centaur(&p, &noisy, &LRL, &b0, None, 0), Err(CentaurError::Parameter(_))));
    let mut quiet = noisy;
    quiet.gm = GaussianMechanismParams::non_private();
    let mut l = ledger();
    assert!(run_centaur(&p, &quiet, &LRL, &b0, Some(&mut l), 0).is_err());
}

#[test]
fn noiseless_run_contracts_every_round() {
    let p = gen_problem(20, 2, 60, 60, 1.5, 5.0, 8).unwrap();
    let eta = theorem_recipe(&p.truth, 0.0, &RecipeConstants::default()).unwrap().eta_g;
    let server = ServerConfig {
        p_g: 1.0,
        rounds: 100,
        eta_g: eta,
        gm: GaussianMechanismParams::non_private(),
        aggregation: Aggregation::QrRetraction,
        parallel_clients: true,
    };
    let b0 = start(&p);
    let trace = run_centaur(&p, &server, &ClientParams { mbar: 30, mode: ClientMode::Lrl }, &b0, None, 3).unwrap();
    for w in trace.dist_path().windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
    assert!(trace.final_dist < 1e-3);
    let b = OrthonormalBasis::new(trace.final_state.clone()).unwrap();
    assert_eq!(principal_angle_dist(&b, &p.truth.b_star).unwrap(), trace.final_dist);
}

#[test]
fn recipe_is_linear_in_c_zeta_and_step_ignores_constants() {
    let p = small_problem();
    let one = theorem_recipe(&p.truth, 1.0, &RecipeConstants { c_zeta: 1.0, c_t: 1.0 }).unwrap();
    let two = theorem_recipe(&p.truth, 1.0, &RecipeConstants { c_zeta: 2.0, c_t: 3.0 }).unwrap();
    assert_eq!(two.zeta_g, 2.0 * one.zeta_g);
    assert_eq!(one.eta_g, two.eta_g);
    assert_eq!(one.eta_g, 1.0 / (4.0 * p.truth.s_1().powi(2)));
    assert!(theorem_recipe(&p.truth, 0.0, &RecipeConstants::default()).unwrap().rounds.is_none());
}

#[test]
fn quantile_threshold_at_truth_is_recorded() {
    let p = gen_problem(50, 3, 200, 100, 2.0, 3.5, 1).unwrap();
    let formula = theorem_recipe(&p.truth, 0.0, &RecipeConstants::default()).unwrap().zeta_g;
    let q = gradient_norm_quantile(&p, &p.truth.b_star, 50, 5, 0.999, 1).unwrap();
    println!("q999 gradient norm at B* = {q:e}, formula with c_zeta = 1: {formula:e}, ratio {:e}", q / formula);
    assert!(q.is_finite() && q >= 0.0);
}
