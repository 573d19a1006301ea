use super::*;
use crate::relaxation::solve_relaxation;
use crate::sampler::measure_from_fractional;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(lambda: f64) -> DesignInstance {
    DesignInstance::new(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]), 2, lambda).unwrap()
}

fn ratio(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

#[test]
fn toy_distribution_exact() {
    let inst = toy(1.0);
    let m = HardCoreMeasure::uniform(3, Mode::Exact);
    let params = GenRatioParams::a_optimal(1);
    let exact = enumerate_mu_prime_exact(&m, &inst, params).unwrap();
    let probs = exact.exact.as_ref().unwrap();
    assert_eq!(probs, &vec![ratio(6, 31), ratio(11, 31), ratio(14, 31)]);
    let float = enumerate_mu_prime(&m, &inst, params).unwrap();
    assert!((float.probability(&[1, 2]) - 14.0 / 31.0).abs() < 1e-15);
}

#[test]
fn exact_and_float_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..6 {
        let (n, d) = (7, 1 + trial % 3);
        let v = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
        let inst = DesignInstance::new(v, 4, [0.0, 0.5, 2.0][trial % 3]).unwrap();
        let mode = if trial % 2 == 0 { Mode::Exact } else { Mode::AtMost };
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let m = HardCoreMeasure::with_weights(z, mode).unwrap();
        let params = GenRatioParams::a_optimal(d);
        let a = enumerate_mu_prime_exact(&m, &inst, params).unwrap();
        let b = enumerate_mu_prime(&m, &inst, params).unwrap();
        for (s, p) in &a.support {
            assert!((p - b.probability(s)).abs() < 1e-9);
        }
        let total: BigRational = a.exact.unwrap().into_iter().sum();
        assert!(total.is_one());
    }
}

#[test]
fn identical_vectors_give_uniform() {
    let inst = DesignInstance::new(DMatrix::from_element(1, 5, 0.7), 3, 0.0).unwrap();
    let m = HardCoreMeasure::uniform(5, Mode::Exact);
    let dist = enumerate_mu_prime(&m, &inst, GenRatioParams::a_optimal(1)).unwrap();
    assert_eq!(dist.support.len(), 10);
    assert!(dist.support.iter().all(|(_, p)| (p - 0.1).abs() < 1e-15));
}

#[test]
fn budget_guard() {
    let inst = DesignInstance::new(DMatrix::from_element(1, 40, 1.0), 20, 1.0).unwrap();
    let err = brute_force_opt(&inst, GenRatioParams::a_optimal(1)).unwrap_err();
    assert!(matches!(err, DesignError::TooLarge { .. }));
}

#[test]
fn brute_force_examples() {
    let best = brute_force_opt(&toy(0.0), GenRatioParams::a_optimal(1)).unwrap();
    assert_eq!(best.indices, vec![1, 2]);
    assert!((best.objective - 1.0 / 13.0).abs() < 1e-15);

    let same = DesignInstance::new(DMatrix::from_element(2, 5, 1.0), 2, 0.5).unwrap();
    let best = brute_force_opt(&same, GenRatioParams::a_optimal(2)).unwrap();
    assert_eq!(best.indices, vec![0, 1]);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let v = DMatrix::from_fn(3, 8, |_, _| rng.random_range(-1.0..1.0));
        let inst = DesignInstance::new(v, 4, 0.0).unwrap();
        let p = GenRatioParams::a_optimal(3);
        let at0 = brute_force_opt(&inst, p).unwrap().objective;
        let at1 = brute_force_opt(&inst.with_lambda(1.0).unwrap(), p).unwrap().objective;
        assert!(at1 <= at0);
    }
}

#[test]
fn table_marginals_match_enumeration() {
    let z = [0.3, 1.2, 0.8, 2.0, 0.5, 1.0];
    for mode in [Mode::Exact, Mode::AtMost] {
        let dist = enumerate_hard_core(&z, 3, mode).unwrap();
        let table = HardCoreMarginals::new(z.to_vec(), 3, mode);
        for t in [vec![], vec![1], vec![0, 4], vec![2, 3, 5]] {
            let a = dist.joint_inclusion(&t).unwrap();
            let b = table.joint_inclusion(&t).unwrap();
            assert!((a - b).abs() < 1e-12, "{t:?}: {a} vs {b}");
        }
    }
}

#[test]
fn certificate_gating_and_identity_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = DMatrix::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
    let inst = DesignInstance::new(v, 6, 0.0).unwrap();
    let sol = solve_relaxation(&inst, 1e-10, 10_000).unwrap();
    let m = measure_from_fractional(&sol.x, 1.0, &inst, Mode::AtMost).unwrap();
    assert_eq!(m.beta, 1.25);
    let mu = enumerate_hard_core(&m.z, 6, Mode::AtMost).unwrap();
    let cert = certify_near_pairwise(&mu, m.x.as_ref().unwrap(), m.beta, 2).unwrap();
    assert!(cert.c_measured >= 1.0);
    assert_eq!(cert.c_lemma, None);
    assert!(!cert.valid);
}

#[test]
fn lemma_constant_bounds_uniform_point() {
    let (n, k) = (30, 25);
    let x = vec![k as f64 / n as f64; n];
    let beta = 1.25;
    let z: Vec<f64> = x.iter().map(|&xi| xi / (beta - xi)).collect();
    let mu = HardCoreMarginals::new(z, k, Mode::AtMost);
    let cert = certify_near_pairwise(&mu, &x, beta, 1).unwrap();
    let bound = lemma_constant(beta, k, 1).unwrap();
    assert_eq!(cert.c_lemma, Some(bound));
    assert!(cert.c_measured <= bound, "{} > {bound}", cert.c_measured);
    assert!(cert.valid);
}

#[test]
fn reduction_bound_holds_with_measured_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..8 {
        let (n, d, k) = (8, 1 + trial % 2, 4);
        let v = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
        let inst = DesignInstance::new(v, k, [0.0, 0.5, 2.0][trial % 3]).unwrap();
        let sol = solve_relaxation(&inst, 1e-10, 10_000).unwrap();
        let mode = if trial % 2 == 0 { Mode::AtMost } else { Mode::Exact };
        let m = measure_from_fractional(&sol.x, 1.0, &inst, mode).unwrap();
        let mu = enumerate_hard_core(&m.z, k, mode).unwrap();
        let cert = certify_near_pairwise(&mu, m.x.as_ref().unwrap(), m.beta, d).unwrap();
        let report = check_theorem_43(&m, &inst, cert.c_measured, m.beta).unwrap();
        assert!(report.holds, "trial {trial}: {report:?}");
    }
}

#[test]
fn reduction_bound_tight_on_single_support() {
    let v = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, 0.2, 1.0, 0.7]);
    let inst = DesignInstance::new(v, 3, 0.3).unwrap();
    let x = DVector::from_element(3, 1.0);
    let m = measure_from_fractional(&x, 1.0, &inst, Mode::Exact).unwrap();
    let r = check_theorem_43(&m, &inst, 1.0, 1.0).unwrap();
    assert!(r.holds);
    assert!((r.lhs - r.rhs).abs() <= 1e-12 * r.rhs);
}

#[test]
fn sufficient_k_tail_examples() {
    let r = check_claim_62(0.25, 1.25, 104, 2);
    assert!(r.hypothesis && r.holds);
    assert!(!check_claim_62(0.25, 1.25, 103, 2).hypothesis);
    let r = check_claim_62(1.0, 1.5, 6, 1);
    assert!(r.hypothesis && r.holds);
}

#[test]
fn regularizer_inflation_equality_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose();
    let r = check_claim_63(&m, 1.0, 2.0).unwrap();
    assert!((r.lhs - r.rhs).abs() <= 1e-12 * r.rhs);
    let r = check_claim_63(&(DMatrix::identity(3, 3) * 2.5), 1.7, 3.0).unwrap();
    assert!(r.holds && (r.lhs - r.rhs).abs() <= 1e-12 * r.rhs);
}

#[test]
fn chernoff_examples() {
    let x = vec![0.75; 40];
    let r = check_chernoff_35(&x, &[], 1.5, 30);
    assert!(r.hypothesis && r.holds, "{r:?}");
    let x = vec![1.0, 1.0, 0.0, 0.0];
    let r = check_chernoff_35(&x, &[0, 1], 1.5, 2);
    assert!(r.skipped.is_some());
}

#[test]
fn poisson_binomial_matches_binomial() {
    let dist = poisson_binomial(&[0.3; 6]);
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    let want = 15.0 * 0.3f64.powi(2) * 0.7f64.powi(4);
    assert!((dist[2] - want).abs() < 1e-15);
}

#[test]
fn regularizer_inflation_never_helps() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let d = rng.random_range(1..=5);
        let a = DMatrix::from_fn(d, d + 1, |_, _| rng.random_range(-1.0..1.0));
        let m = &a * a.transpose();
        let lambda = rng.random_range(0.01..5.0);
        let alpha = rng.random_range(1.0..3.0);
        assert!(aopt_objective(&m, alpha * lambda).unwrap() <= aopt_objective(&m, lambda).unwrap());
    }
}
