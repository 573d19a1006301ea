use super::*;
use crate::symfun::regularized_esp;
use crate::util::for_each_subset;

fn toy() -> DesignInstance {
    DesignInstance::new(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]), 2, 1.0).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, lambda: f64) -> DesignInstance {
    let v = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
    DesignInstance::new(v, k, lambda).unwrap()
}

/// Unnormalized `mu'` over the support of the mode, by enumeration.
fn enumerate(m: &HardCoreMeasure, inst: &DesignInstance, l: usize) -> Vec<(Vec<usize>, f64)> {
    let sizes = match m.mode {
        Mode::Exact => inst.k..=inst.k,
        Mode::AtMost => 0..=inst.k,
    };
    let mut out = Vec::new();
    for size in sizes {
        for_each_subset(inst.n(), size, |s| {
            let zs: f64 = s.iter().map(|&i| m.z[i]).product();
            let w = zs * regularized_esp(&inst.subset_gram(s), inst.lambda, l).unwrap();
            out.push((s.to_vec(), w));
        });
    }
    out
}

#[test]
fn beta_examples() {
    let inst = DesignInstance::new(DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]), 2, 0.0).unwrap();
    let x = DVector::from_row_slice(&[0.5, 0.5, 1.0, 0.0]);
    let m = measure_from_fractional(&x, 1.0, &inst, Mode::AtMost).unwrap();
    assert_eq!(m.beta, 1.25);
    assert_eq!(m.z[3], 0.0);
    for (xi, zi) in x.iter().zip(&m.z) {
        assert!((zi * (m.beta - xi) - xi).abs() < 1e-12);
    }
    // ||V(x)V(x)^T|| = 2, so lambda = 6 gives lambda' = 3
    let inst = inst.with_lambda(6.0).unwrap();
    let m = measure_from_fractional(&x, 1.0, &inst, Mode::AtMost).unwrap();
    assert!((m.lambda_prime - 3.0).abs() < 1e-12);
    assert!((m.beta - 1.5).abs() < 1e-12);
    let zero = DVector::zeros(4);
    assert_eq!(measure_from_fractional(&zero, 1.0, &inst, Mode::AtMost), Err(DesignError::DegenerateFractional));
    assert!(measure_from_fractional(&x, 0.0, &inst, Mode::AtMost).is_err());
}

#[test]
fn toy_marginal() {
    let inst = toy();
    let m = HardCoreMeasure::uniform(3, Mode::Exact);
    let p = marginal_probability(&m, &inst, 1, &[], &[], 0).unwrap();
    assert!((p - 17.0 / 31.0).abs() < 1e-12);
    let p = marginal_probability(&m, &inst, 1, &[0], &[], 1).unwrap();
    assert!((p - 6.0 / 17.0).abs() < 1e-12);
    assert!(matches!(marginal_probability(&m, &inst, 1, &[0], &[], 0), Err(DesignError::InvalidAnchors(_))));
    assert_eq!(marginal_probability(&m, &inst, 1, &[0, 1], &[], 2), Ok(0.0));
    let m = HardCoreMeasure::with_weights(vec![1.0, 0.0, 0.0], Mode::Exact).unwrap();
    assert_eq!(marginal_probability(&m, &inst, 1, &[], &[], 2), Err(DesignError::ZeroProbabilityCondition));
}

#[test]
fn exchangeable_marginal() {
    let v = DMatrix::from_element(2, 7, 0.6);
    let inst = DesignInstance::new(v, 3, 0.5).unwrap();
    let m = HardCoreMeasure::with_weights(vec![1.7; 7], Mode::Exact).unwrap();
    for i in 0..7 {
        let p = marginal_probability(&m, &inst, 2, &[], &[], i).unwrap();
        assert!((p - 3.0 / 7.0).abs() < 1e-10);
    }
}

#[test]
fn marginals_match_enumeration_at_zero_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let inst = random_instance(&mut rng, 7, 3, 4, 0.0);
        let z: Vec<f64> = (0..7).map(|_| rng.random_range(0.2..2.0)).collect();
        let m = HardCoreMeasure::with_weights(z, Mode::Exact).unwrap();
        let all = enumerate(&m, &inst, 3);
        let total: f64 = all.iter().map(|(_, w)| w).sum();
        for i in 0..7 {
            let want: f64 = all.iter().filter(|(s, _)| s.contains(&i)).map(|(_, w)| w).sum::<f64>() / total;
            let got = marginal_probability(&m, &inst, 3, &[], &[], i).unwrap();
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn path_probabilities_reproduce_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..12 {
        let n = rng.random_range(3..=9);
        let d = rng.random_range(1..=3);
        let k = rng.random_range(d..=n);
        let lambda = if trial % 3 == 0 { 0.0 } else { rng.random_range(0.01..3.0) };
        let inst = random_instance(&mut rng, n, d, k, lambda);
        let l = rng.random_range(1..=d);
        let mode = if trial % 2 == 0 { Mode::Exact } else { Mode::AtMost };
        let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..4.0)).collect();
        if trial % 4 == 1 {
            z[0] = 0.0;
        }
        let m = HardCoreMeasure::with_weights(z, mode).unwrap();
        let params = GenRatioParams::new(l - 1, l, d).unwrap();
        let sampler = VolumeSampler::new(&inst, &m, params).unwrap();
        let all = enumerate(&m, &inst, l);
        let total: f64 = all.iter().map(|(_, w)| w).sum();
        let mut tv = 0.0;
        let mut mass = 0.0;
        for (s, w) in &all {
            let p = sampler.path_probability(s).unwrap();
            tv += (p - w / total).abs();
            mass += p;
        }
        assert!(tv / 2.0 <= 1e-8, "trial {trial}: tv {}", tv / 2.0);
        assert!((mass - 1.0).abs() < 1e-8);
    }
}

#[test]
fn toy_sampling_frequencies() {
    let inst = toy();
    let m = HardCoreMeasure::uniform(3, Mode::Exact);
    let sampler = VolumeSampler::new(&inst, &m, GenRatioParams::new(0, 1, 1).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws = 200_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        let s = sampler.sample(&mut rng).unwrap();
        let idx = match s.indices.as_slice() {
            [0, 1] => 0,
            [0, 2] => 1,
            [1, 2] => 2,
            other => panic!("unexpected set {other:?}"),
        };
        counts[idx] += 1;
    }
    for (c, w) in counts.iter().zip([6.0, 11.0, 14.0]) {
        let p = w / 31.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((*c as f64 / draws as f64 - p).abs() < 3.0 * se, "{counts:?}");
    }
}

#[test]
fn full_budget_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = random_instance(&mut rng, 5, 2, 5, 0.3);
    let m = HardCoreMeasure::with_weights(vec![0.7; 5], Mode::Exact).unwrap();
    let params = GenRatioParams::a_optimal(2);
    assert_eq!(sample(&m, &inst, params, 1).unwrap().indices, vec![0, 1, 2, 3, 4]);
    assert_eq!(derandomize(&m, &inst, params).unwrap().indices, vec![0, 1, 2, 3, 4]);

    let inst = random_instance(&mut rng, 12, 3, 5, 0.3);
    let z: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..1.0)).collect();
    let m = HardCoreMeasure::with_weights(z, Mode::AtMost).unwrap();
    let a = sample(&m, &inst, GenRatioParams::a_optimal(3), 77).unwrap();
    let b = sample(&m, &inst, GenRatioParams::a_optimal(3), 77).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.indices.len(), 5);
    assert!(a.sampled.iter().all(|i| a.indices.contains(i)));
    assert_eq!(a.padded, a.sampled.len() < 5);
}

#[test]
fn toy_derandomization() {
    let inst = toy();
    let m = HardCoreMeasure::uniform(3, Mode::Exact);
    let s = derandomize(&m, &inst, GenRatioParams::new(0, 1, 1).unwrap()).unwrap();
    assert_eq!(s.indices, vec![1, 2]);
    assert!(s.objective <= 3.0 / 31.0);
    assert!((s.objective - 1.0 / 14.0).abs() < 1e-12);
}

#[test]
fn derandomization_beats_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for trial in 0..15 {
        let n = rng.random_range(4..=9);
        let d = rng.random_range(1..=3);
        let k = rng.random_range(d..=n);
        let lambda = rng.random_range(0.0..2.0);
        let inst = random_instance(&mut rng, n, d, k, lambda);
        let mode = if trial % 2 == 0 { Mode::Exact } else { Mode::AtMost };
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
        let m = HardCoreMeasure::with_weights(z, mode).unwrap();
        let l = rng.random_range(1..=d);
        let params = GenRatioParams::new(l - 1, l, d).unwrap();
        let all = enumerate(&m, &inst, l);
        let total: f64 = all.iter().map(|(_, w)| w).sum();
        let expect: f64 = all
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(s, w)| w / total * gen_ratio_objective(&inst.subset_gram(s), inst.lambda, params).unwrap())
            .sum();
        let s = derandomize(&m, &inst, params).unwrap();
        let unpadded = s.sampled_objective.unwrap();
        assert!(unpadded <= expect * (1.0 + 1e-10), "trial {trial}: {unpadded} > {expect}");
        assert!(s.objective <= unpadded * (1.0 + 1e-12));
    }
}

#[test]
fn baseline_large_lambda_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inst = random_instance(&mut rng, 5, 2, 2, 1e9);
    let m = HardCoreMeasure::uniform(5, Mode::Exact);
    let sampler = VolumeSampler::new(&inst, &m, GenRatioParams::a_optimal(2)).unwrap();
    let mut tv = 0.0;
    for_each_subset(5, 2, |s| tv += (sampler.path_probability(s).unwrap() - 0.1).abs());
    assert!(tv / 2.0 <= 1e-6);
    let b = baseline_reg_volume_sample(&inst, 4).unwrap();
    assert_eq!(b.indices.len(), 2);

    let inst = DesignInstance::new(DMatrix::identity(3, 3), 3, 0.0).unwrap();
    assert_eq!(baseline_reg_volume_sample(&inst, 0).unwrap().indices, vec![0, 1, 2]);
}

#[test]
fn toy_baseline_distribution() {
    let inst = toy();
    let m = HardCoreMeasure::uniform(3, Mode::Exact);
    let sampler = VolumeSampler::new(&inst, &m, GenRatioParams::a_optimal(1)).unwrap();
    for (s, w) in [(vec![0, 1], 6.0), (vec![0, 2], 11.0), (vec![1, 2], 14.0)] {
        assert!((sampler.path_probability(&s).unwrap() - w / 31.0).abs() < 1e-12);
    }
}

#[test]
fn degenerate_measure() {
    let inst = DesignInstance::new(DMatrix::identity(2, 3), 2, 0.0).unwrap();
    // only index 0 has weight, so no 2-set carries any
    let m = HardCoreMeasure::with_weights(vec![1.0, 0.0, 0.0], Mode::Exact).unwrap();
    assert_eq!(sample(&m, &inst, GenRatioParams::a_optimal(2), 0), Err(DesignError::DegenerateMeasure));
}

#[test]
fn padding_prefers_new_directions() {
    let v = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.5, 0.0, 0.01, 1.0, 0.5]);
    let inst = DesignInstance::new(v, 2, 0.0).unwrap();
    assert_eq!(pad_greedy(&inst, &[0]).unwrap(), vec![0, 2]);
    let inst = inst.with_lambda(1.0).unwrap();
    let padded = pad_greedy(&inst, &[]).unwrap();
    assert_eq!(padded.len(), 2);
}
