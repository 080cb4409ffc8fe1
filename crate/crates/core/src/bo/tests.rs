use super::*;
use crate::numerics::stream;
use crate::space::Factor;
use rand::SeedableRng;

fn tight_kernel() -> KernelConfig {
    KernelConfig {
        noise_variance: 1e-12,
        ..KernelConfig::default()
    }
}

/// Dense GP posterior via an explicit Gauss-Jordan inverse, sharing no code
/// with the Cholesky path.
fn dense_oracle(kernel: &KernelConfig, xs: &[Vec<f64>], ys: &[f64], q: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let var_y = ys.iter().map(|y| (y - mean_y).powi(2)).sum::<f64>() / n as f64;
    let sd = if var_y > 0.0 { var_y.sqrt() } else { 1.0 };
    let z: Vec<f64> = ys.iter().map(|y| (y - mean_y) / sd).collect();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| kernel.eval(&xs[i], &xs[j])).collect();
            row[i] += kernel.noise_variance;
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
            .unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        aug[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                let pr = aug[col].clone();
                aug[r].iter_mut().zip(pr).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    let inv: Vec<Vec<f64>> = aug.into_iter().map(|r| r[n..].to_vec()).collect();
    let k: Vec<f64> = xs.iter().map(|x| kernel.eval(x, q)).collect();
    let kinv_k: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i][j] * k[j]).sum()).collect();
    let mean = mean_y + sd * (0..n).map(|i| kinv_k[i] * z[i]).sum::<f64>();
    let var = kernel.eval(q, q) - k.iter().zip(&kinv_k).map(|(a, b)| a * b).sum::<f64>();
    (mean, sd * sd * var.max(0.0))
}

fn random_points(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = stream(seed, 0);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
    let ys = xs.iter().map(|x| (x.iter().sum::<f64>() * 3.0).sin()).collect();
    (xs, ys)
}

#[test]
fn empty_state_returns_prior() {
    let gp = GpState::new(KernelConfig::default()).unwrap();
    let (m, v) = gp.predict(&[0.3, 0.9]).unwrap();
    assert_eq!(m, 0.0);
    assert_eq!(v, 1.0);
}

#[test]
fn interpolates_a_single_observation() {
    let gp = GpState::from_observations(tight_kernel(), &[vec![0.25, 0.75]], &[0.7]).unwrap();
    let (m, v) = gp.predict(&[0.25, 0.75]).unwrap();
    assert!((m - 0.7).abs() < 1e-9);
    assert!(v < 1e-6);
}

#[test]
fn three_points_match_dense_oracle() {
    let kernel = KernelConfig {
        noise_variance: 1e-4,
        ..KernelConfig::default()
    };
    let xs = vec![vec![0.1, 0.2], vec![0.5, 0.4], vec![0.8, 0.9]];
    let ys = vec![0.3, 0.9, 0.1];
    let gp = GpState::from_observations(kernel, &xs, &ys).unwrap();
    for q in [[0.0, 0.0], [0.3, 0.3], [0.5, 0.4], [0.95, 0.6]] {
        let (m, v) = gp.predict(&q).unwrap();
        let (om, ov) = dense_oracle(&kernel, &xs, &ys, &q);
        assert!((m - om).abs() < 1e-8, "{m} vs {om}");
        assert!((v - ov).abs() < 1e-8, "{v} vs {ov}");
    }
}

#[test]
fn squared_exponential_family_matches_oracle() {
    let kernel = KernelConfig {
        family: KernelFamily::SquaredExponential,
        length_scale: 0.3,
        noise_variance: 1e-3,
        ..KernelConfig::default()
    };
    let (xs, ys) = random_points(20, 3, 4);
    let gp = GpState::from_observations(kernel, &xs, &ys).unwrap();
    let (qs, _) = random_points(10, 3, 5);
    for q in qs {
        let (m, v) = gp.predict(&q).unwrap();
        let (om, ov) = dense_oracle(&kernel, &xs, &ys, &q);
        assert!((m - om).abs() < 1e-8 && (v - ov).abs() < 1e-8);
    }
}

#[test]
fn observed_points_have_tiny_variance() {
    let (xs, ys) = random_points(15, 2, 6);
    let gp = GpState::from_observations(tight_kernel(), &xs, &ys).unwrap();
    for x in &xs {
        assert!(gp.predict(x).unwrap().1 <= 1e-6);
    }
}

#[test]
fn duplicate_observation_survives_via_jitter() {
    let mut gp = GpState::new(tight_kernel()).unwrap();
    gp.observe(vec![0.4, 0.4], 0.5).unwrap();
    gp.observe(vec![0.4, 0.4], 0.5).unwrap();
    gp.observe(vec![0.9, 0.1], 0.2).unwrap();
    assert_eq!(gp.len(), 3);
    assert!(gp.predict(&[0.4, 0.4]).unwrap().0.is_finite());
}

#[test]
fn stale_factor_is_an_internal_error() {
    let mut gp = GpState::from_observations(KernelConfig::default(), &[vec![0.5]], &[1.0]).unwrap();
    gp.corrupt_for_tests();
    assert!(matches!(gp.predict(&[0.5]), Err(Error::Internal(_))));
}

#[test]
fn rejects_bad_hyperparameters() {
    for bad in [
        KernelConfig { length_scale: 0.0, ..KernelConfig::default() },
        KernelConfig { signal_variance: -1.0, ..KernelConfig::default() },
        KernelConfig { noise_variance: 0.0, ..KernelConfig::default() },
    ] {
        assert!(GpState::new(bad).is_err());
    }
}

#[test]
fn ucb_arithmetic_and_zero_kappa() {
    assert!((upper_confidence(0.2, 0.04, 2.0) - 0.6).abs() < 1e-15);
    let (xs, ys) = random_points(5, 2, 7);
    let gp = GpState::from_observations(KernelConfig::default(), &xs, &ys).unwrap();
    for q in random_points(20, 2, 8).0 {
        assert_eq!(ucb_normalized(&gp, 0.0, &q).unwrap(), gp.predict(&q).unwrap().0);
    }
    let tight = GpState::from_observations(tight_kernel(), &xs, &ys).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        assert!((ucb_normalized(&tight, 2.576, x).unwrap() - y).abs() < 1e-2);
    }
}

#[test]
fn acquisition_finds_the_posterior_bump() {
    let space = ScenarioSpace::unit_cube(2, 100).unwrap();
    let center = vec![0.37, 0.62];
    let mut xs = vec![center.clone()];
    let mut ys = vec![1.0];
    for corner in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
        xs.push(corner.to_vec());
        ys.push(0.0);
    }
    let kernel = KernelConfig {
        length_scale: 0.3,
        ..tight_kernel()
    };
    let gp = GpState::from_observations(kernel, &xs, &ys).unwrap();
    let config = UcbConfig { kappa: 0.0, ..UcbConfig::default() };

    let mut grid_best = (f64::NEG_INFINITY, vec![0.0, 0.0]);
    for i in 0..100 {
        for j in 0..100 {
            let q = vec![i as f64 / 99.0, j as f64 / 99.0];
            let m = gp.predict(&q).unwrap().0;
            if m > grid_best.0 {
                grid_best = (m, q);
            }
        }
    }
    let mut rng = stream(21, 0);
    let found = maximize_acquisition(&gp, &config, &space, &mut rng).unwrap();
    let dist = found
        .values()
        .iter()
        .zip(&grid_best.1)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(dist < 0.01, "found {:?}, grid {:?}", found, grid_best.1);
}

#[test]
fn large_kappa_explores_away_from_data() {
    let space = ScenarioSpace::unit_cube(2, 100).unwrap();
    let gp = GpState::from_observations(KernelConfig::default(), &[vec![0.5, 0.5]], &[0.8]).unwrap();
    let config = UcbConfig { kappa: 100.0, ..UcbConfig::default() };
    for seed in 0..5 {
        let found = maximize_acquisition(&gp, &config, &space, &mut stream(seed, 3)).unwrap();
        let dist = ((found[0] - 0.5).powi(2) + (found[1] - 0.5).powi(2)).sqrt();
        assert!(dist > 0.3, "seed {seed}: {found:?}");
    }
}

#[test]
fn single_candidate_without_refinement_is_returned_verbatim() {
    let space = ScenarioSpace::new(vec![
        Factor::new("a", -2.0, 3.0).unwrap(),
        Factor::new("b", 10.0, 20.0).unwrap(),
    ])
    .unwrap();
    let gp = GpState::new(KernelConfig::default()).unwrap();
    let config = UcbConfig { candidates: 1, refinement: 0, ..UcbConfig::default() };
    let mut rng = stream(5, 5);
    let mut replay = rng.clone();
    let found = maximize_acquisition(&gp, &config, &space, &mut rng).unwrap();
    let u: Vec<f64> = (0..2).map(|_| replay.random::<f64>()).collect();
    assert_eq!(found, space.denormalize(&u));
}

#[test]
fn acquisition_value_is_monotone_in_kappa() {
    let space = ScenarioSpace::unit_cube(3, 100).unwrap();
    let (xs, ys) = random_points(12, 3, 9);
    let gp = GpState::from_observations(KernelConfig::default(), &xs, &ys).unwrap();
    let mut last = f64::NEG_INFINITY;
    for kappa in [0.0, 0.5, 1.0, 2.576, 5.0, 20.0] {
        let config = UcbConfig { kappa, refinement: 0, ..UcbConfig::default() };
        let (_, v) = maximize_acquisition_with_value(&gp, &config, &space, &mut stream(1, 1)).unwrap();
        assert!(v >= last, "kappa {kappa}: {v} < {last}");
        last = v;
    }
}

#[test]
fn refinement_never_leaves_bounds() {
    let space = ScenarioSpace::new(vec![
        Factor::new("a", 0.2, 1.0).unwrap(),
        Factor::new("b", -0.25, 0.25).unwrap(),
    ])
    .unwrap();
    let (xs, ys) = random_points(8, 2, 10);
    let gp = GpState::from_observations(KernelConfig::default(), &xs, &ys).unwrap();
    for seed in 0..20 {
        let config = UcbConfig { kappa: 3.0, candidates: 50, ..UcbConfig::default() };
        let s = maximize_acquisition(&gp, &config, &space, &mut stream(seed, 2)).unwrap();
        assert!(space.contains(&s));
    }
}

#[test]
fn first_generates_are_uniform_then_acquisition() {
    let space = ScenarioSpace::unit_cube(2, 100).unwrap();
    let rng = stream(33, 0);
    let mut replay = rng.clone();
    let mut ex = BoExaminer::new(space.clone(), KernelConfig::default(), UcbConfig::default(), rng).unwrap();
    for _ in 0..2 {
        let s = ex.generate().unwrap();
        assert_eq!(s, space.sample_uniform(&mut replay));
        ex.update(&s, s[0] * s[1]).unwrap();
    }
    let third = ex.generate().unwrap();
    let expected = maximize_acquisition(ex.gp(), &UcbConfig::default(), &space, &mut replay).unwrap();
    assert_eq!(third, expected);
}

#[test]
fn examiner_accepts_duplicate_scenarios() {
    let space = ScenarioSpace::unit_cube(2, 100).unwrap();
    let mut ex = BoExaminer::new(space, tight_kernel(), UcbConfig::default(), stream(1, 0)).unwrap();
    let s = ex.generate().unwrap();
    ex.update(&s, 0.5).unwrap();
    // Feed the same point again through the protocol.
    ex.pending.set(&s).unwrap();
    ex.update(&s, 0.5).unwrap();
    assert_eq!(ex.gp().len(), 2);
    assert!(ex.generate().is_ok());
}

#[test]
fn refit_prefers_matching_length_scale() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>()]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (x[0] * 2.0).sin()).collect();
    let mut gp = GpState::from_observations(
        KernelConfig { length_scale: 0.05, noise_variance: 1e-4, ..KernelConfig::default() },
        &xs,
        &ys,
    )
    .unwrap();
    let before = gp.log_marginal_likelihood();
    gp.refit_length_scale(&REFIT_LENGTH_SCALES).unwrap();
    assert!(gp.kernel().length_scale > 0.05);
    assert!(gp.log_marginal_likelihood() >= before);
}

#[test]
fn batched_prediction_is_bitwise_identical() {
    use rand::Rng;
    let mut rng = stream(17, 0);
    let xs: Vec<Vec<f64>> = (0..70).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
    let ys: Vec<f64> = (0..70).map(|_| rng.random()).collect();
    let gp = GpState::from_observations(KernelConfig::default(), &xs, &ys).unwrap();
    // 150 queries spans several blocks plus a ragged tail.
    let qs: Vec<Vec<f64>> = (0..150).map(|_| (0..4).map(|_| rng.random()).collect()).collect();
    let batched = gp.predict_many(&qs).unwrap();
    for (q, got) in qs.iter().zip(&batched) {
        let want = gp.predict(q).unwrap();
        assert_eq!(got.0.to_bits(), want.0.to_bits());
        assert_eq!(got.1.to_bits(), want.1.to_bits());
    }
    let empty = GpState::new(KernelConfig::default()).unwrap();
    assert_eq!(empty.predict_many(&qs[..3]).unwrap(), vec![(0.0, 1.0); 3]);
}
