use std::sync::Arc;

use proptest::prelude::*;
use tensorspike::layout::BlockLayout;
use tensorspike::linalg::{dot, outer, unit_gaussian};
use tensorspike::model::SignalInstance;
use tensorspike::noise::{noise_bound_c1, Backend, NoiseConfig, NoiseKind, NoiseOracle, ProjectionRequest, RewardOracle};
use tensorspike::seeding;
use tensorspike::Error;

fn e(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn request(block: usize, probes: Vec<Vec<f64>>) -> ProjectionRequest {
    ProjectionRequest { block, fixed_factors: vec![e(9, 0), e(9, 4)], probes }
}

fn cov_pair() -> Vec<Vec<f64>> {
    let a = e(9, 0);
    let mut b = vec![0.0; 9];
    b[0] = 0.3;
    b[1] = (1.0f64 - 0.09).sqrt();
    vec![a, b]
}

fn moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, f64) {
    let n = samples.len() as f64;
    let k = samples[0].len();
    let mean: Vec<f64> = (0..k).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..k)
        .map(|i| samples.iter().map(|s| (s[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let cov = samples.iter().map(|s| (s[0] - mean[0]) * (s[1] - mean[1])).sum::<f64>() / (n - 1.0);
    (mean, var, cov)
}

fn draw(backend: Backend, seed: u64, n: u64) -> Vec<Vec<f64>> {
    let layout = BlockLayout::new(&[3, 3, 3, 3]).unwrap();
    let mut oracle = NoiseOracle::new(NoiseConfig::new(NoiseKind::GaussianIid, seed, backend), layout).unwrap();
    let req = request(0, cov_pair());
    (0..n).map(|i| oracle.fresh_sample_projections(&req, i).unwrap()).collect()
}

#[test]
fn zero_noise_gives_zeros() {
    let layout = BlockLayout::new(&[3, 3, 3, 3]).unwrap();
    let mut oracle = NoiseOracle::new(NoiseConfig::zero(), layout).unwrap();
    for i in 0..5 {
        assert_eq!(oracle.fresh_sample_projections(&request(1, cov_pair()), i).unwrap(), vec![0.0, 0.0]);
    }
}

#[test]
fn explicit_covariance_matches_frobenius_product() {
    let s = draw(Backend::Explicit, 5, 100_000);
    let (_, _, cov) = moments(&s);
    assert!((cov - 0.3).abs() < 0.02, "covariance {cov}");
}

#[test]
fn backends_agree_on_variance() {
    let n = 100_000;
    let (_, ve, _) = moments(&draw(Backend::Explicit, 1, n));
    let (_, vp, _) = moments(&draw(Backend::Projected, 2, n));
    // Var of a sample variance of N(0,1) data is about 2/n.
    let se = (2.0 * 2.0 / n as f64).sqrt();
    for i in 0..2 {
        assert!((ve[i] - vp[i]).abs() < 3.0 * se, "probe {i}: {} vs {}", ve[i], vp[i]);
    }
}

#[test]
fn repeated_index_is_a_freshness_error() {
    let layout = BlockLayout::new(&[3, 3, 3, 3]).unwrap();
    let mut oracle = NoiseOracle::new(NoiseConfig::gaussian(3), layout).unwrap();
    let req = request(0, cov_pair());
    oracle.fresh_sample_projections(&req, 4).unwrap();
    assert!(matches!(oracle.fresh_sample_projections(&req, 4), Err(Error::Freshness { .. })));
    assert!(oracle.fresh_sample_projections(&req, 5).is_ok());
    // Other blocks have their own streams.
    assert!(oracle.fresh_sample_projections(&request(1, cov_pair()), 4).is_ok());
}

#[test]
fn explicit_backend_respects_size_cap() {
    let layout = BlockLayout::new(&[40, 40, 40, 40]).unwrap();
    let r = NoiseOracle::new(NoiseConfig::new(NoiseKind::GaussianIid, 0, Backend::Explicit), layout);
    assert!(matches!(r, Err(Error::ExplicitTooLarge { .. })));
}

#[test]
fn sphere_noise_needs_explicit_backend() {
    let layout = BlockLayout::new(&[2, 2, 2, 2]).unwrap();
    assert!(NoiseOracle::new(NoiseConfig::new(NoiseKind::BoundedSphere, 0, Backend::Projected), layout.clone()).is_err());
    let mut oracle = NoiseOracle::new(NoiseConfig::new(NoiseKind::BoundedSphere, 0, Backend::Explicit), layout).unwrap();
    let req = ProjectionRequest { block: 0, fixed_factors: vec![e(4, 0), e(4, 0)], probes: vec![e(4, 2)] };
    for i in 0..200 {
        assert!(oracle.fresh_sample_projections(&req, i).unwrap()[0].abs() <= 1.0);
    }
}

#[test]
fn sample_cap_is_enforced() {
    let layout = BlockLayout::new(&[3, 3, 3, 3]).unwrap();
    let mut oracle = NoiseOracle::new(NoiseConfig::gaussian(3), layout).unwrap();
    oracle.set_sample_cap(Some(2));
    let req = request(0, cov_pair());
    oracle.fresh_sample_projections(&req, 0).unwrap();
    oracle.fresh_sample_projections(&req, 1).unwrap();
    assert!(matches!(oracle.fresh_sample_projections(&req, 2), Err(Error::SampleCap { cap: 2 })));
}

#[test]
fn c1_examples() {
    let c = noise_bound_c1(100, &[4, 4, 4, 4], 0.01).unwrap();
    assert!((c - 4.0 * (3600.0f64 / 0.01).ln()).abs() < 1e-12);
    assert!((c - 51.17).abs() < 0.01);
    let c2 = noise_bound_c1(200, &[4, 4, 4, 4], 0.01).unwrap();
    assert!((c2 - c - 4.0 * 2f64.ln()).abs() < 1e-12);
    let near = noise_bound_c1(1, &[1, 1, 1, 1], 1.0 - 1e-12).unwrap();
    assert!((near - 4.0 * 6f64.ln()).abs() < 1e-9);
    assert!(noise_bound_c1(10, &[4; 4], 1.0).is_err());
    assert!(noise_bound_c1(10, &[4; 4], 0.0).is_err());
    assert!(noise_bound_c1(0, &[4; 4], 0.5).is_err());
}

fn unit_instance(snr: f64) -> Arc<SignalInstance> {
    Arc::new(SignalInstance::new(vec![2, 2, 2, 2], snr, vec![e(2, 0), e(2, 1), e(2, 0), e(2, 1)]).unwrap())
}

#[test]
fn reward_examples() {
    let inst = unit_instance(2.0);
    let mut oracle = RewardOracle::new(inst, NoiseConfig::zero()).unwrap();
    // Block 1 signal is e0 e1ᵀ; a factor with alignment 0.5.
    let mut f1 = vec![0.0; 4];
    f1[1] = 0.5;
    f1[2] = (0.75f64).sqrt();
    let prep = oracle.prepare(0, &[&[0.0; 4], &f1]).unwrap();
    let mut w = vec![0.0; 4];
    w[1] = 0.8;
    w[3] = 0.6;
    let r = oracle.signal_plus_noise_reward(&w, &prep, 0).unwrap();
    assert!((r - 0.8).abs() < 1e-12);

    let aligned = oracle.signal(1).to_vec();
    let prep = oracle.prepare(0, &[&[0.0; 4], &aligned]).unwrap();
    let s0 = oracle.signal(0).to_vec();
    assert!((oracle.signal_plus_noise_reward(&s0, &prep, 1).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(oracle.signal_plus_noise_reward(&[0.0, 0.0, 1.0, 0.0], &prep, 2).unwrap(), 0.0);
}

#[test]
fn gradient_matches_reward_on_the_iterate() {
    let inst = unit_instance(3.0);
    let mut oracle = RewardOracle::new(inst, NoiseConfig::gaussian(9)).unwrap();
    let s1 = oracle.signal(1).to_vec();
    let prep = oracle.prepare(0, &[&[0.0; 4], &s1]).unwrap();
    let mut replay = oracle.clone();
    let w = [0.3, -0.2, 0.5, 0.1];
    let mut g = vec![0.0; 4];
    oracle.gradient_into(&prep, 0, &mut g).unwrap();
    let r = replay.signal_plus_noise_reward(&w, &prep, 0).unwrap();
    assert!((dot(&g, &w) - r).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn c1_is_monotone(t in 1u64..1_000_000, d in 1usize..20, dp in 0.001f64..0.5) {
        let dims = [d; 4];
        let base = noise_bound_c1(t, &dims, dp).unwrap();
        prop_assert!(noise_bound_c1(t + 1, &dims, dp).unwrap() > base);
        prop_assert!(noise_bound_c1(t, &dims, dp * 1.5).unwrap() < base);
    }

    #[test]
    fn projected_law_is_scale_equivariant(seed in 0u64..1000) {
        // Same stream, scaled probe: projections scale linearly.
        let layout = BlockLayout::new(&[2, 2, 2, 2]).unwrap();
        let mut rng = seeding::rng(seed);
        let q = outer(&unit_gaussian(&mut rng, 2), &unit_gaussian(&mut rng, 2));
        let q3: Vec<f64> = q.iter().map(|x| 3.0 * x).collect();
        let mut a = NoiseOracle::new(NoiseConfig::gaussian(seed), layout.clone()).unwrap();
        let mut b = NoiseOracle::new(NoiseConfig::gaussian(seed), layout).unwrap();
        let fixed = vec![e(4, 0), e(4, 3)];
        let x = a.fresh_sample_projections(&ProjectionRequest { block: 0, fixed_factors: fixed.clone(), probes: vec![q] }, 0).unwrap();
        let y = b.fresh_sample_projections(&ProjectionRequest { block: 0, fixed_factors: fixed, probes: vec![q3] }, 0).unwrap();
        prop_assert!((3.0 * x[0] - y[0]).abs() < 1e-9);
    }
}
