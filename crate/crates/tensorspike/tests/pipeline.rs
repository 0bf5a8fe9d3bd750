use std::sync::Arc;

use proptest::prelude::*;
use tensorspike::layout::BlockLayout;
use tensorspike::linalg::{dot, embedded_identity, norm};
use tensorspike::model::{make_instance, InstanceSpec, SpikeMode};
use tensorspike::noise::{NoiseConfig, RewardOracle};
use tensorspike::pipeline::{
    argmax_lowest, build_initialization, median_samples, pattern_count, prepare_run, run_mpsnsga, select_initialization,
    InitPattern, RunConfig, ScheduleChoice, ScheduleSpec,
};
use tensorspike::sga::{BlockState, StreamContext};
use tensorspike::Error;

fn config(order: usize, d: usize, snr: f64, noise: NoiseConfig, choice: ScheduleChoice, seed: u64) -> RunConfig {
    let instance = InstanceSpec {
        order,
        dims: vec![d; order],
        snr,
        spike_mode: SpikeMode::Symmetric,
        seed,
        spikes: None,
    };
    RunConfig::new(instance, noise, ScheduleSpec::new(choice, 200), seed)
}

fn sub(a: &[f64], b: &[f64], c: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| c * (x - y)).collect()
}

fn add(a: &[f64], b: &[f64], c: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| c * (x + y)).collect()
}

#[test]
fn pattern_counts() {
    for (dims, count) in [(vec![3; 4], 16), (vec![3; 6], 64), (vec![3; 5], 32), (vec![3; 7], 128)] {
        let layout = BlockLayout::new(&dims).unwrap();
        assert_eq!(pattern_count(&layout), count);
        let all: std::collections::HashSet<Vec<(i8, i8)>> =
            (0..count).map(|t| InitPattern::from_index(&layout, t).unwrap().signs).collect();
        assert_eq!(all.len(), count);
        assert!(InitPattern::from_index(&layout, count).is_err());
    }
}

#[test]
fn initialization_parts_have_half_norm() {
    let layout = BlockLayout::new(&[2, 2, 3, 5]).unwrap();
    let pp = build_initialization(&InitPattern::from_index(&layout, 0).unwrap(), &layout, 4).unwrap();
    // Bit 1 flips block 0's random part.
    let pm = build_initialization(&InitPattern::from_index(&layout, 2).unwrap(), &layout, 4).unwrap();
    let det = add(pp[0].w(), pm[0].w(), 0.5);
    let rnd = sub(pp[0].w(), pm[0].w(), 0.5);
    assert!((norm(&det) - 0.5).abs() < 1e-15);
    assert!((norm(&rnd) - 0.5).abs() < 1e-15);
    assert!(sub(&det, &deterministic_part(&layout, 0, 1), 1.0).iter().all(|x| x.abs() < 1e-15));
    let want = 0.5 + 2.0 * dot(&det, &rnd);
    assert!((pp[0].frob_norm().powi(2) - want).abs() < 1e-14);
    assert!((pm[0].frob_norm().powi(2) - (0.5 - 2.0 * dot(&det, &rnd))).abs() < 1e-14);
    // Block 1 is untouched by bit 1.
    assert_eq!(pp[1], pm[1]);
}

fn deterministic_part(layout: &BlockLayout, j: usize, sign: i8) -> Vec<f64> {
    let b = layout.block(j);
    let c = sign as f64 * 0.5 / (b.rows as f64).sqrt();
    embedded_identity(b.rows, b.cols).iter().map(|x| c * x).collect()
}

#[test]
fn flipping_random_part_flips_its_alignment() {
    let inst = make_instance(4, &[3; 4], 1.0, SpikeMode::Random, 8).unwrap();
    let layout = inst.layout();
    let s = layout.signal_matrix(1, inst.spikes());
    // Bit 3 flips block 1's random part.
    let a = build_initialization(&InitPattern::from_index(&layout, 0).unwrap(), &layout, 1).unwrap();
    let b = build_initialization(&InitPattern::from_index(&layout, 8).unwrap(), &layout, 1).unwrap();
    let det = deterministic_part(&layout, 1, 1);
    let ra = dot(&sub(a[1].w(), &det, 1.0), &s);
    let rb = dot(&sub(b[1].w(), &det, 1.0), &s);
    assert!(ra.abs() > 1e-6);
    assert!((ra + rb).abs() < 1e-15);
}

#[test]
fn some_pattern_aligns_every_part() {
    for seed in 0..20 {
        let inst = make_instance(5, &[3, 3, 3, 4, 4], 1.0, SpikeMode::Random, seed).unwrap();
        let layout = inst.layout();
        let found = (0..pattern_count(&layout)).any(|t| {
            let p = InitPattern::from_index(&layout, t).unwrap();
            let w = build_initialization(&p, &layout, seed).unwrap();
            (0..layout.num_blocks()).all(|j| {
                let s = layout.signal_matrix(j, inst.spikes());
                if layout.block(j).is_vector() {
                    return dot(w[j].w(), &s) > 0.0;
                }
                let det = deterministic_part(&layout, j, p.signs[j].0);
                let rnd = sub(w[j].w(), &det, 1.0);
                dot(&det, &s) > 0.0 && dot(&rnd, &s) > 0.0
            })
        });
        assert!(found, "seed {seed}");
    }
}

fn unit(layout: &BlockLayout, j: usize, w: Vec<f64>) -> BlockState {
    BlockState::new(j, layout.block(j), w).unwrap().finalized().unwrap()
}

#[test]
fn selection_examples() {
    let inst = Arc::new(make_instance(4, &[2; 4], 3.0, SpikeMode::Symmetric, 2).unwrap());
    let layout = inst.layout();
    let aligned: Vec<BlockState> = (0..2).map(|j| unit(&layout, j, layout.signal_matrix(j, inst.spikes()))).collect();
    // ⟨[I 0]/√2, v vᵀ⟩ = 1/√2, so this candidate scores λ/2.
    let off: Vec<BlockState> = (0..2).map(|j| unit(&layout, j, deterministic_part(&layout, j, 1))).collect();
    let mut oracle = RewardOracle::new(inst.clone(), NoiseConfig::zero()).unwrap();
    let mut ctx = StreamContext::default();
    assert_eq!(select_initialization(std::slice::from_ref(&off), &mut oracle, &mut ctx, 4).unwrap(), 0);
    assert_eq!(select_initialization(&[off.clone(), aligned.clone()], &mut oracle, &mut ctx, 4).unwrap(), 1);
    assert_eq!(select_initialization(&[aligned.clone(), aligned.clone()], &mut oracle, &mut ctx, 4).unwrap(), 0);
    assert_eq!(oracle.noise().samples_drawn(), 4 + 8 + 8);
    assert_eq!(ctx.samples_used(), 20);
    let mut noisy = RewardOracle::new(inst, NoiseConfig::gaussian(1)).unwrap();
    let mut ctx = StreamContext::default();
    assert_eq!(select_initialization(&[off.clone(), aligned, off], &mut noisy, &mut ctx, 500).unwrap(), 1);
    assert_eq!(noisy.noise().samples_drawn(), 1500);
    assert!(select_initialization(&[], &mut noisy, &mut ctx, 5).is_err());
}

#[test]
fn argmax_and_median_examples() {
    assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax_lowest(&[5.0]), 0);
    assert_eq!(median_samples(&[Some(3), Some(1), Some(2)]), Some(2));
    assert_eq!(median_samples(&[Some(3), None, None]), None);
    assert_eq!(median_samples(&[Some(3), Some(4), None, None]), Some(4));
    assert_eq!(median_samples(&[Some(3), Some(4), Some(9), None]), Some(4));
    assert_eq!(median_samples(&[]), None);
}

#[test]
fn noiseless_symmetric_run_recovers() {
    let mut c = config(4, 6, 2.0, NoiseConfig::zero(), ScheduleChoice::Case2, 3);
    c.schedule.budget_cap = Some(2_000_000);
    let out = run_mpsnsga(&c).unwrap();
    assert!(out.report.loss.max_loss <= 1e-6, "loss {}", out.report.loss.max_loss);
    assert_eq!(out.report.resources.passes, 1);
}

#[test]
fn pure_noise_does_not_recover() {
    let mut total = 0.0;
    for seed in 0..20 {
        let mut c = config(4, 6, 0.0, NoiseConfig::gaussian(seed), ScheduleChoice::Case2, seed);
        c.instance.spike_mode = SpikeMode::Random;
        c.schedule.lambda_hint = Some(4.0);
        c.schedule.budget_cap = Some(100_000);
        c.parallel = false;
        total += run_mpsnsga(&c).unwrap().report.loss.max_loss;
    }
    assert!(total / 20.0 > 1.0, "mean max loss {}", total / 20.0);
}

#[test]
fn sample_count_matches_closed_form() {
    let mut c = config(4, 4, 6.0, NoiseConfig::gaussian(5), ScheduleChoice::Case2, 5);
    c.schedule.budget_cap = Some(300_000);
    let out = run_mpsnsga(&c).unwrap();
    let s = &out.schedule;
    let per: u64 = s.phase1.iter().flat_map(|st| st.blocks.iter()).map(|b| b.budget).sum::<u64>()
        + s.phase2.iter().map(|b| b.budget).sum::<u64>();
    let closed = 16 * (s.n0 + per) + 2 * s.phase3.iter().map(|b| b.budget).sum::<u64>();
    assert_eq!(out.report.resources.total_samples(), closed);
    assert_eq!(out.report.phase3_choices.len(), 2);

    c.phase3 = false;
    let out = run_mpsnsga(&c).unwrap();
    assert!(out.report.phase3_choices.is_empty());
    assert_eq!(out.report.resources.total_samples(), 16 * (s.n0 + per));
}

#[test]
fn runs_are_reproducible() {
    let mut c = config(5, 3, 8.0, NoiseConfig::gaussian(7), ScheduleChoice::Case2, 7);
    c.schedule.budget_cap = Some(1_000_000);
    let a = run_mpsnsga(&c).unwrap().report;
    c.parallel = false;
    let b = run_mpsnsga(&c).unwrap().report;
    assert_eq!(a, b);
    assert_eq!(a.phase3_choices.len(), 3);
}

#[test]
fn config_errors() {
    let c = config(3, 3, 2.0, NoiseConfig::zero(), ScheduleChoice::Case2, 1);
    assert!(matches!(prepare_run(&c), Err(Error::Parity(_))));
    let mut c = config(4, 3, 2.0, NoiseConfig::zero(), ScheduleChoice::Case2, 1);
    c.schedule.parity = Some(tensorspike::layout::Parity::Odd);
    assert!(matches!(prepare_run(&c), Err(Error::Parity(_))));
    let mut c = config(4, 3, 2.0, NoiseConfig::zero(), ScheduleChoice::Case2, 1);
    c.delta = 0.7;
    assert!(prepare_run(&c).is_err());
    let mut c = config(4, 3, 2.0, NoiseConfig::zero(), ScheduleChoice::Case2, 1);
    c.sample_cap = Some(1000);
    assert!(matches!(prepare_run(&c), Err(Error::SampleCap { cap: 1000 })));
    let c = config(4, 3, 0.0, NoiseConfig::zero(), ScheduleChoice::Case2, 1);
    assert!(prepare_run(&c).is_err());
}

#[test]
fn auto_mode_records_the_search() {
    let mut c = config(4, 4, 6.0, NoiseConfig::gaussian(2), ScheduleChoice::Auto { kappa: 0.5 }, 2);
    c.schedule.budget_cap = Some(200_000);
    let p = prepare_run(&c).unwrap();
    let search = p.search.clone().unwrap();
    let out = run_mpsnsga(&c).unwrap();
    assert_eq!(out.report.search.as_ref(), Some(&search));
    assert_eq!(out.report.resources.search_samples, search.samples);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn initialization_norm_identity(seed in 0u64..10_000, tau in 0usize..16, d in 2usize..6) {
        let layout = BlockLayout::new(&[d, d, d + 1, d + 2]).unwrap();
        let p = InitPattern::from_index(&layout, tau).unwrap();
        let w = build_initialization(&p, &layout, seed).unwrap();
        let flip = InitPattern { tau, signs: p.signs.iter().map(|&(a, b)| (a, -b)).collect() };
        let wf = build_initialization(&flip, &layout, seed).unwrap();
        for j in 0..2 {
            let det = add(w[j].w(), wf[j].w(), 0.5);
            let rnd = sub(w[j].w(), wf[j].w(), 0.5);
            prop_assert!((norm(&det) - 0.5).abs() < 1e-12);
            prop_assert!((norm(&rnd) - 0.5).abs() < 1e-12);
            prop_assert!((w[j].frob_norm().powi(2) - 0.5 - 2.0 * dot(&det, &rnd)).abs() < 1e-12);
        }
    }
}
