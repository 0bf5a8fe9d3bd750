//! Self-checks run by the `verify` command.
//!
//! Each suite is small enough to finish in well under a second and returns a
//! pass/fail verdict with a short detail string. Two hooks let callers break
//! things on purpose: scaling `c₁`, and forcing the noise oracle to emit NaN.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{alignment, first_order_term};
use crate::error::Result;
use crate::layout::BlockLayout;
use crate::linalg::{dot, gaussian_vec, normalized, unit_gaussian};
use crate::model::{make_instance, InstanceSpec, SpikeMode};
use crate::noise::{Backend, NoiseConfig, NoiseKind, RewardOracle};
use crate::pipeline::{run_mpsnsga, RunConfig, ScheduleChoice, ScheduleSpec};
use crate::resources::{audit_state_size, PipelineSnapshot};
use crate::schedule::{adaptive_schedule, oracle_schedule, AdaptiveCase, Constants, PhaseSchedule};
use crate::seeding;
use crate::sga::{normalized_step, run_block_inner, BlockState, StepPlan, StreamContext};
use crate::spectral::{top_eigvec_dense, top_eigvec_power};
use crate::FORMAT_TAG;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyHooks {
    /// Multiplies `c₁` in every schedule the suites build.
    pub c1_scale: f64,
    /// Makes the noise oracle of the streaming suite return NaN.
    pub inject_nan: bool,
}

impl Default for VerifyHooks {
    fn default() -> Self {
        VerifyHooks { c1_scale: 1.0, inject_nan: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub format: String,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

type Suite = fn(&VerifyHooks) -> Result<(usize, String)>;

const SUITES: &[(&str, Suite)] = &[
    ("homogeneity", homogeneity),
    ("alpha_scale_invariance", alpha_scale),
    ("step_direction_invariance", step_direction),
    ("first_order_expansion", first_order),
    ("ladder_consistency", ladder_consistency),
    ("schedule_positivity", schedule_positivity),
    ("noise_backends", noise_backends),
    ("sga_stream", sga_stream),
    ("power_vs_dense", power_vs_dense),
    ("state_size", state_size),
    ("noiseless_recovery", noiseless_recovery),
    ("determinism", determinism),
];

/// Runs every suite. A suite that returns an error counts as failed.
pub fn run_verify(hooks: &VerifyHooks) -> VerifySummary {
    let suites: Vec<SuiteResult> = SUITES
        .iter()
        .map(|(name, f)| match f(hooks) {
            Ok((cases, detail)) => SuiteResult { name: name.to_string(), passed: true, cases, detail },
            Err(e) => SuiteResult { name: name.to_string(), passed: false, cases: 0, detail: e.to_string() },
        })
        .collect();
    VerifySummary { format: FORMAT_TAG.to_string(), passed: suites.iter().all(|s| s.passed), suites }
}

fn fail(msg: String) -> crate::Error {
    crate::Error::Invalid(msg)
}

fn inst_spec(order: usize, d: usize, snr: f64, mode: SpikeMode, seed: u64) -> InstanceSpec {
    InstanceSpec { order, dims: vec![d; order], snr, spike_mode: mode, seed, spikes: None }
}

fn homogeneity(_: &VerifyHooks) -> Result<(usize, String)> {
    let inst = Arc::new(inst_spec(4, 3, 2.0, SpikeMode::Random, 5).build()?);
    let mut oracle = RewardOracle::new(inst, NoiseConfig::gaussian(9))?;
    let mut rng = seeding::rng(1);
    let f0 = unit_gaussian(&mut rng, 9);
    let f1 = unit_gaussian(&mut rng, 9);
    let prep = oracle.prepare(1, &[&f0, &f1])?;
    let mut g = vec![0.0; 9];
    let n = 200;
    for i in 0..n as u64 {
        let w = gaussian_vec(&mut rng, 9);
        let mut replay = oracle.clone();
        let r = replay.signal_plus_noise_reward(&w, &prep, i)?;
        oracle.gradient_into(&prep, i, &mut g)?;
        let gw = dot(&g, &w);
        if (r - gw).abs() > 1e-12 * (1.0 + gw.abs()) {
            return Err(fail(format!("case {i}: R = {r}, <grad, W> = {gw}")));
        }
    }
    Ok((n, "R(W) = <grad R, W>".into()))
}

fn alpha_scale(_: &VerifyHooks) -> Result<(usize, String)> {
    let mut rng = seeding::rng(2);
    let n = 200;
    for i in 0..n {
        let v = unit_gaussian(&mut rng, 4);
        let u = unit_gaussian(&mut rng, 3);
        let w = gaussian_vec(&mut rng, 12);
        let c: f64 = rng.gen_range(0.01..100.0);
        let a = alignment(&v, &u, &w)?;
        let b = alignment(&v, &u, &w.iter().map(|x| c * x).collect::<Vec<_>>())?;
        if (a - b).abs() > 1e-12 {
            return Err(fail(format!("case {i}: {a} vs {b}")));
        }
    }
    Ok((n, "alpha(cW) = alpha(W)".into()))
}

fn step_direction(_: &VerifyHooks) -> Result<(usize, String)> {
    let layout = BlockLayout::new(&[3, 3, 3, 3])?;
    let shape = *layout.block(0);
    let mut rng = seeding::rng(3);
    let n = 200;
    for i in 0..n {
        let w = gaussian_vec(&mut rng, 9);
        let g = gaussian_vec(&mut rng, 9);
        let c: f64 = rng.gen_range(0.1..10.0);
        let plan = StepPlan::constant(rng.gen_range(1e-3..0.1), 1);
        let a = BlockState::new(0, &shape, w.clone())?;
        let b = BlockState::new(0, &shape, w.iter().map(|x| c * x).collect())?;
        let ra = dot(&g, a.w());
        let rb = dot(&g, b.w());
        let na = normalized(normalized_step(&a, &plan, ra, &g)?.w()).ok_or_else(|| fail("zero step".into()))?;
        let nb = normalized(normalized_step(&b, &plan, rb, &g)?.w()).ok_or_else(|| fail("zero step".into()))?;
        let err = na.iter().zip(&nb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if err > 1e-12 {
            return Err(fail(format!("case {i}: directions differ by {err:e}")));
        }
    }
    Ok((n, "step(cW) has the direction of step(W)".into()))
}

fn first_order(_: &VerifyHooks) -> Result<(usize, String)> {
    let mut rng = seeding::rng(4);
    let n = 200;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let v = unit_gaussian(&mut rng, 4);
        let u = unit_gaussian(&mut rng, 3);
        let w = gaussian_vec(&mut rng, 12);
        let q = gaussian_vec(&mut rng, 12);
        let s = first_order_term(&w, &q, &v, &u)?;
        let err = |eta: f64| -> Result<f64> {
            let moved: Vec<f64> = w.iter().zip(&q).map(|(a, b)| a + eta * b).collect();
            Ok(((alignment(&v, &u, &moved)? - alignment(&v, &u, &w)?) / eta - s).abs())
        };
        let (e1, e2) = (err(1e-4)?, err(5e-5)?);
        if e1 < 1e-9 {
            continue;
        }
        let ratio = e2 / e1;
        worst = worst.max(ratio);
        if ratio > 0.6 {
            return Err(fail(format!("case {i}: error ratio {ratio} on halving")));
        }
    }
    Ok((n, format!("halving eta at least halves the error (worst ratio {worst:.3})")))
}

fn hooked_constants(hooks: &VerifyHooks) -> Constants {
    Constants { c1_scale: hooks.c1_scale, ..Constants::default() }
}

fn sample_schedules(hooks: &VerifyHooks) -> Result<Vec<PhaseSchedule>> {
    let c = hooked_constants(hooks);
    let mut out = Vec::new();
    for (order, rho) in [(4, 1.0), (4, 0.3), (6, 0.5), (5, 0.5)] {
        let inst = inst_spec(order, 6, 2.0, SpikeMode::PairedCorrelation { rho }, 7).build()?;
        out.push(oracle_schedule(&inst, 0.1, 2000, &c)?);
        out.push(adaptive_schedule(AdaptiveCase::Case2, inst.dims(), 2.0, 0.1, 2000, &c)?);
        out.push(adaptive_schedule(AdaptiveCase::Case1 { c3: 1.0 }, inst.dims(), 2.0, 0.1, 2000, &c)?);
    }
    Ok(out)
}

fn ladder_consistency(hooks: &VerifyHooks) -> Result<(usize, String)> {
    let schedules = sample_schedules(hooks)?;
    for s in &schedules {
        for (h, pair) in s.phase1.windows(2).enumerate() {
            if pair[0].ladder != pair[1].ladder {
                continue;
            }
            for (m, (a, b)) in pair[0].blocks.iter().zip(&pair[1].blocks).enumerate() {
                if b.ub < a.ub || b.lb < a.lb {
                    return Err(fail(format!("stage {h} block {m}: thresholds fall")));
                }
            }
        }
        s.validate()?;
    }
    Ok((schedules.len(), "thresholds climb stage to stage".into()))
}

fn schedule_positivity(hooks: &VerifyHooks) -> Result<(usize, String)> {
    let schedules = sample_schedules(hooks)?;
    for s in &schedules {
        let etas = s
            .phase1
            .iter()
            .flat_map(|st| st.blocks.iter().map(|b| (b.eta, b.budget)))
            .chain(s.phase2.iter().map(|b| (b.eta, b.budget)))
            .chain(s.phase3.iter().map(|b| (b.eta, b.budget)));
        for (eta, budget) in etas {
            if !(eta > 0.0 && eta.is_finite() && budget > 0) {
                return Err(fail(format!("eta {eta}, budget {budget}")));
            }
        }
        if !(s.strength.c1 > 0.0 && s.strength.c1.is_finite()) {
            return Err(fail(format!("c1 = {}", s.strength.c1)));
        }
    }
    Ok((schedules.len(), "every step size and budget is positive".into()))
}

fn noise_backends(_: &VerifyHooks) -> Result<(usize, String)> {
    let inst = Arc::new(inst_spec(4, 2, 0.0, SpikeMode::Random, 1).build()?);
    let mut rng = seeding::rng(5);
    let f1 = unit_gaussian(&mut rng, 4);
    let probe = gaussian_vec(&mut rng, 4);
    let qq = dot(&probe, &probe);
    let n = 4000;
    let mut stats = Vec::new();
    for backend in [Backend::Explicit, Backend::Projected] {
        let mut oracle = RewardOracle::new(inst.clone(), NoiseConfig::new(NoiseKind::GaussianIid, 11, backend))?;
        let prep = oracle.prepare(0, &[&f1, &f1])?;
        let mut g = vec![0.0; 4];
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            oracle.gradient_into(&prep, i, &mut g)?;
            let x = dot(&g, &probe);
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let se_mean = (qq / n as f64).sqrt();
        let se_var = qq * (2.0 / n as f64).sqrt();
        if mean.abs() > 4.0 * se_mean || (var - qq).abs() > 4.0 * se_var {
            return Err(fail(format!("{backend:?}: mean {mean}, var {var}, expected var {qq}")));
        }
        stats.push(var);
    }
    Ok((2 * n as usize, format!("variances {:.3} / {:.3}, expected {qq:.3}", stats[0], stats[1])))
}

fn sga_stream(hooks: &VerifyHooks) -> Result<(usize, String)> {
    let inst = Arc::new(inst_spec(4, 4, 8.0, SpikeMode::Symmetric, 3).build()?);
    let layout = inst.layout();
    let mut oracle = RewardOracle::new(inst.clone(), NoiseConfig::gaussian(4))?;
    if hooks.inject_nan {
        oracle.noise_mut().inject_nan();
    }
    let mut rng = seeding::rng(6);
    let mut states: Vec<BlockState> = layout
        .blocks()
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let sig = layout.signal_matrix(j, inst.spikes());
            let w: Vec<f64> = sig.iter().map(|s| s + 0.3 * rng.gen::<f64>()).collect();
            BlockState::new(j, b, w)?.finalized()
        })
        .collect::<Result<_>>()?;
    let mut ctx = StreamContext::new(0, false);
    let plan = StepPlan::constant(1e-3, 500);
    for m in (0..states.len()).rev() {
        run_block_inner(&mut states, m, &plan, &mut oracle, &mut ctx)?;
    }
    for s in &states {
        if !s.is_unit(1e-9) {
            return Err(fail(format!("block {} ended with norm {}", s.index, s.frob_norm())));
        }
    }
    Ok((ctx.samples_used() as usize, "noisy stream stays finite and unit".into()))
}

fn power_vs_dense(_: &VerifyHooks) -> Result<(usize, String)> {
    let mut rng = seeding::rng(7);
    let n = 20;
    for i in 0..n {
        let a = nalgebra::DMatrix::from_fn(5, 5, |_, _| rng.gen::<f64>() - 0.5);
        let mut m = &a * a.transpose();
        m[(0, 0)] += 3.0;
        let p = top_eigvec_power(&m, 1e-12, 10_000, i)?;
        let d = top_eigvec_dense(&m)?;
        let c = p.dot(&d).abs();
        if (1.0 - c).abs() > 1e-8 {
            return Err(fail(format!("case {i}: |<power, dense>| = {c}")));
        }
    }
    Ok((n as usize, "power iteration matches the dense solver".into()))
}

fn state_size(_: &VerifyHooks) -> Result<(usize, String)> {
    let mut ratios = Vec::new();
    for d in [4usize, 8, 16] {
        let snap = PipelineSnapshot {
            block_sizes: vec![d * d, d * d],
            patterns: 16,
            phase12_iterates: vec![1, 1],
            phase3_iterates: vec![1, 1],
        };
        let (current, _) = audit_state_size(&snap);
        if current > 4 * 4 * 16 * (d * d) as u64 {
            return Err(fail(format!("d = {d}: {current} scalars")));
        }
        ratios.push(current as f64 / (d * d) as f64);
    }
    Ok((3, format!("scalars / d^2 = {:.2?}", ratios)))
}

fn small_run(seed: u64) -> RunConfig {
    let mut c = RunConfig::new(
        inst_spec(4, 4, 2.0, SpikeMode::Symmetric, 2),
        NoiseConfig::zero(),
        ScheduleSpec::new(ScheduleChoice::Oracle, 200),
        seed,
    );
    c.early_exit = true;
    c.parallel = false;
    c
}

fn noiseless_recovery(_: &VerifyHooks) -> Result<(usize, String)> {
    let out = run_mpsnsga(&small_run(1))?;
    let loss = out.report.loss.max_loss;
    if !(loss <= 1e-6) {
        return Err(fail(format!("max loss {loss:e}")));
    }
    if out.report.resources.passes != 1 {
        return Err(fail("more than one pass".into()));
    }
    Ok((1, format!("max loss {loss:e}")))
}

fn determinism(_: &VerifyHooks) -> Result<(usize, String)> {
    let mut c = small_run(3);
    c.instance = inst_spec(4, 3, 3.0, SpikeMode::PairedCorrelation { rho: 0.5 }, 8);
    c.noise = NoiseConfig::gaussian(5);
    c.schedule = ScheduleSpec { budget_cap: Some(200_000), ..ScheduleSpec::new(ScheduleChoice::Case2, 200) };
    c.early_exit = false;
    let a = serde_json::to_string(&run_mpsnsga(&c)?.report)?;
    c.parallel = true;
    let b = serde_json::to_string(&run_mpsnsga(&c)?.report)?;
    if a != b {
        return Err(fail("reports differ between identical runs".into()));
    }
    let inst = make_instance(4, &[3, 3, 3, 3], 1.0, SpikeMode::Random, 4)?;
    let again = make_instance(4, &[3, 3, 3, 3], 1.0, SpikeMode::Random, 4)?;
    if inst.spikes() != again.spikes() {
        return Err(fail("instances differ for one seed".into()));
    }
    Ok((2, "identical seeds give identical reports".into()))
}
