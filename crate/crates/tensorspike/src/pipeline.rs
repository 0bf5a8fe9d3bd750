//! The full run: sign-pattern initialization, Phases I–II for every pattern,
//! selection, Phase III and extraction.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout::{BlockLayout, Parity};
use crate::linalg::{embedded_identity, unit_gaussian};
use crate::model::{recovery_loss, InstanceSpec, RecoveryLoss, SignalInstance};
use crate::noise::{NoiseConfig, RewardOracle};
use crate::resources::{audit_state_size, PipelineSnapshot, ResourceLedger};
use crate::schedule::{adaptive_schedule, oracle_schedule, AdaptiveCase, Constants, PhaseSchedule, ScheduleMode};
use crate::search::{reference_search, SearchOutcome};
use crate::seeding::{self, tags};
use crate::sga::{
    run_block_inner, sequential_sweep, BlockState, PhaseTag, RewardSign, StepPlan, StreamContext, TraceRow,
};
use crate::spectral::{extract_block, Extraction};

/// Signs of the deterministic and random parts of each block's start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitPattern {
    pub tau: usize,
    /// `(deterministic, random)` per block; the vector block only uses the second.
    pub signs: Vec<(i8, i8)>,
}

impl InitPattern {
    /// Pattern `tau` out of `2^k̄`. Bit `2j` flips block `j`'s deterministic
    /// part and bit `2j+1` its random part; the vector block uses bit 0 only.
    pub fn from_index(layout: &BlockLayout, tau: usize) -> Result<Self> {
        let count = pattern_count(layout);
        if tau >= count {
            return Err(invalid(format!("pattern {tau} out of range for {count} patterns")));
        }
        let sign = |bit: usize| if (tau >> bit) & 1 == 1 { -1 } else { 1 };
        let mut signs = Vec::with_capacity(layout.num_blocks());
        let mut bit = 0;
        for b in layout.blocks() {
            if b.is_vector() {
                signs.push((1, sign(bit)));
                bit += 1;
            } else {
                signs.push((sign(bit), sign(bit + 1)));
                bit += 2;
            }
        }
        Ok(InitPattern { tau, signs })
    }
}

/// `4^{k̄/2}` for even order, `2^{k̄}` for odd order (both `2^{k̄}`).
pub fn pattern_count(layout: &BlockLayout) -> usize {
    1usize << layout.order()
}

/// Starting blocks for a sign pattern. The random directions depend only on
/// `seed`, so all patterns share them.
///
/// Matrix block: `±d^{-1/2}[I 0]/2 ± ū v̄ᵀ/2`. Vector block: `±v̄`.
pub fn build_initialization(pattern: &InitPattern, layout: &BlockLayout, seed: u64) -> Result<Vec<BlockState>> {
    if pattern.signs.len() != layout.num_blocks() {
        return Err(Error::Parity(format!(
            "pattern has {} blocks, layout has {}",
            pattern.signs.len(),
            layout.num_blocks()
        )));
    }
    let mut rng = seeding::rng(seed);
    let mut out = Vec::with_capacity(layout.num_blocks());
    for (j, (b, &(sd, sr))) in layout.blocks().iter().zip(&pattern.signs).enumerate() {
        let w = if b.is_vector() {
            let v = unit_gaussian(&mut rng, b.cols);
            v.into_iter().map(|x| sr as f64 * x).collect()
        } else {
            let left = unit_gaussian(&mut rng, b.rows);
            let right = unit_gaussian(&mut rng, b.cols);
            let c = sd as f64 * 0.5 / (b.rows as f64).sqrt();
            let mut w: Vec<f64> = embedded_identity(b.rows, b.cols).into_iter().map(|x| c * x).collect();
            for (i, l) in left.iter().enumerate() {
                for (k, r) in right.iter().enumerate() {
                    w[i * b.cols + k] += sr as f64 * 0.5 * l * r;
                }
            }
            w
        };
        out.push(BlockState::new(j, b, w)?);
    }
    Ok(out)
}

/// How the step sizes and budgets are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum ScheduleChoice {
    /// Uses the true pair correlations.
    Oracle,
    Case1 { c3: f64 },
    Case2,
    /// Runs the reference search first; Case I if it accepts, Case II if not.
    Auto { kappa: f64 },
}

fn default_t3() -> u64 {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScheduleSpec", into = "RawScheduleSpec")]
pub struct ScheduleSpec {
    pub choice: ScheduleChoice,
    /// Phase III budget per block.
    pub t3: u64,
    /// Signal strength assumed by the schedule; defaults to the instance's.
    pub lambda_hint: Option<f64>,
    /// Declared parity; must match the order when present.
    pub parity: Option<Parity>,
    /// Shrink Phase I and II budgets so the whole run uses at most this many samples.
    pub budget_cap: Option<u64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    Oracle,
    Case1,
    Case2,
    Auto,
}

/// On-disk form of `ScheduleSpec`: the mode and its parameter sit next to the
/// other keys.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduleSpec {
    mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(default = "default_t3")]
    t3: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda_hint: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parity: Option<Parity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget_cap: Option<u64>,
}

impl TryFrom<RawScheduleSpec> for ScheduleSpec {
    type Error = String;

    fn try_from(r: RawScheduleSpec) -> std::result::Result<Self, String> {
        let choice = match (r.mode, r.c3, r.kappa) {
            (Mode::Oracle, None, None) => ScheduleChoice::Oracle,
            (Mode::Case2, None, None) => ScheduleChoice::Case2,
            (Mode::Case1, Some(c3), None) => ScheduleChoice::Case1 { c3 },
            (Mode::Auto, None, Some(kappa)) => ScheduleChoice::Auto { kappa },
            (Mode::Case1, None, _) => return Err("mode case1 needs c3".into()),
            (Mode::Auto, _, None) => return Err("mode auto needs kappa".into()),
            (m, _, _) => return Err(format!("unexpected c3 or kappa for mode {m:?}")),
        };
        Ok(ScheduleSpec { choice, t3: r.t3, lambda_hint: r.lambda_hint, parity: r.parity, budget_cap: r.budget_cap })
    }
}

impl From<ScheduleSpec> for RawScheduleSpec {
    fn from(s: ScheduleSpec) -> Self {
        let (mode, c3, kappa) = match s.choice {
            ScheduleChoice::Oracle => (Mode::Oracle, None, None),
            ScheduleChoice::Case2 => (Mode::Case2, None, None),
            ScheduleChoice::Case1 { c3 } => (Mode::Case1, Some(c3), None),
            ScheduleChoice::Auto { kappa } => (Mode::Auto, None, Some(kappa)),
        };
        RawScheduleSpec { mode, c3, kappa, t3: s.t3, lambda_hint: s.lambda_hint, parity: s.parity, budget_cap: s.budget_cap }
    }
}

impl ScheduleSpec {
    pub fn new(choice: ScheduleChoice, t3: u64) -> Self {
        ScheduleSpec { choice, t3, lambda_hint: None, parity: None, budget_cap: None }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(x: &u64) -> bool {
    *x == 0
}

/// A complete, replayable run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: InstanceSpec,
    pub noise: NoiseConfig,
    pub schedule: ScheduleSpec,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Seeds the shared random directions of the initialization.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub trace_stride: u64,
    /// Record `α` (reads the true spikes).
    #[serde(default, skip_serializing_if = "is_false")]
    pub instrument: bool,
    /// End a stage once `|α|` reaches its upper threshold (reads the true spikes).
    #[serde(default, skip_serializing_if = "is_false")]
    pub early_exit: bool,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub phase3: bool,
    /// Abort once any stream draws more than this many samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_cap: Option<u64>,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub parallel: bool,
    #[serde(default)]
    pub extraction: Extraction,
    #[serde(default)]
    pub constants: Constants,
}

impl RunConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(instance: InstanceSpec, noise: NoiseConfig, schedule: ScheduleSpec, seed: u64) -> Self {
        RunConfig {
            instance,
            noise,
            schedule,
            delta: default_delta(),
            seed,
            trace_stride: 0,
            instrument: false,
            early_exit: false,
            phase3: true,
            sample_cap: None,
            parallel: true,
            extraction: Extraction::default(),
            constants: Constants::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(invalid(format!("delta must lie in (0, 1/2), got {}", self.delta)));
        }
        if self.instance.dims.len() != self.instance.order {
            return Err(Error::Dimension(format!(
                "order {} but {} dims",
                self.instance.order,
                self.instance.dims.len()
            )));
        }
        if let Some(p) = self.schedule.parity {
            if p != Parity::of(self.instance.order) {
                return Err(Error::Parity(format!(
                    "{p:?} schedule declared for order {}",
                    self.instance.order
                )));
            }
        }
        let order = self.instance.order;
        if (order % 2 == 0 && order < 4) || (order % 2 == 1 && order < 5) {
            return Err(Error::Parity(format!("no schedule for order {order}")));
        }
        if let Some(l) = self.schedule.lambda_hint {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid(format!("lambda_hint must be positive, got {l}")));
            }
        }
        if self.schedule.t3 < 2 {
            return Err(invalid("t3 must be at least 2"));
        }
        self.constants.validate()
    }
}

/// Seeds recorded for replay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub run: u64,
    pub instance: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub order: usize,
    pub dims: Vec<usize>,
    pub snr: f64,
    pub schedule_mode: ScheduleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchOutcome>,
    pub tau_star: usize,
    pub pattern_scores: Vec<f64>,
    /// Which signed Phase III run each block kept; empty when Phase III is off.
    pub phase3_choices: Vec<RewardSign>,
    pub estimates: Vec<Vec<f64>>,
    pub loss: RecoveryLoss,
    /// `|⟨W_m, v uᵀ⟩|` of the final blocks.
    pub final_alignments: Vec<f64>,
    pub resources: ResourceLedger,
    pub early_exit: bool,
    pub seeds: SeedRecord,
}

/// A run's report, schedule and trace.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub schedule: PhaseSchedule,
    pub trace: Vec<TraceRow>,
}

/// Instance, schedule and (if it ran) search outcome for a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub instance: Arc<SignalInstance>,
    pub schedule: PhaseSchedule,
    pub search: Option<SearchOutcome>,
}

/// Builds the instance and schedule, running the reference search if asked.
pub fn prepare_run(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let instance = Arc::new(config.instance.build()?);
    let dims = instance.dims().to_vec();
    let lambda = config.schedule.lambda_hint.unwrap_or(instance.snr());
    let t3 = config.schedule.t3;
    let consts = &config.constants;
    let mut search = None;
    let mut schedule = match config.schedule.choice {
        ScheduleChoice::Oracle => {
            let inst = if config.schedule.lambda_hint.is_some() { instance.with_snr(lambda)? } else { (*instance).clone() };
            oracle_schedule(&inst, config.delta, t3, consts)?
        }
        ScheduleChoice::Case1 { c3 } => {
            adaptive_schedule(AdaptiveCase::Case1 { c3 }, &dims, lambda, config.delta, t3, consts)?
        }
        ScheduleChoice::Case2 => adaptive_schedule(AdaptiveCase::Case2, &dims, lambda, config.delta, t3, consts)?,
        ScheduleChoice::Auto { kappa } => {
            let outcome = reference_search(
                instance.clone(),
                config.noise.derived(tags::SEARCH),
                kappa,
                Parity::of(dims.len()),
                consts.n1_scale,
                seeding::derive_seed(config.seed, tags::SEARCH),
                config.sample_cap,
            )?;
            let case = match outcome.c3 {
                Some(c3) => AdaptiveCase::Case1 { c3 },
                None => AdaptiveCase::Case2,
            };
            search = Some(outcome);
            adaptive_schedule(case, &dims, lambda, config.delta, t3, consts)?
        }
    };
    if let Some(cap) = config.schedule.budget_cap {
        schedule.cap_total_samples(cap)?;
    }
    schedule.validate()?;
    if let Some(cap) = config.sample_cap {
        if !config.early_exit && schedule.total_samples() > cap {
            return Err(Error::SampleCap { cap });
        }
    }
    Ok(Prepared { instance, schedule, search })
}

/// Knobs shared by every pattern stream.
struct StreamSettings<'a> {
    config: &'a RunConfig,
    instance: Arc<SignalInstance>,
    schedule: &'a PhaseSchedule,
    layout: BlockLayout,
    watch_all: Option<f64>,
}

struct PatternResult {
    states: Vec<BlockState>,
    score: f64,
    samples: u64,
    trace: Vec<TraceRow>,
    reached_at: Option<u64>,
}

impl StreamSettings<'_> {
    fn oracle(&self, stream: u64) -> Result<RewardOracle> {
        let mut oracle = RewardOracle::new(self.instance.clone(), self.config.noise.derived(stream))?;
        oracle.noise_mut().set_sample_cap(self.config.sample_cap);
        if self.config.noise.clip_at_sqrt_c1 {
            oracle.noise_mut().set_clip(Some(self.schedule.strength.c1.sqrt()));
        }
        Ok(oracle)
    }

    fn phase1_plans(&self, stage: usize) -> Vec<StepPlan> {
        let target = self.phase2_target();
        self.schedule.phase1[stage]
            .blocks
            .iter()
            .map(|b| StepPlan {
                exit_alignment: self.config.early_exit.then(|| b.ub.min(target)),
                ..StepPlan::constant(b.eta, b.budget)
            })
            .collect()
    }

    fn phase2_target(&self) -> f64 {
        let eps = self.schedule.phase2.first().map(|b| b.epsilon_tilde).unwrap_or(0.0);
        1.0 - eps / 2.0
    }

    fn phase2_plans(&self) -> Vec<StepPlan> {
        let target = self.phase2_target();
        self.schedule
            .phase2
            .iter()
            .map(|b| StepPlan {
                exit_alignment: self.config.early_exit.then_some(target),
                ..StepPlan::constant(b.eta, b.budget)
            })
            .collect()
    }

    fn run_pattern(&self, tau: usize, select: bool) -> Result<PatternResult> {
        let pattern = InitPattern::from_index(&self.layout, tau)?;
        let mut states = build_initialization(&pattern, &self.layout, seeding::derive_seed(self.config.seed, tags::INIT))?;
        for s in states.iter_mut() {
            s.finalize()?;
        }
        let mut oracle = self.oracle(tau as u64)?;
        let mut ctx = StreamContext::new(self.config.trace_stride, self.config.instrument);
        ctx.pattern = Some(tau);
        ctx.watch_all = self.watch_all;
        let parity = self.layout.parity();
        let mut stopped = false;
        for stage in 0..self.schedule.phase1.len() {
            ctx.phase = PhaseTag::Phase1;
            ctx.stage = stage + 1;
            if sequential_sweep(&mut states, &self.phase1_plans(stage), parity, &mut oracle, &mut ctx)? {
                stopped = true;
                break;
            }
        }
        if !stopped {
            ctx.phase = PhaseTag::Phase2;
            ctx.stage = 0;
            sequential_sweep(&mut states, &self.phase2_plans(), parity, &mut oracle, &mut ctx)?;
        }
        let score = if select && !stopped {
            selection_score(&states, &mut oracle, &mut ctx, self.schedule.n0)?
        } else {
            0.0
        };
        Ok(PatternResult { samples: ctx.samples_used(), reached_at: ctx.reached_at, trace: ctx.trace, states, score })
    }

    fn run_patterns(&self, select: bool) -> Result<Vec<PatternResult>> {
        let count = pattern_count(&self.layout);
        if self.config.parallel {
            (0..count).into_par_iter().map(|tau| self.run_pattern(tau, select)).collect()
        } else {
            (0..count).map(|tau| self.run_pattern(tau, select)).collect()
        }
    }
}

/// Mean of `⟨⊗_m W_m, T⟩` over `n0` fresh samples, read off the last block's gradient.
pub fn selection_score(
    states: &[BlockState],
    oracle: &mut RewardOracle,
    ctx: &mut StreamContext,
    n0: u64,
) -> Result<f64> {
    if states.iter().any(|s| !s.is_unit(1e-9)) {
        return Err(invalid("selection needs unit-norm blocks"));
    }
    if n0 == 0 {
        return Err(invalid("n0 must be at least 1"));
    }
    let last = states.len() - 1;
    let factors: Vec<&[f64]> = states.iter().map(|s| s.w()).collect();
    let prep = oracle.prepare(last, &factors)?;
    let mut grad = vec![0.0; states[last].len()];
    let mut sum = 0.0;
    for _ in 0..n0 {
        let index = ctx.take_sample();
        oracle.gradient_into(&prep, index, &mut grad)?;
        sum += crate::linalg::dot(&grad, states[last].w());
    }
    let mean = sum / n0 as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("selection score".into()));
    }
    Ok(mean)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Scores every candidate on one oracle stream and returns the winner.
pub fn select_initialization(
    candidates: &[Vec<BlockState>],
    oracle: &mut RewardOracle,
    ctx: &mut StreamContext,
    n0: u64,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(invalid("no candidates to select from"));
    }
    let scores = candidates
        .iter()
        .map(|c| selection_score(c, oracle, ctx, n0))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax_lowest(&scores))
}

/// Phase III from `start`: for each block (descending), run the decaying
/// schedule once with `+R` and once with `−R` and keep the result closer
/// to the start.
pub fn phase_three(
    start: &[BlockState],
    schedule: &PhaseSchedule,
    plus: &mut RewardOracle,
    minus: &mut RewardOracle,
    ctx_plus: &mut StreamContext,
    ctx_minus: &mut StreamContext,
) -> Result<(Vec<BlockState>, Vec<RewardSign>)> {
    let nb = start.len();
    let mut current = start.to_vec();
    let mut choices = vec![RewardSign::Plus; nb];
    ctx_plus.phase = PhaseTag::Phase3Plus;
    ctx_minus.phase = PhaseTag::Phase3Minus;
    for m in (0..nb).rev() {
        let p3 = &schedule.phase3[m];
        let plan = StepPlan::decaying(p3.eta, p3.budget, p3.decay_length);
        let mut run_plus = current.clone();
        run_plus[m] = start[m].clone();
        run_block_inner(&mut run_plus, m, &plan, plus, ctx_plus)?;
        let mut run_minus = current.clone();
        run_minus[m] = start[m].clone();
        run_block_inner(&mut run_minus, m, &plan.with_sign(RewardSign::Minus), minus, ctx_minus)?;
        let dp = run_plus[m].distance(&start[m]);
        let dm = run_minus[m].distance(&start[m]);
        if dp <= dm {
            current[m] = run_plus[m].clone();
        } else {
            current[m] = run_minus[m].clone();
            choices[m] = RewardSign::Minus;
        }
    }
    Ok((current, choices))
}

/// Unit vectors for every spike, in spike order.
pub fn extract_estimates(states: &[BlockState], layout: &BlockLayout, method: Extraction, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::new(); layout.order()];
    for (j, (s, b)) in states.iter().zip(layout.blocks()).enumerate() {
        let (left, right) = extract_block(s, method, seeding::derive_seed(seed, j as u64))?;
        if let Some(l) = b.left {
            out[l] = left.iter().copied().collect();
        }
        out[b.right] = right.iter().copied().collect();
    }
    Ok(out)
}

/// Runs the whole pipeline.
pub fn run_mpsnsga(config: &RunConfig) -> Result<RunOutput> {
    let prepared = prepare_run(config)?;
    run_prepared(config, prepared)
}

/// Runs the pipeline with an already built instance and schedule.
pub fn run_prepared(config: &RunConfig, prepared: Prepared) -> Result<RunOutput> {
    let Prepared { instance, schedule, search } = prepared;
    let layout = instance.layout();
    let settings = StreamSettings {
        config,
        instance: instance.clone(),
        schedule: &schedule,
        layout: layout.clone(),
        watch_all: None,
    };
    let results = settings.run_patterns(true)?;

    let mut ledger = ResourceLedger::new();
    let mut trace = Vec::new();
    let mut scores = Vec::with_capacity(results.len());
    for r in &results {
        ledger.charge_sample(r.samples);
        scores.push(r.score);
    }
    let tau_star = argmax_lowest(&scores);
    let mut results = results;
    for r in results.iter_mut() {
        trace.append(&mut r.trace);
    }
    let selected = std::mem::take(&mut results[tau_star].states);

    let (final_states, choices) = if config.phase3 {
        let mut plus = settings.oracle(tags::PHASE3_PLUS)?;
        let mut minus = settings.oracle(tags::PHASE3_MINUS)?;
        let mut ctx_plus = StreamContext::new(config.trace_stride, config.instrument);
        let mut ctx_minus = StreamContext::new(config.trace_stride, config.instrument);
        let out = phase_three(&selected, &schedule, &mut plus, &mut minus, &mut ctx_plus, &mut ctx_minus)?;
        ledger.charge_sample(ctx_plus.samples_used() + ctx_minus.samples_used());
        trace.append(&mut ctx_plus.trace);
        trace.append(&mut ctx_minus.trace);
        out
    } else {
        (selected, Vec::new())
    };

    let estimates = extract_estimates(&final_states, &layout, config.extraction, seeding::derive_seed(config.seed, tags::SPECTRAL))?;
    let loss = recovery_loss(&estimates, &instance)?;
    let final_alignments = final_states
        .iter()
        .enumerate()
        .map(|(j, s)| crate::linalg::dot(s.w(), &layout.signal_matrix(j, instance.spikes())).abs())
        .collect();

    if let Some(s) = &search {
        ledger.search_samples = s.samples;
    }
    let snapshot = snapshot_for(&schedule, &layout, config.phase3);
    let (current, all_iterates) = audit_state_size(&snapshot);
    ledger.state_scalars_current = current;
    ledger.state_scalars_all_iterates = all_iterates;

    let report = RunReport {
        format: crate::FORMAT_TAG.to_string(),
        order: instance.order(),
        dims: instance.dims().to_vec(),
        snr: instance.snr(),
        schedule_mode: schedule.strength.mode,
        search,
        tau_star,
        pattern_scores: scores,
        phase3_choices: choices,
        estimates,
        loss,
        final_alignments,
        resources: ledger,
        early_exit: config.early_exit,
        seeds: SeedRecord { run: config.seed, instance: config.instance.seed, noise: config.noise.seed },
    };
    Ok(RunOutput { report, schedule, trace })
}

/// Memory layout of a run with this schedule.
pub fn snapshot_for(schedule: &PhaseSchedule, layout: &BlockLayout, phase3: bool) -> PipelineSnapshot {
    let nb = layout.num_blocks();
    let phase12_iterates = (0..nb)
        .map(|m| {
            schedule.phase1.iter().map(|s| s.blocks[m].budget).sum::<u64>() + schedule.phase2[m].budget
        })
        .collect();
    PipelineSnapshot {
        block_sizes: layout.blocks().iter().map(|b| b.len()).collect(),
        patterns: pattern_count(layout) as u64,
        phase12_iterates,
        phase3_iterates: if phase3 { schedule.phase3.iter().map(|b| b.budget).collect() } else { Vec::new() },
    }
}

/// For each pattern, the number of samples its Phase I–II stream consumed
/// before every block reached `|α| ≥ threshold` (`None` if it never did).
/// Reads the true spikes; the streams stop as soon as the condition holds.
pub fn samples_to_alignment(config: &RunConfig, prepared: &Prepared, threshold: f64) -> Result<Vec<Option<u64>>> {
    let settings = StreamSettings {
        config,
        instance: prepared.instance.clone(),
        schedule: &prepared.schedule,
        layout: prepared.instance.layout(),
        watch_all: Some(threshold),
    };
    Ok(settings.run_patterns(false)?.into_iter().map(|r| r.reached_at).collect())
}

/// Median with `None` ranked above every value; `None` if the median is.
pub fn median_samples(values: &[Option<u64>]) -> Option<u64> {
    let mut v: Vec<u64> = values.iter().map(|x| x.unwrap_or(u64::MAX)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let mid = v[(v.len() - 1) / 2];
    (mid != u64::MAX).then_some(mid)
}
