//! Normalized stochastic gradient ascent on one block at a time.
//!
//! For a block `W` with reward `R(W) = ⟨∇R, W⟩` (linear in `W`), the scaled
//! objective `‖W‖ R(W)` is 2-homogeneous and its gradient is
//! `G = (R/‖W‖) W + ‖W‖ ∇R`. One step is `W ← W + η G`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::layout::{BlockShape, Parity};
use crate::linalg::{dot, norm};
use crate::noise::RewardOracle;

/// Norm bounds outside which the iterate is rescaled to unit norm.
const RESCALE_HIGH: f64 = 1e100;
const RESCALE_LOW: f64 = 1e-100;

/// One block iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub is_vector: bool,
    w: Vec<f64>,
    frob_norm: f64,
    /// Diagnostic `α_m`, filled in instrumented runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<f64>,
}

impl BlockState {
    pub fn new(index: usize, shape: &BlockShape, w: Vec<f64>) -> Result<Self> {
        if w.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "block {index} expects {} entries, got {}",
                shape.len(),
                w.len()
            )));
        }
        let frob_norm = norm(&w);
        ensure_finite(frob_norm, "block initial value")?;
        Ok(BlockState {
            index,
            rows: shape.rows,
            cols: shape.cols,
            is_vector: shape.is_vector(),
            w,
            frob_norm,
            alignment: None,
        })
    }

    /// Row-major entries (a vector block is one row).
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn frob_norm(&self) -> f64 {
        self.frob_norm
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Same shape, new entries.
    pub fn with_w(&self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.w.len() {
            return Err(Error::Dimension("replacement has the wrong size".into()));
        }
        let frob_norm = norm(&w);
        Ok(BlockState { w, frob_norm, alignment: None, ..self.clone() })
    }

    /// Rescales to unit Frobenius norm.
    pub fn finalize(&mut self) -> Result<()> {
        if !(self.frob_norm > 0.0) || !self.frob_norm.is_finite() {
            return Err(Error::Degenerate(format!("block {} has norm {}", self.index, self.frob_norm)));
        }
        let n = self.frob_norm;
        for x in self.w.iter_mut() {
            *x /= n;
        }
        self.frob_norm = norm(&self.w);
        Ok(())
    }

    pub fn finalized(mut self) -> Result<Self> {
        self.finalize()?;
        Ok(self)
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.frob_norm - 1.0).abs() <= tol
    }

    /// `‖W − V‖_F`.
    pub fn distance(&self, other: &BlockState) -> f64 {
        self.w.iter().zip(&other.w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSign {
    #[default]
    Plus,
    Minus,
}

impl RewardSign {
    pub fn factor(self) -> f64 {
        match self {
            RewardSign::Plus => 1.0,
            RewardSign::Minus => -1.0,
        }
    }
}

/// Step size, number of steps, optional halving period and reward sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub eta: f64,
    pub budget: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_length: Option<u64>,
    #[serde(default)]
    pub reward_sign: RewardSign,
    /// Diagnostics only: stop once `|α| ≥` this value. Reads the true spikes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_alignment: Option<f64>,
}

impl StepPlan {
    pub fn constant(eta: f64, budget: u64) -> Self {
        StepPlan { eta, budget, decay_length: None, reward_sign: RewardSign::Plus, exit_alignment: None }
    }

    pub fn decaying(eta: f64, budget: u64, decay_length: u64) -> Self {
        StepPlan { decay_length: Some(decay_length), ..StepPlan::constant(eta, budget) }
    }

    pub fn with_sign(self, reward_sign: RewardSign) -> Self {
        StepPlan { reward_sign, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("step size must be positive and finite, got {}", self.eta)));
        }
        if let Some(td) = self.decay_length {
            if td == 0 || td > self.budget.max(1) {
                return Err(invalid(format!("decay length {td} must lie in 1..=budget {}", self.budget)));
            }
        }
        Ok(())
    }
}

/// `G = (R/‖W‖) W + ‖W‖ ∇R`.
pub fn scaled_gradient(state: &BlockState, reward_value: f64, reward_gradient: &[f64]) -> Result<Vec<f64>> {
    let n = state.frob_norm;
    if !(n > 0.0) {
        return Err(Error::Degenerate(format!("block {} has zero norm", state.index)));
    }
    if reward_gradient.len() != state.w.len() {
        return Err(Error::Dimension("gradient does not match block shape".into()));
    }
    let a = reward_value / n;
    Ok(state.w.iter().zip(reward_gradient).map(|(w, g)| a * w + n * g).collect())
}

/// `W + η G`, with the reward and gradient negated for [`RewardSign::Minus`].
pub fn normalized_step(
    state: &BlockState,
    plan: &StepPlan,
    reward_value: f64,
    reward_gradient: &[f64],
) -> Result<BlockState> {
    plan.validate()?;
    ensure_finite(reward_value, "reward")?;
    if reward_gradient.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("reward gradient".into()));
    }
    let s = plan.reward_sign.factor();
    let flipped: Vec<f64> = reward_gradient.iter().map(|g| s * g).collect();
    let g = scaled_gradient(state, s * reward_value, &flipped)?;
    let w: Vec<f64> = state.w.iter().zip(&g).map(|(w, g)| w + plan.eta * g).collect();
    let out = state.with_w(w)?;
    ensure_finite(out.frob_norm, "block norm")?;
    Ok(out)
}

/// Phase label written to traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTag {
    Phase1,
    Phase2,
    Phase3Plus,
    Phase3Minus,
    Search,
}

impl PhaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseTag::Phase1 => "phase1",
            PhaseTag::Phase2 => "phase2",
            PhaseTag::Phase3Plus => "phase3+",
            PhaseTag::Phase3Minus => "phase3-",
            PhaseTag::Search => "search",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub phase: PhaseTag,
    pub stage: usize,
    pub pattern: Option<usize>,
    pub block: usize,
    pub step: u64,
    /// Position in the stream's sample sequence.
    pub sample: u64,
    pub eta: f64,
    pub alpha: Option<f64>,
    pub frob_norm: f64,
    pub reward_value: f64,
}

/// Per-stream bookkeeping shared by consecutive inner loops.
#[derive(Debug, Clone)]
pub struct StreamContext {
    next_index: u64,
    /// Record a trace row every this many steps; 0 disables tracing.
    pub trace_stride: u64,
    /// Compute `α` (reads the true spikes).
    pub instrument: bool,
    pub phase: PhaseTag,
    pub stage: usize,
    pub pattern: Option<usize>,
    /// Stop once every block has `|α| ≥` this value.
    pub watch_all: Option<f64>,
    /// Samples consumed when `watch_all` first held.
    pub reached_at: Option<u64>,
    pub trace: Vec<TraceRow>,
}

impl Default for StreamContext {
    fn default() -> Self {
        StreamContext::new(0, false)
    }
}

impl StreamContext {
    pub fn new(trace_stride: u64, instrument: bool) -> Self {
        StreamContext {
            next_index: 0,
            trace_stride,
            instrument,
            phase: PhaseTag::Phase1,
            stage: 0,
            pattern: None,
            watch_all: None,
            reached_at: None,
            trace: Vec::new(),
        }
    }

    /// Samples consumed so far.
    pub fn samples_used(&self) -> u64 {
        self.next_index
    }

    /// Claims the next sample index.
    pub fn take_sample(&mut self) -> u64 {
        let i = self.next_index;
        self.next_index += 1;
        i
    }
}

/// What happened in one inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRun {
    pub samples: u64,
    pub exited_early: bool,
    /// `watch_all` fired; the caller should stop the stream.
    pub watch_fired: bool,
}

/// Unit-norm views of every block, for use as frozen factors.
fn frozen_factors(states: &[BlockState], m: usize) -> Result<Vec<&[f64]>> {
    for (i, s) in states.iter().enumerate() {
        if i != m && !s.is_unit(1e-9) {
            return Err(invalid(format!("frozen block {i} is not unit norm ({})", s.frob_norm)));
        }
    }
    Ok(states.iter().map(|s| s.w.as_slice()).collect())
}

/// Runs `plan.budget` normalized steps on block `m`, then normalizes it.
///
/// Every other block stays frozen and must already be unit norm.
pub fn run_block_inner(
    states: &mut [BlockState],
    m: usize,
    plan: &StepPlan,
    oracle: &mut RewardOracle,
    ctx: &mut StreamContext,
) -> Result<BlockRun> {
    if m >= states.len() {
        return Err(Error::Dimension(format!("no block {m}")));
    }
    plan.validate()?;
    let prep = {
        let factors = frozen_factors(states, m)?;
        oracle.prepare(m, &factors)?
    };
    let other_alignments: Vec<f64> = if ctx.watch_all.is_some() {
        states
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != m)
            .map(|(i, s)| dot(s.w(), oracle.signal(i)).abs())
            .collect()
    } else {
        Vec::new()
    };
    let others_ok = ctx
        .watch_all
        .map(|thr| other_alignments.iter().all(|&a| a >= thr))
        .unwrap_or(false);
    let track_alpha = ctx.instrument || plan.exit_alignment.is_some() || ctx.watch_all.is_some();
    let signal = oracle.signal(m).to_vec();

    let state = &mut states[m];
    let sign = plan.reward_sign.factor();
    let mut eta = plan.eta;
    let mut grad = vec![0.0; state.w.len()];
    let mut nrm = state.frob_norm;
    if !(nrm > 0.0) {
        return Err(Error::Degenerate(format!("block {m} has zero norm")));
    }
    let mut run = BlockRun { samples: 0, exited_early: false, watch_fired: false };
    for t in 0..plan.budget {
        if let Some(td) = plan.decay_length {
            if t > 0 && t % td == 0 {
                eta *= 0.5;
            }
        }
        let index = ctx.take_sample();
        oracle.gradient_into(&prep, index, &mut grad)?;
        run.samples += 1;
        let r = sign * dot(&grad, &state.w);
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reward at block {m}, step {t}")));
        }
        let a = 1.0 + eta * r / nrm;
        let b = eta * nrm * sign;
        for (w, g) in state.w.iter_mut().zip(&grad) {
            *w = a * *w + b * g;
        }
        nrm = norm(&state.w);
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(Error::NonFinite(format!("iterate norm at block {m}, step {t}")));
        }
        if !(RESCALE_LOW..=RESCALE_HIGH).contains(&nrm) {
            for w in state.w.iter_mut() {
                *w /= nrm;
            }
            nrm = norm(&state.w);
        }
        let alpha = if track_alpha { Some(dot(&state.w, &signal) / nrm) } else { None };
        let step = t + 1;
        if ctx.trace_stride > 0 && (step % ctx.trace_stride == 0 || step == plan.budget) {
            ctx.trace.push(TraceRow {
                phase: ctx.phase,
                stage: ctx.stage,
                pattern: ctx.pattern,
                block: m,
                step,
                sample: index,
                eta,
                alpha: if ctx.instrument { alpha } else { None },
                frob_norm: nrm,
                reward_value: r,
            });
        }
        if let (Some(thr), Some(al)) = (ctx.watch_all, alpha) {
            if others_ok && al.abs() >= thr {
                ctx.reached_at = Some(ctx.samples_used());
                run.watch_fired = true;
                break;
            }
        }
        if let (Some(thr), Some(al)) = (plan.exit_alignment, alpha) {
            if al.abs() >= thr {
                run.exited_early = true;
                break;
            }
        }
    }
    state.frob_norm = nrm;
    state.finalize()?;
    if track_alpha {
        state.alignment = Some(dot(&state.w, &signal));
    }
    if let Some(thr) = ctx.watch_all {
        if !run.watch_fired && others_ok && state.alignment.is_some_and(|a| a.abs() >= thr) {
            ctx.reached_at = Some(ctx.samples_used());
            run.watch_fired = true;
        }
    }
    Ok(run)
}

/// One sweep over all blocks in descending index order.
///
/// Stops early only if a `watch_all` condition fires.
pub fn sequential_sweep(
    states: &mut [BlockState],
    plans: &[StepPlan],
    parity: Parity,
    oracle: &mut RewardOracle,
    ctx: &mut StreamContext,
) -> Result<bool> {
    let layout = oracle.layout();
    if layout.parity() != parity {
        return Err(Error::Parity(format!(
            "sweep requested in {parity:?} mode for order {}",
            layout.order()
        )));
    }
    if plans.len() != states.len() || states.len() != layout.num_blocks() {
        return Err(invalid(format!(
            "{} plans for {} blocks",
            plans.len(),
            layout.num_blocks()
        )));
    }
    for m in (0..states.len()).rev() {
        let run = run_block_inner(states, m, &plans[m], oracle, ctx)?;
        if run.watch_fired {
            return Ok(true);
        }
    }
    Ok(false)
}
