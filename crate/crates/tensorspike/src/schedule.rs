//! Step sizes, budgets and stage thresholds for the three phases.
//!
//! Two families: the oracle schedule, which reads the true pair correlations,
//! and the adaptive schedules, which only use dimensions, `λ`, `c₀` and (Case
//! I) a reference level `c₃` found by [`crate::search::reference_search`].

use std::f64::consts::E;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{invalid, Error, Result};
use crate::layout::{BlockLayout, Parity};
use crate::model::{correlation, SignalInstance};
use crate::noise::noise_bound_c1;

/// Tunable leading constants. Defaults are the most explicit values the
/// analysis gives; everything here can be overridden from the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Leading constant of every budget `T`.
    pub c_t: f64,
    /// Multiplier on the Phase I step-size prefactor `1/(c₂ h*²)`.
    pub phase1_eta_scale: f64,
    /// Multiplier on the Phase II step-size prefactor `1/c₂`.
    pub phase2_eta_scale: f64,
    /// Replaces the default `c₂ = k̄ log(k̄ d_k̄ / δ)`.
    pub c2: Option<f64>,
    /// Multiplier on `c₁` (used only for reporting and optional clipping).
    pub c1_scale: f64,
    /// `δ′` in `c₁`; defaults to `δ`.
    pub delta_prime: Option<f64>,
    /// Phase II accuracy `ε̃`; defaults to `1/k̄`.
    pub epsilon_tilde: Option<f64>,
    pub epsilon_hat: f64,
    /// Selection samples per sign pattern.
    pub n0: u64,
    /// Leading constant of the reference-search sample sizes.
    pub n1_scale: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            c_t: 32.0,
            phase1_eta_scale: 1.0,
            phase2_eta_scale: 1.0,
            c2: None,
            c1_scale: 1.0,
            delta_prime: None,
            epsilon_tilde: None,
            epsilon_hat: 0.7,
            n0: 64,
            n1_scale: 16.0,
        }
    }
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_t", self.c_t),
            ("phase1_eta_scale", self.phase1_eta_scale),
            ("phase2_eta_scale", self.phase2_eta_scale),
            ("c1_scale", self.c1_scale),
            ("epsilon_hat", self.epsilon_hat),
            ("n1_scale", self.n1_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("constant {name} must be positive, got {v}")));
            }
        }
        if let Some(c2) = self.c2 {
            if !(c2 > 0.0 && c2.is_finite()) {
                return Err(invalid(format!("constant c2 must be positive, got {c2}")));
            }
        }
        if let Some(e) = self.epsilon_tilde {
            if !(e > 0.0 && e < 1.0) {
                return Err(invalid(format!("epsilon_tilde must lie in (0, 1), got {e}")));
            }
        }
        if let Some(d) = self.delta_prime {
            if !(d > 0.0 && d < 1.0) {
                return Err(invalid(format!("delta_prime must lie in (0, 1), got {d}")));
            }
        }
        if self.n0 == 0 {
            return Err(invalid("n0 must be at least 1"));
        }
        Ok(())
    }
}

/// CDF of Student's t with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t by bisection, absolute tolerance `1e-10`.
pub fn student_t_quantile(dof: f64, p: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(invalid(format!("degrees of freedom must be positive, got {dof}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("quantile level must lie in (0, 1), got {p}")));
    }
    if p < 0.5 {
        return Ok(-student_t_quantile(dof, 1.0 - p)?);
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, dof) < p {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(invalid("quantile level too close to 1"));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `min_n t²(1 + t/√d_n)⁻²` with `t` the `level` quantile on `d_n − 1` dof.
pub fn c0_at_level(dims: &[usize], level: f64) -> Result<f64> {
    if dims.is_empty() || dims.iter().any(|&d| d < 2) {
        return Err(invalid("c0 needs every dimension to be at least 2"));
    }
    let mut best = f64::INFINITY;
    for &d in dims {
        let t = student_t_quantile((d - 1) as f64, level)?;
        let c = t * t / (1.0 + t / (d as f64).sqrt()).powi(2);
        best = best.min(c);
    }
    Ok(best)
}

/// `c₀` at quantile level `(1 + δ/order)/2`.
pub fn compute_c0(dims: &[usize], order: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if order == 0 {
        return Err(invalid("order must be positive"));
    }
    c0_at_level(dims, (1.0 + delta / order as f64) / 2.0)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(invalid(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    Ok(())
}

/// `γ_m` from the pair correlations of each block.
///
/// Matrix blocks: `|Cor|/P^{1/4} + c₀/P^{1/2}` with `P = rows·cols`. The
/// odd-order vector block uses `v₀ = 0`, `d₀ = c₀^{1/2}`, which leaves
/// `c₀ / (c₀^{1/2} d₁)^{1/2}`.
pub fn compute_gamma(layout: &BlockLayout, correlations: &[f64], c0: f64) -> Result<Vec<f64>> {
    if !(c0 > 0.0) {
        return Err(invalid(format!("c0 must be positive, got {c0}")));
    }
    if correlations.len() != layout.num_blocks() {
        return Err(Error::Dimension(format!(
            "{} correlations for {} blocks",
            correlations.len(),
            layout.num_blocks()
        )));
    }
    Ok(layout
        .blocks()
        .iter()
        .zip(correlations)
        .map(|(b, &cor)| {
            if b.is_vector() {
                c0 / (c0.sqrt() * b.cols as f64).sqrt()
            } else {
                let p = b.len() as f64;
                cor.abs() / p.powf(0.25) + c0 / p.sqrt()
            }
        })
        .collect())
}

/// True pair correlations per block (0 for the vector block).
pub fn block_correlations(instance: &SignalInstance) -> Vec<f64> {
    let layout = instance.layout();
    layout
        .blocks()
        .iter()
        .map(|b| match b.left {
            Some(l) => correlation(instance.spike(l), instance.spike(b.right)).expect("dims sorted"),
            None => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ScheduleMode {
    Oracle,
    AdaptiveCase1 { c3: f64 },
    AdaptiveCase2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveCase {
    Case1 { c3: f64 },
    Case2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthParams {
    pub mode: ScheduleMode,
    /// `γ_m`, or its estimate `γ̃_m` in adaptive mode.
    pub gamma: Vec<f64>,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Growth factor of the main stage ladder, per block.
    pub zeta: Vec<f64>,
    pub h_star: usize,
    /// Length of the second ladder (adaptive Case I only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_star_second: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ladder {
    Main,
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBlock {
    pub eta: f64,
    pub budget: u64,
    pub lb: f64,
    pub ub: f64,
    pub zeta: f64,
    /// Effective signal strength assumed for the block at this stage.
    pub lambda_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub ladder: Ladder,
    pub h: usize,
    pub blocks: Vec<StageBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase2Block {
    pub eta: f64,
    pub budget: u64,
    pub lambda_eff: f64,
    pub epsilon_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase3Block {
    pub eta: f64,
    pub budget: u64,
    pub decay_length: u64,
    pub epsilon_hat: f64,
}

/// Everything the pipeline needs to run, per block and per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub parity: Parity,
    pub dims: Vec<usize>,
    pub lambda: f64,
    pub delta: f64,
    pub strength: StrengthParams,
    /// Phase I stages in execution order.
    pub phase1: Vec<Stage>,
    pub phase2: Vec<Phase2Block>,
    pub phase3: Vec<Phase3Block>,
    pub n0: u64,
    /// Factor applied to Phase I and II budgets by a sample cap (1 if none).
    pub budget_scale: f64,
}

fn ceil_budget(x: f64) -> Result<u64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::NonFinite(format!("budget {x}")));
    }
    Ok((x.ceil() as u64).max(1))
}

fn positive(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} = {x}")))
    }
}

fn default_c2(layout: &BlockLayout, delta: f64) -> f64 {
    let k = layout.order() as f64;
    let dmax = *layout.dims().last().unwrap() as f64;
    k * (k * dmax / delta).ln()
}

fn phase3_blocks(layout: &BlockLayout, lambda: f64, t3: u64, eps_hat: f64) -> Result<Vec<Phase3Block>> {
    if t3 < 2 {
        return Err(invalid(format!("t3 must be at least 2, got {t3}")));
    }
    let t = t3 as f64;
    let eta = positive(t.ln().powi(2) / (lambda * t), "phase III step")?;
    let decay_length = ((t / t.ln()).floor() as u64).clamp(1, t3);
    Ok(vec![Phase3Block { eta, budget: t3, decay_length, epsilon_hat: eps_hat }; layout.num_blocks()])
}

fn check_schedule_parity(layout: &BlockLayout) -> Result<()> {
    let k = layout.order();
    match layout.parity() {
        Parity::Even if k < 4 => Err(Error::Parity(format!("even schedules need order at least 4, got {k}"))),
        Parity::Odd if k < 5 => Err(Error::Parity(format!("odd schedules need order at least 5, got {k}"))),
        _ => Ok(()),
    }
}

struct Common {
    layout: BlockLayout,
    c0: f64,
    c1: f64,
    c2: f64,
    eps_tilde: f64,
}

fn common(dims: &[usize], lambda: f64, delta: f64, t_hint: u64, constants: &Constants) -> Result<Common> {
    constants.validate()?;
    check_delta(delta)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("schedules need a positive signal strength, got {lambda}")));
    }
    let layout = BlockLayout::new(dims)?;
    check_schedule_parity(&layout)?;
    let order = layout.order();
    let c0 = compute_c0(dims, order, delta)?;
    let c2 = constants.c2.unwrap_or_else(|| default_c2(&layout, delta));
    let c1 = constants.c1_scale * noise_bound_c1(t_hint.max(1), dims, constants.delta_prime.unwrap_or(delta))?;
    let eps_tilde = constants.epsilon_tilde.unwrap_or(1.0 / order as f64);
    Ok(Common { layout, c0, c1, c2, eps_tilde })
}

/// Number of Phase I stages `h*`: `⌈ln 4 + c·max_m ln γ_m⁻¹⌉` with
/// `c = 2/(k̄−2)` for even order and `1/(⌈k̄/2⌉−2)` for odd.
pub fn stage_count(order: usize, gamma: &[f64]) -> Result<usize> {
    if order < 4 || gamma.is_empty() || gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(invalid("stage count needs order at least 4 and positive gammas"));
    }
    let mult = if order % 2 == 0 { 2.0 / (order as f64 - 2.0) } else { 1.0 / (order.div_ceil(2) as f64 - 2.0) };
    let max_ln = gamma.iter().map(|g| (1.0 / g).ln()).fold(f64::NEG_INFINITY, f64::max);
    Ok(((4f64.ln() + mult * max_ln).ceil().max(1.0)) as usize)
}

/// Stage-to-stage growth `ζ = exp{(ln 4 + ln γ⁻¹/(⌊k̄/2⌋−1))/h*}`.
pub fn stage_growth(gamma: f64, order: usize, h_star: usize) -> f64 {
    let kf = (order / 2) as f64;
    ((4f64.ln() + (1.0 / gamma).ln() / (kf - 1.0)) / h_star as f64).exp()
}

/// Oracle schedule built from the true pair correlations of `instance`.
pub fn oracle_schedule(
    instance: &SignalInstance,
    delta: f64,
    t3: u64,
    constants: &Constants,
) -> Result<PhaseSchedule> {
    let lambda = instance.snr();
    let cm = common(instance.dims(), lambda, delta, t3, constants)?;
    let layout = &cm.layout;
    let order = layout.order();
    let kf = order / 2;
    let kc = order.div_ceil(2);
    let nb = layout.num_blocks();
    let gamma = compute_gamma(layout, &block_correlations(instance), cm.c0)?;
    let h_star = stage_count(order, &gamma)?;
    let hs = h_star as f64;
    let zeta: Vec<f64> = gamma.iter().map(|&g| stage_growth(g, order, h_star)).collect();

    let pre1 = constants.phase1_eta_scale / (cm.c2 * hs * hs);
    let mut phase1 = Vec::with_capacity(h_star);
    for h in 1..=h_star {
        let hf = h as f64;
        let mut blocks = Vec::with_capacity(nb);
        for m in 0..nb {
            let (g, z) = (gamma[m], zeta[m]);
            let lam: f64 = lambda
                * (0..nb)
                    .filter(|&i| i != m)
                    .map(|i| zeta[i].powf(hf - 1.0) * gamma[i] / 4.0)
                    .product::<f64>();
            let ub = z.powf(hf) * g / 2.0;
            let lb = z.powf(hf - 1.0) * g / 4.0;
            let dm = layout.block(m).len() as f64;
            let eta = positive(
                pre1 * (lam / (z.powf(hf) * g * dm)).min(z.powf(hf - 1.0) * g / (lam + 1.0)),
                "phase I step",
            )?;
            let budget = ceil_budget(constants.c_t * z.powf(hf) * g / (eta * lam))?;
            blocks.push(StageBlock { eta, budget, lb, ub, zeta: z, lambda_eff: lam });
        }
        phase1.push(Stage { ladder: Ladder::Main, h, blocks });
    }

    let exponent = if kf > 1 { 1.0 - 1.0 / (kf as f64 - 1.0) } else { 0.0 };
    let mut phase2 = Vec::with_capacity(nb);
    for m in 0..nb {
        let m1 = m + 1;
        let lam = lambda
            * (1.0 - 1.0 / kf as f64).powi((kc - m1) as i32)
            * gamma[..m].iter().map(|g| g.powf(exponent)).product::<f64>();
        let dm = layout.block(m).len() as f64;
        let eta = positive(
            constants.phase2_eta_scale / cm.c2 * (lam / (order as f64 * dm)).min(1.0 / (lam + 1.0)),
            "phase II step",
        )?;
        let budget = ceil_budget(constants.c_t / (eta * lam))?;
        phase2.push(Phase2Block { eta, budget, lambda_eff: lam, epsilon_tilde: cm.eps_tilde });
    }

    Ok(PhaseSchedule {
        parity: layout.parity(),
        dims: layout.dims().to_vec(),
        lambda,
        delta,
        strength: StrengthParams {
            mode: ScheduleMode::Oracle,
            gamma,
            c0: cm.c0,
            c1: cm.c1,
            c2: cm.c2,
            zeta,
            h_star,
            h_star_second: None,
        },
        phase1,
        phase2,
        phase3: phase3_blocks(layout, lambda, t3, constants.epsilon_hat)?,
        n0: constants.n0,
        budget_scale: 1.0,
    })
}

/// Schedule from observable quantities only: dims, `λ`, `c₀` and, in Case I, `c₃`.
pub fn adaptive_schedule(
    case: AdaptiveCase,
    dims: &[usize],
    lambda_hint: f64,
    delta: f64,
    t3: u64,
    constants: &Constants,
) -> Result<PhaseSchedule> {
    let cm = common(dims, lambda_hint, delta, t3, constants)?;
    let layout = &cm.layout;
    let lambda = lambda_hint;
    let order = layout.order();
    let kf = order / 2;
    let nb = layout.num_blocks();
    let j = (nb - 1) as f64;
    let odd = layout.parity() == Parity::Odd;
    let ln4 = 4f64.ln();
    let d1 = layout.dims()[0] as f64;
    let dm: Vec<f64> = layout.blocks().iter().map(|b| b.len() as f64).collect();

    let mut phase1 = Vec::new();
    let (mode, gamma, zeta, h_star, h_star_second, p);
    match case {
        AdaptiveCase::Case1 { c3 } => {
            if !(c3 > 0.0 && c3 <= 1.0) {
                return Err(invalid(format!("c3 must lie in (0, 1], got {c3}")));
            }
            let dmax = *layout.dims().last().unwrap() as f64;
            let floor = dmax.powf(-0.5 + 2.0 / order as f64);
            if c3 < floor * (1.0 - 1e-12) {
                log::warn!("c3 = {c3} is below the supported range [{floor:.4}, 1]");
            }
            // Case I pairs the vector block with d₀ = d₁.
            p = layout
                .blocks()
                .iter()
                .map(|b| if b.is_vector() { d1 * d1 } else { b.len() as f64 })
                .collect::<Vec<_>>();
            let pre_odd = if odd { kf as f64 } else { 1.0 };
            let ln_inv = (1.0 / c3).ln();
            let h1 = ((ln4 + j * ln_inv).ceil().max(1.0)) as usize;
            let h2 = ((ln_inv + p[nb - 1].ln() / (4.0 * j)).ceil().max(1.0)) as usize;
            let nb_i = nb as i32;
            let pre1 = constants.phase1_eta_scale / (cm.c2 * pre_odd * (h1 * h1) as f64);
            for h in 1..=h1 {
                let hf = h as f64;
                let mut blocks = Vec::with_capacity(nb);
                for m in 0..nb {
                    let lam = lambda * c3.powi(nb_i) / 4f64.powf(j)
                        * (0..nb).filter(|&i| i != m).map(|i| p[i].powf(-0.25)).product::<f64>();
                    let ub = hf.exp() * c3.powi(nb_i) * p[m].powf(-0.25) / 4.0;
                    let eta = positive(pre1 * (lam / (ub * dm[m])).min(ub * lam), "phase I step")?;
                    let budget = ceil_budget(constants.c_t * ub / (lam * eta))?;
                    blocks.push(StageBlock { eta, budget, lb: ub / (2.0 * E), ub, zeta: E, lambda_eff: lam });
                }
                phase1.push(Stage { ladder: Ladder::First, h, blocks });
            }
            let z2: Vec<f64> = p
                .iter()
                .map(|pi| ((ln_inv + pi.ln() / (4.0 * j)) / h2 as f64).exp())
                .collect();
            let pre2 = constants.phase1_eta_scale / (cm.c2 * pre_odd * (h2 * h2) as f64);
            for h in 1..=h2 {
                let hf = h as f64;
                let mut blocks = Vec::with_capacity(nb);
                for m in 0..nb {
                    let lam = lambda * c3.powf(j)
                        * (0..nb)
                            .filter(|&i| i != m)
                            .map(|i| z2[i].powf(hf - 1.0) * p[i].powf(-0.25))
                            .product::<f64>();
                    let ub = c3 * z2[m].powf(hf) * p[m].powf(-0.25);
                    let eta = positive(pre2 * lam / (ub * dm[m]), "phase I step")?;
                    let budget = ceil_budget(constants.c_t * ub / (lam * eta))?;
                    blocks.push(StageBlock { eta, budget, lb: ub / (2.0 * z2[m]), ub, zeta: z2[m], lambda_eff: lam });
                }
                phase1.push(Stage { ladder: Ladder::Second, h, blocks });
            }
            mode = ScheduleMode::AdaptiveCase1 { c3 };
            gamma = p.iter().map(|pi| c3 * pi.powf(-0.25)).collect::<Vec<_>>();
            zeta = z2;
            h_star = h1;
            h_star_second = Some(h2);
        }
        AdaptiveCase::Case2 => {
            let c0 = cm.c0;
            // Case II pairs the vector block with d₀ = 1.
            p = dm.clone();
            let gamma_t: Vec<f64> = layout
                .blocks()
                .iter()
                .zip(&p)
                .map(|(b, pi)| if b.is_vector() { c0.sqrt() / d1.sqrt() } else { c0 / pi.sqrt() })
                .collect();
            let hs = ((4.0 / c0).ln() + p[nb - 1].ln() / (2.0 * j)).ceil().max(1.0) as usize;
            let hf_star = hs as f64;
            let z: Vec<f64> = layout
                .blocks()
                .iter()
                .zip(&p)
                .map(|(b, pi)| {
                    let num = if b.is_vector() {
                        (2.0 / c0.sqrt()).ln() + d1.ln() / (2.0 * j)
                    } else {
                        (4.0 / c0).ln() + pi.ln() / (2.0 * j)
                    };
                    (num / hf_star).exp()
                })
                .collect();
            let pre1 = constants.phase1_eta_scale / (cm.c2 * hf_star * hf_star);
            for h in 1..=hs {
                let hf = h as f64;
                let mut blocks = Vec::with_capacity(nb);
                for m in 0..nb {
                    let lam = lambda / 4f64.powf(j)
                        * (0..nb)
                            .filter(|&i| i != m)
                            .map(|i| z[i].powf(hf - 1.0) * gamma_t[i])
                            .product::<f64>();
                    let ub = z[m].powf(hf) * gamma_t[m] / 4.0;
                    let eta = positive(pre1 * lam / (ub * dm[m]), "phase I step")?;
                    let budget = ceil_budget(constants.c_t * ub / (lam * eta))?;
                    blocks.push(StageBlock { eta, budget, lb: ub / (2.0 * z[m]), ub, zeta: z[m], lambda_eff: lam });
                }
                phase1.push(Stage { ladder: Ladder::Main, h, blocks });
            }
            mode = ScheduleMode::AdaptiveCase2;
            gamma = gamma_t;
            zeta = z;
            h_star = hs;
            h_star_second = None;
        }
    }

    let exponent = match case {
        AdaptiveCase::Case1 { .. } => -0.25 + 1.0 / (4.0 * j),
        AdaptiveCase::Case2 => -0.5 + 1.0 / (2.0 * j),
    };
    let mut phase2 = Vec::with_capacity(nb);
    for m in 0..nb {
        let lam = lambda
            * (1.0 - 1.0 / nb as f64).powi((nb - 1 - m) as i32)
            * p[..m].iter().map(|pi| pi.powf(exponent)).product::<f64>();
        let eta = positive(
            constants.phase2_eta_scale * lam / (cm.c2 * kf as f64 * dm[m]),
            "phase II step",
        )?;
        let budget = ceil_budget(constants.c_t / (eta * lam))?;
        phase2.push(Phase2Block { eta, budget, lambda_eff: lam, epsilon_tilde: cm.eps_tilde });
    }

    Ok(PhaseSchedule {
        parity: layout.parity(),
        dims: layout.dims().to_vec(),
        lambda,
        delta,
        strength: StrengthParams { mode, gamma, c0: cm.c0, c1: cm.c1, c2: cm.c2, zeta, h_star, h_star_second },
        phase1,
        phase2,
        phase3: phase3_blocks(layout, lambda, t3, constants.epsilon_hat)?,
        n0: constants.n0,
        budget_scale: 1.0,
    })
}

impl PhaseSchedule {
    pub fn num_blocks(&self) -> usize {
        self.phase2.len()
    }

    /// Number of initialization sign patterns: `2^k̄`.
    pub fn num_patterns(&self) -> u64 {
        1u64 << self.dims.len()
    }

    /// Phase I plus Phase II budget of one pattern.
    pub fn phase12_per_pattern(&self) -> u64 {
        let p1: u64 = self.phase1.iter().flat_map(|s| s.blocks.iter()).map(|b| b.budget).sum();
        p1 + self.phase2.iter().map(|b| b.budget).sum::<u64>()
    }

    pub fn phase3_total(&self) -> u64 {
        self.phase3.iter().map(|b| b.budget).sum()
    }

    /// `P (N₀ + Σ T⁽¹'²⁾) + 2 Σ T⁽³⁾`.
    pub fn total_samples(&self) -> u64 {
        self.num_patterns() * (self.n0 + self.phase12_per_pattern()) + 2 * self.phase3_total()
    }

    /// Shrinks every Phase I and II budget by a common factor so the total
    /// sample count fits in `cap`. Phase III and selection are left alone.
    pub fn cap_total_samples(&mut self, cap: u64) -> Result<()> {
        let total = self.total_samples();
        if total <= cap {
            return Ok(());
        }
        let fixed = self.num_patterns() * self.n0 + 2 * self.phase3_total();
        let per = self.phase12_per_pattern();
        if fixed >= cap || self.num_patterns() * per == 0 {
            return Err(invalid(format!(
                "sample cap {cap} leaves nothing for Phases I and II (fixed cost {fixed})"
            )));
        }
        let target = (cap - fixed) as f64 / self.num_patterns() as f64;
        let original = self.clone();
        let mut scale = target / per as f64;
        // Budgets forced up to 1 can push the total back over; shrink again.
        for _ in 0..64 {
            let shrink = |t: u64| ((t as f64 * scale).floor() as u64).max(1);
            for (stage, orig) in self.phase1.iter_mut().zip(&original.phase1) {
                for (b, o) in stage.blocks.iter_mut().zip(&orig.blocks) {
                    b.budget = shrink(o.budget);
                }
            }
            for (b, o) in self.phase2.iter_mut().zip(&original.phase2) {
                b.budget = shrink(o.budget);
            }
            let used = self.phase12_per_pattern() as f64;
            if self.total_samples() <= cap {
                self.budget_scale = original.budget_scale * scale;
                return Ok(());
            }
            scale *= target / used * (1.0 - 1e-9);
        }
        *self = original;
        Err(invalid(format!("sample cap {cap} is too small for this schedule")))
    }

    /// Checks the structural invariants of the schedule.
    pub fn validate(&self) -> Result<()> {
        let s = &self.strength;
        if s.h_star < 1 || s.gamma.iter().any(|g| !(*g > 0.0)) || s.zeta.iter().any(|z| !(*z > 1.0)) {
            return Err(invalid("strength parameters out of range"));
        }
        for stage in &self.phase1 {
            for b in &stage.blocks {
                let ok = b.eta > 0.0
                    && b.eta.is_finite()
                    && b.budget >= 1
                    && b.lb > 0.0
                    && b.ub > b.lb
                    && b.lambda_eff > 0.0
                    && ((b.ub - 2.0 * b.zeta * b.lb).abs() <= 1e-12 * b.ub);
                if !ok {
                    return Err(invalid(format!("stage {} of ladder {:?} is malformed", stage.h, stage.ladder)));
                }
            }
        }
        for b in &self.phase2 {
            if !(b.eta > 0.0 && b.eta.is_finite() && b.budget >= 1) {
                return Err(invalid("phase II entry is malformed"));
            }
        }
        for b in &self.phase3 {
            if !(b.eta > 0.0 && b.eta.is_finite() && b.budget >= 2 && b.decay_length >= 1 && b.decay_length <= b.budget) {
                return Err(invalid("phase III entry is malformed"));
            }
        }
        Ok(())
    }
}
