//! Alignment analytics that read the true spikes.
//!
//! Nothing in the algorithm proper calls into this module; it backs tests,
//! instrumented runs and the `verify` command.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bilinear, dot, norm};

/// A perturbation `W + ηQ` of a `v.len() × u.len()` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionProbe {
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub eta: f64,
    pub eta_bar: f64,
}

impl ExpansionProbe {
    fn check(&self) -> Result<()> {
        let n = self.v.len() * self.u.len();
        if self.w.len() != n || self.q.len() != n {
            return Err(Error::Dimension("probe shapes are inconsistent".into()));
        }
        Ok(())
    }
}

/// `α = ⟨W, v uᵀ⟩ / ‖W‖_F`.
pub fn alignment(v: &[f64], u: &[f64], w: &[f64]) -> Result<f64> {
    if w.len() != v.len() * u.len() {
        return Err(Error::Dimension("alignment shapes are inconsistent".into()));
    }
    let n = norm(w);
    if !(n > 0.0) {
        return Err(Error::Degenerate("alignment of a zero matrix".into()));
    }
    Ok((bilinear(v, w, u) / n).clamp(-1.0, 1.0))
}

/// `d/dη α(W + ηQ)` at `η = 0`: `vᵀQu/‖W‖ − (vᵀWu)⟨W,Q⟩/‖W‖³`.
pub fn first_order_term(w: &[f64], q: &[f64], v: &[f64], u: &[f64]) -> Result<f64> {
    if w.len() != v.len() * u.len() || q.len() != w.len() {
        return Err(Error::Dimension("expansion shapes are inconsistent".into()));
    }
    let n = norm(w);
    if !(n > 0.0) {
        return Err(Error::Degenerate("expansion around a zero matrix".into()));
    }
    Ok(bilinear(v, q, u) / n - bilinear(v, w, u) * dot(w, q) / n.powi(3))
}

/// Second derivative of `η ↦ α(W + ηQ)` at `η = η̄`.
pub fn psi1_remainder(probe: &ExpansionProbe) -> Result<f64> {
    probe.check()?;
    let (w, q, v, u, e) = (&probe.w, &probe.q, &probe.v, &probe.u, probe.eta_bar);
    let vqu = bilinear(v, q, u);
    let vwu = bilinear(v, w, u);
    let wq = dot(w, q);
    let qq = dot(q, q);
    let shifted: Vec<f64> = w.iter().zip(q).map(|(a, b)| a + e * b).collect();
    let n = norm(&shifted);
    if !(n > 0.0) {
        return Err(Error::Degenerate("W + η̄Q vanishes".into()));
    }
    let a = vwu + e * vqu;
    let b = wq + e * qq;
    Ok(-2.0 * vqu * b / n.powi(3) - a * qq / n.powi(3) + 3.0 * a * b * b / n.powi(5))
}

/// Largest `|Ψ₁|` over `points` evenly spaced `η̄ ∈ [0, η]`.
pub fn psi1_grid_max(probe: &ExpansionProbe, points: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    for i in 0..points.max(2) {
        let eta_bar = probe.eta * i as f64 / (points.max(2) - 1) as f64;
        let p = ExpansionProbe { eta_bar, ..probe.clone() };
        best = best.max(psi1_remainder(&p)?.abs());
    }
    Ok(best)
}

/// Noiseless drift `α + ηλ(1 − α²)`, clipped to `[−1, 1]`.
pub fn population_alpha_step(alpha: f64, eta: f64, lambda_eff: f64) -> f64 {
    (alpha + eta * lambda_eff * (1.0 - alpha * alpha)).clamp(-1.0, 1.0)
}

/// Steps for `dα/dt = λ(1 − α²)` to carry `α₀` to `α₁`, at step size `η`.
pub fn ode_steps_to(alpha0: f64, alpha1: f64, eta: f64, lambda_eff: f64) -> f64 {
    (alpha1.atanh() - alpha0.atanh()) / (eta * lambda_eff)
}
