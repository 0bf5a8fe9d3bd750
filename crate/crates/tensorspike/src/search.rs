//! Reference-level search: estimate how strongly the spikes of each block
//! correlate, using only the data.
//!
//! Round `τ` averages `⟨P, T⟩` over fresh samples, where `P` puts `[I 0]` on
//! every matrix block (and a random unit vector on the odd-order vector
//! block). The first round whose mean clears `κ^{Bτ}` (with `B` blocks)
//! returns `c₃ = κ^τ`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout::Parity;
use crate::linalg::{dot, embedded_identity, unit_gaussian};
use crate::model::SignalInstance;
use crate::noise::{NoiseConfig, RewardOracle};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRound {
    pub tau: usize,
    pub n1: u64,
    pub mean_abs: f64,
    pub threshold: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub c3: Option<f64>,
    pub kappa: f64,
    /// Last round index `T̃`.
    pub t_tilde: usize,
    pub rounds: Vec<SearchRound>,
    pub samples: u64,
}

/// Number of rounds minus one.
pub fn search_rounds(dims: &[usize], kappa: f64) -> Result<usize> {
    check_kappa(kappa)?;
    let order = dims.len();
    let nb = (order / 2 + order % 2) as f64;
    let lead = match Parity::of(order) {
        Parity::Even => 0.5 - 1.0 / nb,
        Parity::Odd => 0.5 - 3.0 / (2.0 * nb),
    };
    let geo = dims.iter().map(|&d| (d as f64).ln()).sum::<f64>() / order as f64;
    let t = (lead * geo / (1.0 / kappa).ln()).ceil();
    Ok(if t > 0.0 { t as usize } else { 0 })
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(invalid(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    Ok(())
}

/// Samples in round `τ`: `⌈C κ^{−2Bτ} ∏ d_row⌉`, rows of each block's probe.
pub fn round_samples(dims: &[usize], kappa: f64, tau: usize, scale: f64) -> u64 {
    let order = dims.len();
    let nb = order / 2 + order % 2;
    let rows: f64 = match Parity::of(order) {
        Parity::Even => (0..nb).map(|j| dims[2 * j] as f64).product(),
        Parity::Odd => dims[0] as f64 * (1..nb).map(|j| dims[2 * j - 1] as f64).product::<f64>(),
    };
    (scale * kappa.powi(-2 * (nb * tau) as i32) * rows).ceil() as u64
}

/// Runs the search against fresh samples of `instance` with noise `noise`.
///
/// `probe_seed` draws the odd-order vector probe. `n1_scale` is the leading
/// constant of the per-round sample count.
pub fn reference_search(
    instance: Arc<SignalInstance>,
    noise: NoiseConfig,
    kappa: f64,
    parity: Parity,
    n1_scale: f64,
    probe_seed: u64,
    sample_cap: Option<u64>,
) -> Result<SearchOutcome> {
    check_kappa(kappa)?;
    let layout = instance.layout();
    if layout.parity() != parity {
        return Err(Error::Parity(format!("{parity:?} search on order {}", layout.order())));
    }
    let t_tilde = search_rounds(layout.dims(), kappa)?;
    let mut probes: Vec<Vec<f64>> = Vec::with_capacity(layout.num_blocks());
    let mut rng = seeding::rng(probe_seed);
    for b in layout.blocks() {
        if b.is_vector() {
            probes.push(unit_gaussian(&mut rng, b.cols));
        } else {
            probes.push(embedded_identity(b.rows, b.cols));
        }
    }
    let last = layout.num_blocks() - 1;
    let mut oracle = RewardOracle::new(instance.clone(), noise)?;
    oracle.noise_mut().set_sample_cap(sample_cap);
    let factors: Vec<&[f64]> = probes.iter().map(Vec::as_slice).collect();
    let prep = oracle.prepare(last, &factors)?;
    let mut grad = vec![0.0; probes[last].len()];
    let nb = layout.num_blocks() as i32;

    let mut rounds = Vec::new();
    let mut index = 0u64;
    let mut c3 = None;
    for tau in 0..=t_tilde {
        let n1 = round_samples(layout.dims(), kappa, tau, n1_scale);
        let mut sum = 0.0;
        for _ in 0..n1 {
            oracle.gradient_into(&prep, index, &mut grad)?;
            index += 1;
            sum += dot(&grad, &probes[last]);
        }
        let mean_abs = (sum / n1 as f64).abs();
        if !mean_abs.is_finite() {
            return Err(Error::NonFinite("search score".into()));
        }
        let threshold = kappa.powi(nb * tau as i32);
        let accepted = mean_abs >= threshold;
        rounds.push(SearchRound { tau, n1, mean_abs, threshold, accepted });
        if accepted {
            c3 = Some(kappa.powi(tau as i32));
            break;
        }
    }
    Ok(SearchOutcome { c3, kappa, t_tilde, rounds, samples: index })
}
