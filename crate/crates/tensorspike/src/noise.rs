//! Noise oracles and the per-step reward gradient.
//!
//! Each sample `T = λ v₁⊗…⊗v_k̄ + E` is only ever seen through the contraction
//! of `E` against the frozen blocks, `E_m`. The explicit backend draws the
//! whole tensor and contracts it; the projected backend draws `E_m` directly
//! from its exact law, which for i.i.d. Gaussian entries and fixed factors of
//! norm `s` is an i.i.d. `N(0, s²)` matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout::BlockLayout;
use crate::linalg::{dot, norm};
use crate::model::SignalInstance;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianIid,
    /// Uniform on the unit sphere of the vectorized tensor.
    BoundedSphere,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Explicit,
    Projected,
}

pub const DEFAULT_EXPLICIT_CAP: usize = 1_000_000;

fn default_cap() -> usize {
    DEFAULT_EXPLICIT_CAP
}

fn is_default_cap(c: &usize) -> bool {
    *c == DEFAULT_EXPLICIT_CAP
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub seed: u64,
    pub backend: Backend,
    /// Largest tensor the explicit backend will materialize.
    #[serde(default = "default_cap", skip_serializing_if = "is_default_cap")]
    pub explicit_cap: usize,
    /// Clip each entry of `E_m` to `±√c₁`.
    #[serde(default, skip_serializing_if = "is_false")]
    pub clip_at_sqrt_c1: bool,
}

impl NoiseConfig {
    pub fn new(kind: NoiseKind, seed: u64, backend: Backend) -> Self {
        NoiseConfig { kind, seed, backend, explicit_cap: DEFAULT_EXPLICIT_CAP, clip_at_sqrt_c1: false }
    }

    pub fn zero() -> Self {
        NoiseConfig::new(NoiseKind::Zero, 0, Backend::Projected)
    }

    pub fn gaussian(seed: u64) -> Self {
        NoiseConfig::new(NoiseKind::GaussianIid, seed, Backend::Projected)
    }

    /// Same settings on an independent stream.
    pub fn derived(&self, stream: u64) -> Self {
        NoiseConfig { seed: seeding::derive_seed(self.seed, stream), ..self.clone() }
    }
}

/// A query for the projections `⟨E_m, Q⟩` of one fresh sample.
#[derive(Debug, Clone)]
pub struct ProjectionRequest {
    pub block: usize,
    /// One row-major factor per block; the entry at `block` is ignored.
    pub fixed_factors: Vec<Vec<f64>>,
    pub probes: Vec<Vec<f64>>,
}

/// Stream of fresh noise samples for one run.
#[derive(Debug, Clone)]
pub struct NoiseOracle {
    config: NoiseConfig,
    layout: BlockLayout,
    rng: ChaCha8Rng,
    last_index: Vec<Option<u64>>,
    sample_cap: Option<u64>,
    drawn: u64,
    clip: Option<f64>,
    inject_nan: bool,
    tensor: Vec<f64>,
}

impl NoiseOracle {
    pub fn new(config: NoiseConfig, layout: BlockLayout) -> Result<Self> {
        if config.kind == NoiseKind::BoundedSphere && config.backend != Backend::Explicit {
            return Err(invalid("bounded_sphere noise needs the explicit backend"));
        }
        if config.backend == Backend::Explicit && config.kind != NoiseKind::Zero {
            let entries = layout.tensor_len();
            if entries > config.explicit_cap {
                return Err(Error::ExplicitTooLarge { entries, cap: config.explicit_cap });
            }
        }
        let nb = layout.num_blocks();
        Ok(NoiseOracle {
            rng: seeding::rng(config.seed),
            config,
            layout,
            last_index: vec![None; nb],
            sample_cap: None,
            drawn: 0,
            clip: None,
            inject_nan: false,
            tensor: Vec::new(),
        })
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.config
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Fail once more than `cap` samples have been drawn.
    pub fn set_sample_cap(&mut self, cap: Option<u64>) {
        self.sample_cap = cap;
    }

    /// Clip entries of `E_m` to `±threshold`.
    pub fn set_clip(&mut self, threshold: Option<f64>) {
        self.clip = threshold;
    }

    /// Test hook: every subsequent draw is NaN.
    pub fn inject_nan(&mut self) {
        self.inject_nan = true;
    }

    pub fn samples_drawn(&self) -> u64 {
        self.drawn
    }

    fn claim(&mut self, block: usize, index: u64) -> Result<()> {
        if block >= self.last_index.len() {
            return Err(Error::Dimension(format!("no block {block}")));
        }
        if let Some(last) = self.last_index[block] {
            if index <= last {
                return Err(Error::Freshness { block, index, last });
            }
        }
        if let Some(cap) = self.sample_cap {
            if self.drawn >= cap {
                return Err(Error::SampleCap { cap });
            }
        }
        self.last_index[block] = Some(index);
        self.drawn += 1;
        Ok(())
    }

    /// Writes `E_m` for a fresh sample into `out` (row-major, block shape).
    ///
    /// `factors[i]` is the frozen factor of block `i`; `factors[block]` is
    /// ignored. Factors need not be unit norm.
    pub fn noise_matrix(
        &mut self,
        block: usize,
        factors: &[&[f64]],
        index: u64,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_factors(block, factors, out.len())?;
        if self.needs_factors() {
            self.claim(block, index)?;
            if self.inject_nan {
                out.fill(f64::NAN);
                return Ok(());
            }
            self.draw_tensor(self.config.kind);
            contract_except(&self.tensor, &self.layout, factors, block, out);
            self.apply_clip(out);
            Ok(())
        } else {
            let s = factor_scale(block, factors);
            self.scaled_matrix(block, s, index, out)
        }
    }

    /// True when `E_m` depends on the factors themselves, not just their norms.
    pub fn needs_factors(&self) -> bool {
        self.config.backend == Backend::Explicit && self.config.kind != NoiseKind::Zero
    }

    /// Projected-law draw of `E_m` given the product `s` of frozen factor norms.
    fn scaled_matrix(&mut self, block: usize, s: f64, index: u64, out: &mut [f64]) -> Result<()> {
        self.claim(block, index)?;
        if self.inject_nan {
            out.fill(f64::NAN);
            return Ok(());
        }
        match self.config.kind {
            NoiseKind::Zero => out.fill(0.0),
            NoiseKind::GaussianIid => {
                for x in out.iter_mut() {
                    let z: f64 = self.rng.sample(StandardNormal);
                    *x = s * z;
                }
            }
            NoiseKind::BoundedSphere => unreachable!("rejected in new"),
        }
        self.apply_clip(out);
        Ok(())
    }

    fn apply_clip(&self, out: &mut [f64]) {
        if let Some(t) = self.clip {
            for x in out.iter_mut() {
                *x = x.clamp(-t, t);
            }
        }
    }

    fn check_factors(&self, block: usize, factors: &[&[f64]], out_len: usize) -> Result<()> {
        let blocks = self.layout.blocks();
        if factors.len() != blocks.len() {
            return Err(Error::Dimension(format!(
                "{} factors for {} blocks",
                factors.len(),
                blocks.len()
            )));
        }
        if block >= blocks.len() || out_len != blocks[block].len() {
            return Err(Error::Dimension(format!("output does not match block {block}")));
        }
        for (i, f) in factors.iter().enumerate() {
            if i != block && f.len() != blocks[i].len() {
                return Err(Error::Dimension(format!("factor {i} has {} entries", f.len())));
            }
        }
        Ok(())
    }

    fn draw_tensor(&mut self, kind: NoiseKind) {
        let n = self.layout.tensor_len();
        self.tensor.resize(n, 0.0);
        for x in self.tensor.iter_mut() {
            *x = self.rng.sample(StandardNormal);
        }
        if kind == NoiseKind::BoundedSphere {
            let r = norm(&self.tensor);
            for x in self.tensor.iter_mut() {
                *x /= r;
            }
        }
    }

    /// Draws one fresh sample and returns `⟨E_m, Q⟩` for every probe `Q`.
    pub fn fresh_sample_projections(&mut self, req: &ProjectionRequest, index: u64) -> Result<Vec<f64>> {
        if req.probes.is_empty() {
            return Err(invalid("probe list is empty"));
        }
        let len = self.layout.blocks().get(req.block).map(|b| b.len()).unwrap_or(0);
        for (i, f) in req.fixed_factors.iter().enumerate() {
            if i != req.block && (norm(f) - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("fixed factor {i} is not unit norm")));
            }
        }
        if req.probes.iter().any(|q| q.len() != len) {
            return Err(Error::Dimension("probe does not match block shape".into()));
        }
        let factors: Vec<&[f64]> = req.fixed_factors.iter().map(Vec::as_slice).collect();
        if self.config.backend == Backend::Projected && self.config.kind == NoiseKind::GaussianIid {
            self.check_factors(req.block, &factors, len)?;
            self.claim(req.block, index)?;
            if self.inject_nan {
                return Ok(vec![f64::NAN; req.probes.len()]);
            }
            return Ok(self.correlated_gaussian(&req.probes));
        }
        let mut e = vec![0.0; len];
        self.noise_matrix(req.block, &factors, index, &mut e)?;
        Ok(req.probes.iter().map(|q| dot(&e, q)).collect())
    }

    /// `L z` with `L Lᵀ` the probes' Gram matrix.
    fn correlated_gaussian(&mut self, probes: &[Vec<f64>]) -> Vec<f64> {
        let p = probes.len();
        let gram = DMatrix::from_fn(p, p, |i, j| dot(&probes[i], &probes[j]));
        let chol = gram
            .clone()
            .cholesky()
            .or_else(|| (gram + DMatrix::identity(p, p) * 1e-12).cholesky())
            .expect("regularized Gram matrix is positive definite");
        let z = DVector::from_fn(p, |_, _| self.rng.sample::<f64, _>(StandardNormal));
        let y = chol.l() * z;
        y.iter().copied().collect()
    }
}

fn factor_scale(block: usize, factors: &[&[f64]]) -> f64 {
    factors
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != block)
        .map(|(_, f)| norm(f))
        .product()
}

/// Contracts a row-major tensor with every block factor except `keep`.
fn contract_except(tensor: &[f64], layout: &BlockLayout, factors: &[&[f64]], keep: usize, out: &mut [f64]) {
    let mut shape: Vec<usize> = layout.blocks().iter().map(|b| b.len()).collect();
    let mut cur: Vec<f64> = tensor.to_vec();
    let mut keep_axis = keep;
    // Contract from the last axis down so earlier axis positions stay valid.
    for j in (0..shape.len()).rev() {
        if j == keep {
            continue;
        }
        let pre: usize = shape[..j].iter().product();
        let n = shape[j];
        let post: usize = shape[j + 1..].iter().product();
        let f = factors[j];
        let mut next = vec![0.0; pre * post];
        for a in 0..pre {
            for (i, &w) in f.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &cur[(a * n + i) * post..(a * n + i + 1) * post];
                let dst = &mut next[a * post..(a + 1) * post];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        cur = next;
        shape.remove(j);
        if j < keep_axis {
            keep_axis -= 1;
        }
    }
    debug_assert_eq!(keep_axis, 0);
    out.copy_from_slice(&cur);
}

/// `c₁ = 4 log((T Σ_m |block m| + 2 T B) / δ′)` with `B` the number of blocks.
pub fn noise_bound_c1(total_samples: u64, dims: &[usize], delta_prime: f64) -> Result<f64> {
    if total_samples < 1 {
        return Err(invalid("total_samples must be at least 1"));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(invalid(format!("delta' must lie in (0, 1), got {delta_prime}")));
    }
    let layout = BlockLayout::new(dims)?;
    let t = total_samples as f64;
    let sum = layout.total_block_len() as f64;
    let b = layout.num_blocks() as f64;
    Ok(4.0 * ((t * sum + 2.0 * t * b) / delta_prime).ln())
}

/// The block-`m` gradient query, with the frozen blocks folded in.
#[derive(Debug, Clone)]
pub struct PreparedBlock {
    pub block: usize,
    /// `λ ∏_{i≠m} ⟨F_i, v_i u_iᵀ⟩`.
    pub signal_coeff: f64,
    /// `∏_{i≠m} ‖F_i‖`.
    pub noise_scale: f64,
    factors: Vec<Vec<f64>>,
}

impl PreparedBlock {
    pub fn factors(&self) -> Vec<&[f64]> {
        self.factors.iter().map(Vec::as_slice).collect()
    }
}

/// Instance plus noise: answers `∇R_m = λ_m v uᵀ + E_m` for fresh samples.
#[derive(Debug, Clone)]
pub struct RewardOracle {
    instance: Arc<SignalInstance>,
    layout: BlockLayout,
    signals: Vec<Vec<f64>>,
    noise: NoiseOracle,
}

impl RewardOracle {
    pub fn new(instance: Arc<SignalInstance>, noise: NoiseConfig) -> Result<Self> {
        let layout = instance.layout();
        let signals = (0..layout.num_blocks())
            .map(|j| layout.signal_matrix(j, instance.spikes()))
            .collect();
        let noise = NoiseOracle::new(noise, layout.clone())?;
        Ok(RewardOracle { instance, layout, signals, noise })
    }

    pub fn instance(&self) -> &SignalInstance {
        &self.instance
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn noise(&self) -> &NoiseOracle {
        &self.noise
    }

    pub fn noise_mut(&mut self) -> &mut NoiseOracle {
        &mut self.noise
    }

    /// `v uᵀ` for block `j`.
    pub fn signal(&self, j: usize) -> &[f64] {
        &self.signals[j]
    }

    /// Caches the frozen-block product for block `block`.
    pub fn prepare(&self, block: usize, factors: &[&[f64]]) -> Result<PreparedBlock> {
        if factors.len() != self.layout.num_blocks() {
            return Err(Error::Dimension(format!("{} factors for {} blocks", factors.len(), self.layout.num_blocks())));
        }
        let mut coeff = self.instance.snr();
        for (i, f) in factors.iter().enumerate() {
            if i == block {
                continue;
            }
            if f.len() != self.signals[i].len() {
                return Err(Error::Dimension(format!("factor {i} has {} entries", f.len())));
            }
            coeff *= dot(f, &self.signals[i]);
        }
        Ok(PreparedBlock {
            block,
            signal_coeff: coeff,
            noise_scale: factor_scale(block, factors),
            factors: factors.iter().map(|f| f.to_vec()).collect(),
        })
    }

    /// Writes `∇R_m` for fresh sample `index` into `out`.
    pub fn gradient_into(&mut self, prep: &PreparedBlock, index: u64, out: &mut [f64]) -> Result<()> {
        if self.noise.needs_factors() {
            let factors = prep.factors();
            self.noise.noise_matrix(prep.block, &factors, index, out)?;
        } else {
            if out.len() != self.signals[prep.block].len() {
                return Err(Error::Dimension(format!("output does not match block {}", prep.block)));
            }
            self.noise.scaled_matrix(prep.block, prep.noise_scale, index, out)?;
        }
        let c = prep.signal_coeff;
        if c != 0.0 {
            for (o, s) in out.iter_mut().zip(&self.signals[prep.block]) {
                *o += c * s;
            }
        }
        Ok(())
    }

    /// `R_m(W) = λ_m ⟨W, v uᵀ⟩ + ⟨E_m, W⟩`, evaluated as `⟨∇R_m, W⟩`.
    pub fn signal_plus_noise_reward(&mut self, w: &[f64], prep: &PreparedBlock, index: u64) -> Result<f64> {
        let mut g = vec![0.0; w.len()];
        self.gradient_into(prep, index, &mut g)?;
        Ok(dot(&g, w))
    }
}
