//! The planted model: a rank-one spike `λ v₁ ⊗ … ⊗ v_k̄` plus noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout::BlockLayout;
use crate::linalg::{dot, norm, unit_gaussian};

/// How the planted spikes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SpikeMode {
    /// Independent uniform directions.
    Random,
    /// All spikes identical; needs equal dimensions.
    Symmetric,
    /// Each pair of spikes sharing a block is planted at correlation `rho`.
    PairedCorrelation { rho: f64 },
}

/// Replayable description of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub order: usize,
    pub dims: Vec<usize>,
    pub snr: f64,
    pub spike_mode: SpikeMode,
    pub seed: u64,
    /// Explicit spike coordinates; when present they replace the seeded draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spikes: Option<Vec<Vec<f64>>>,
}

impl InstanceSpec {
    pub fn build(&self) -> Result<SignalInstance> {
        match &self.spikes {
            Some(spikes) => SignalInstance::new(self.dims.clone(), self.snr, spikes.clone()),
            None => make_instance(self.order, &self.dims, self.snr, self.spike_mode, self.seed),
        }
    }
}

/// A planted instance. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalInstance {
    order: usize,
    dims: Vec<usize>,
    snr: f64,
    spikes: Vec<Vec<f64>>,
}

impl SignalInstance {
    /// Builds an instance from explicit spikes, checking every invariant.
    pub fn new(dims: Vec<usize>, snr: f64, spikes: Vec<Vec<f64>>) -> Result<Self> {
        validate_dims(&dims)?;
        if !(snr >= 0.0 && snr.is_finite()) {
            return Err(invalid(format!("snr must be finite and non-negative, got {snr}")));
        }
        if spikes.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{} spikes for order {}",
                spikes.len(),
                dims.len()
            )));
        }
        for (n, (v, &d)) in spikes.iter().zip(&dims).enumerate() {
            if v.len() != d {
                return Err(Error::Dimension(format!("spike {n} has length {}, expected {d}", v.len())));
            }
            if (norm(v) - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("spike {n} is not unit norm")));
            }
        }
        Ok(SignalInstance { order: dims.len(), dims, snr, spikes })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn spikes(&self) -> &[Vec<f64>] {
        &self.spikes
    }

    pub fn spike(&self, n: usize) -> &[f64] {
        &self.spikes[n]
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(&self.dims).expect("instance dims validated")
    }

    /// Same spikes, different signal strength.
    pub fn with_snr(&self, snr: f64) -> Result<Self> {
        SignalInstance::new(self.dims.clone(), snr, self.spikes.clone())
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(invalid(format!("order must be at least 3, got {}", dims.len())));
    }
    if dims.contains(&0) {
        return Err(invalid("dimensions must be positive"));
    }
    if dims.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid(format!("dims must be non-decreasing, got {dims:?}")));
    }
    Ok(())
}

/// Draws a planted instance.
///
/// With [`SpikeMode::PairedCorrelation`] the pairs are the ones the block
/// layout groups together: `(v₁,v₂), (v₃,v₄), …` for even order and
/// `(v₂,v₃), (v₄,v₅), …` for odd order.
pub fn make_instance(
    order: usize,
    dims: &[usize],
    snr: f64,
    mode: SpikeMode,
    seed: u64,
) -> Result<SignalInstance> {
    if dims.len() != order {
        return Err(Error::Dimension(format!("order {order} but {} dims", dims.len())));
    }
    validate_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spikes = match mode {
        SpikeMode::Random => dims.iter().map(|&d| unit_gaussian(&mut rng, d)).collect(),
        SpikeMode::Symmetric => {
            if dims.iter().any(|&d| d != dims[0]) {
                return Err(Error::Dimension(format!(
                    "symmetric spikes need equal dims, got {dims:?}"
                )));
            }
            let v = unit_gaussian(&mut rng, dims[0]);
            vec![v; order]
        }
        SpikeMode::PairedCorrelation { rho } => {
            if !(rho.abs() <= 1.0) {
                return Err(invalid(format!("|rho| must be at most 1, got {rho}")));
            }
            let mut spikes: Vec<Vec<f64>> = dims.iter().map(|&d| unit_gaussian(&mut rng, d)).collect();
            let layout = BlockLayout::new(dims)?;
            for block in layout.blocks() {
                if let Some(left) = block.left {
                    let right = block.right;
                    spikes[right] = planted_partner(&spikes[left], dims[right], rho, &mut rng)?;
                }
            }
            spikes
        }
    };
    SignalInstance::new(dims.to_vec(), snr, spikes)
}

/// A unit vector `w` of length `d` with `Cor(v, w) = rho`.
fn planted_partner(v: &[f64], d: usize, rho: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut e = vec![0.0; d];
    e[..v.len()].copy_from_slice(v);
    if (rho.abs() - 1.0).abs() < f64::EPSILON {
        return Ok(e.iter().map(|x| rho * x).collect());
    }
    if d < 2 {
        return Err(invalid("paired correlation with |rho| < 1 needs dimension at least 2"));
    }
    // Gram-Schmidt a random direction against the embedded vector.
    let perp = loop {
        let mut g = unit_gaussian(rng, d);
        let c = dot(&g, &e);
        for (x, y) in g.iter_mut().zip(&e) {
            *x -= c * y;
        }
        let n = norm(&g);
        if n > 1e-6 {
            break g.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    let s = (1.0 - rho * rho).sqrt();
    Ok(e.iter().zip(&perp).map(|(a, b)| rho * a + s * b).collect())
}

/// `Cor(u, v) = ⟨u, [I 0] v⟩` for `u.len() ≤ v.len()`.
pub fn correlation(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() > v.len() {
        return Err(Error::Dimension(format!(
            "correlation needs len(u) <= len(v), got {} > {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dot(u, &v[..u.len()]))
}

/// Per-component sign-invariant losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryLoss {
    pub per_component: Vec<f64>,
    pub max_loss: f64,
}

/// `min(‖v − v*‖², ‖v + v*‖²)` for each component.
pub fn recovery_loss(estimates: &[Vec<f64>], instance: &SignalInstance) -> Result<RecoveryLoss> {
    if estimates.len() != instance.order() {
        return Err(Error::Dimension(format!(
            "{} estimates for order {}",
            estimates.len(),
            instance.order()
        )));
    }
    let mut per_component = Vec::with_capacity(estimates.len());
    for (n, (v, star)) in estimates.iter().zip(instance.spikes()).enumerate() {
        if v.len() != star.len() {
            return Err(Error::Dimension(format!("estimate {n} has length {}", v.len())));
        }
        if (norm(v) - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("estimate {n} is not unit norm")));
        }
        let minus: f64 = v.iter().zip(star).map(|(a, b)| (a - b) * (a - b)).sum();
        let plus: f64 = v.iter().zip(star).map(|(a, b)| (a + b) * (a + b)).sum();
        let loss = minus.min(plus).min(4.0);
        per_component.push(loss);
    }
    let max_loss = per_component.iter().cloned().fold(0.0, f64::max);
    Ok(RecoveryLoss { per_component, max_loss })
}
