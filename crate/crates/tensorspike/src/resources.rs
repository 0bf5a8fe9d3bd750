//! Sample, pass and memory accounting.

use serde::{Deserialize, Serialize};

/// Running totals for one streaming run. Passes are always 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLedger {
    /// Samples consumed by the estimation pipeline.
    pub samples_used: u64,
    /// Samples consumed by the reference search, if one ran.
    pub search_samples: u64,
    pub passes: u32,
    pub state_scalars_current: u64,
    pub state_scalars_all_iterates: u64,
    pub bits_per_scalar: u32,
}

impl Default for ResourceLedger {
    fn default() -> Self {
        ResourceLedger {
            samples_used: 0,
            search_samples: 0,
            passes: 1,
            state_scalars_current: 0,
            state_scalars_all_iterates: 0,
            bits_per_scalar: 64,
        }
    }
}

impl ResourceLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge_sample(&mut self, n: u64) {
        self.samples_used += n;
    }

    /// Adds another stream's counts; state sizes take the larger value.
    pub fn merge(&mut self, other: &ResourceLedger) {
        self.samples_used += other.samples_used;
        self.search_samples += other.search_samples;
        self.state_scalars_current = self.state_scalars_current.max(other.state_scalars_current);
        self.state_scalars_all_iterates = self.state_scalars_all_iterates.max(other.state_scalars_all_iterates);
    }

    /// Samples including the reference search.
    pub fn total_samples(&self) -> u64 {
        self.samples_used + self.search_samples
    }

    pub fn state_bits(&self) -> u64 {
        self.state_scalars_current * self.bits_per_scalar as u64
    }

    /// `N · K · S` with `S` in bits.
    pub fn nks(&self) -> f64 {
        self.total_samples() as f64 * self.passes as f64 * self.state_bits() as f64
    }
}

/// What the pipeline keeps in memory, phase by phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSnapshot {
    /// Entries of each block.
    pub block_sizes: Vec<usize>,
    /// Sign patterns run through Phases I and II.
    pub patterns: u64,
    /// Phase I plus Phase II steps per block and pattern.
    pub phase12_iterates: Vec<u64>,
    /// Phase III steps per block and sign; empty when Phase III is off.
    pub phase3_iterates: Vec<u64>,
}

/// `(current, all_iterates)` scalar counts.
///
/// `current` is the peak number of live scalars when only the latest iterate
/// is kept: all pattern blocks plus one running score each during Phases
/// I–II, then the Phase III start, the accepted blocks and the two signed
/// runs of the active block. `all_iterates` instead keeps every iterate.
pub fn audit_state_size(snap: &PipelineSnapshot) -> (u64, u64) {
    let total: u64 = snap.block_sizes.iter().map(|&s| s as u64).sum();
    let largest = snap.block_sizes.iter().copied().max().unwrap_or(0) as u64;
    let early = if snap.patterns > 0 { snap.patterns * (total + 1) } else { 0 };
    let late = if snap.phase3_iterates.is_empty() { 0 } else { 2 * total + 2 * largest };
    let current = early.max(late);

    let mut all_iterates = 0;
    for (m, &s) in snap.block_sizes.iter().enumerate() {
        let s = s as u64;
        let t12 = snap.phase12_iterates.get(m).copied().unwrap_or(0);
        all_iterates += snap.patterns * s * (t12 + 1);
        if let Some(&t3) = snap.phase3_iterates.get(m) {
            all_iterates += 2 * s * (t3 + 1);
        }
    }
    (current, all_iterates)
}
