//! Top eigenvectors for turning block matrices back into vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::unit_gaussian;
use crate::seeding;
use crate::sga::BlockState;

/// Flips `v` so its first non-negligible coordinate is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let scale = v.amax();
    if let Some(x) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *x < 0.0 {
            v.neg_mut();
        }
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension("matrix is not square".into()));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 {
                return Err(invalid("matrix is not symmetric"));
            }
        }
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("eigenvector input".into()));
    }
    Ok(())
}

/// Default iteration cap `⌈10 d ln d⌉` (at least 1).
pub fn default_max_iter(d: usize) -> usize {
    ((10.0 * d as f64 * (d as f64).ln()).ceil() as usize).max(1)
}

/// Power iteration until `‖Mv − (vᵀMv)v‖ ≤ tol`.
pub fn top_eigvec_power(m: &DMatrix<f64>, tol: f64, max_iter: usize, seed: u64) -> Result<DVector<f64>> {
    check_symmetric(m)?;
    let n = m.nrows();
    if n == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let mut rng = seeding::rng(seed);
    let mut v = DVector::from_vec(unit_gaussian(&mut rng, n));
    let mut mv = m * &v;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let nrm = mv.norm();
        if !(nrm > 0.0) {
            return Err(Error::Degenerate("power iteration hit the null space".into()));
        }
        v = &mv / nrm;
        mv = m * &v;
        let rq = v.dot(&mv);
        residual = (&mv - &v * rq).norm();
        if residual <= tol {
            fix_sign(&mut v);
            return Ok(v);
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// Top eigenvector by a dense symmetric eigendecomposition.
pub fn top_eigvec_dense(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(m.clone());
    let i = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(i).into_owned();
    v.normalize_mut();
    fix_sign(&mut v);
    Ok(v)
}

/// Step sizes for [`top_eigvec_ga`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EtaSchedule {
    Constant { eta: f64 },
    /// `eta0`, halved every `period` steps.
    Halving { eta0: f64, period: usize },
}

impl EtaSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            EtaSchedule::Constant { eta } => eta,
            EtaSchedule::Halving { eta0, period } => eta0 * 0.5f64.powi((t / period.max(1)) as i32),
        }
    }
}

/// One ascent step `v + η M v` on `⟨v, M v⟩/2`, renormalized.
pub fn ga_step(m: &DMatrix<f64>, v: &DVector<f64>, eta: f64) -> DVector<f64> {
    let mut next = v + (m * v) * eta;
    next.normalize_mut();
    next
}

/// Top left singular vector of `W` by gradient ascent on `⟨v, W Wᵀ v⟩`.
pub fn top_eigvec_ga(w: &DMatrix<f64>, schedule: EtaSchedule, steps: usize) -> Result<DVector<f64>> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient-ascent input".into()));
    }
    let m = w * w.transpose();
    // Start from the column of M with the largest norm.
    let (j, best) = (0..m.ncols())
        .map(|j| (j, m.column(j).norm()))
        .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if !(best > 0.0) {
        return Err(Error::Degenerate("gradient ascent on a zero matrix".into()));
    }
    let mut v = m.column(j) / best;
    for t in 0..steps {
        v = ga_step(&m, &v, schedule.at(t));
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gradient-ascent iterate".into()));
        }
    }
    fix_sign(&mut v);
    Ok(v)
}

/// How block matrices are turned into vectors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Extraction {
    #[default]
    Power,
    GradientAscent { eta: f64, steps: usize },
}

fn top_power(m: &DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    match top_eigvec_power(m, 1e-10, default_max_iter(m.nrows()), seed) {
        Ok(v) => Ok(v),
        Err(Error::NoConvergence { iterations, residual }) => {
            log::warn!(
                "power iteration stalled after {iterations} steps (residual {residual:e}); using a dense eigensolve"
            );
            top_eigvec_dense(m)
        }
        Err(e) => Err(e),
    }
}

/// `(left, right)` unit vectors of a block; the vector block returns itself twice.
pub fn extract_block(state: &BlockState, method: Extraction, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
    let w = DMatrix::from_row_slice(state.rows, state.cols, state.w());
    if state.is_vector {
        let mut v = DVector::from_row_slice(state.w());
        let n = v.norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate("zero vector block".into()));
        }
        v /= n;
        return Ok((v.clone(), v));
    }
    match method {
        Extraction::Power => Ok((
            top_power(&(&w * w.transpose()), seeding::derive_seed(seed, 0))?,
            top_power(&(w.transpose() * &w), seeding::derive_seed(seed, 1))?,
        )),
        Extraction::GradientAscent { eta, steps } => {
            let schedule = EtaSchedule::Constant { eta };
            Ok((top_eigvec_ga(&w, schedule, steps)?, top_eigvec_ga(&w.transpose(), schedule, steps)?))
        }
    }
}
