//! Slice-level helpers for the hot loops. Matrices are row-major `&[f64]`.

use rand::Rng;
use rand_distr::StandardNormal;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn scale(a: &mut [f64], c: f64) {
    for x in a.iter_mut() {
        *x *= c;
    }
}

/// Returns `a / ‖a‖`, or `None` for the zero vector.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(a.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

/// Row-major outer product `v uᵀ`.
pub fn outer(v: &[f64], u: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() * u.len());
    for &a in v {
        out.extend(u.iter().map(|b| a * b));
    }
    out
}

/// `vᵀ M u` for row-major `M` with `v.len()` rows.
pub fn bilinear(v: &[f64], m: &[f64], u: &[f64]) -> f64 {
    let cols = u.len();
    v.iter()
        .enumerate()
        .map(|(i, a)| a * dot(&m[i * cols..(i + 1) * cols], u))
        .sum()
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform draw on the unit sphere of `R^n`.
pub fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        if let Some(v) = normalized(&gaussian_vec(rng, n)) {
            return v;
        }
    }
}

/// `[I 0]` of shape `rows × cols` (row-major), `rows ≤ cols`.
pub fn embedded_identity(rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows.min(cols) {
        out[i * cols + i] = 1.0;
    }
    out
}
