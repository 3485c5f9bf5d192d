//! Small internal helpers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a hash; `DefaultHasher` changes across releases.
pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Standard normal draw via Box-Muller.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Column-wise Gram-Schmidt: returns a `rows x cols` row-major matrix with
/// orthonormal columns drawn from a seeded Gaussian. Requires `rows >= cols`.
pub(crate) fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!(rows >= cols, "need rows >= cols for orthonormal columns");
    let mut m = vec![0.0f64; rows * cols];
    for c in 0..cols {
        let mut col: Vec<f64> = (0..rows).map(|_| standard_normal(rng)).collect();
        for prev in 0..c {
            let dot: f64 = (0..rows).map(|r| col[r] * m[r * cols + prev]).sum();
            for r in 0..rows {
                col[r] -= dot * m[r * cols + prev];
            }
        }
        let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        // A freshly drawn Gaussian column is dependent on the previous ones
        // with probability 0; redraw guards are not worth the complexity.
        for r in 0..rows {
            m[r * cols + c] = col[r] / norm;
        }
    }
    m
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
