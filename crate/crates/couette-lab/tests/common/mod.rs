//! Shared test oracles, independent of the library's computation paths.

#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Matrix exponential by scaling-and-squaring with a Taylor core: the norm
/// is scaled below 2^-5, where 14 terms reach machine precision.
pub fn expm3(a: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = a.abs().max();
    let mut s = 0u32;
    let mut scaled = *a;
    if norm > 0.03125 {
        s = (norm / 0.03125).log2().ceil().max(0.0) as u32;
        scaled /= 2f64.powi(s as i32);
    }
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=14 {
        term = term * scaled / k as f64;
        sum += term;
    }
    for _ in 0..s {
        sum = sum * sum;
    }
    sum
}

pub fn expm3_apply_complex(e: &Matrix3<f64>, v: &Vector3<Complex64>) -> Vector3<Complex64> {
    Vector3::new(
        e[(0, 0)] * v[0] + e[(0, 1)] * v[1] + e[(0, 2)] * v[2],
        e[(1, 0)] * v[0] + e[(1, 1)] * v[1] + e[(1, 2)] * v[2],
        e[(2, 0)] * v[0] + e[(2, 1)] * v[1] + e[(2, 2)] * v[2],
    )
}

/// Real roots of `x^3 + a2 x^2 + a1 x + a0` when all three are real
/// (trigonometric form of the depressed cubic).
pub fn cubic_real_roots(a2: f64, a1: f64, a0: f64) -> [f64; 3] {
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;
    let shift = -a2 / 3.0;
    if p.abs() < 1e-14 && q.abs() < 1e-14 {
        return [shift; 3];
    }
    let m = 2.0 * (-p / 3.0).max(0.0).sqrt();
    let arg = if m > 0.0 { (3.0 * q / (p * m)).clamp(-1.0, 1.0) } else { 0.0 };
    let theta = arg.acos() / 3.0;
    let mut roots = [0.0; 3];
    for (k, r) in roots.iter_mut().enumerate() {
        *r = m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift;
    }
    roots.sort_by(|x, y| y.partial_cmp(x).unwrap());
    roots
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit_complex3(rng: &mut ChaCha8Rng) -> Vector3<Complex64> {
    loop {
        let v = Vector3::new(
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        );
        let n = v.norm();
        if n > 1e-3 {
            return v / Complex64::new(n, 0.0);
        }
    }
}

#[cfg(test)]
mod selfcheck {
    use super::*;

    #[test]
    fn expm_matches_diagonal_and_nilpotent() {
        let d = Matrix3::from_diagonal(&Vector3::new(0.3, -1.2, 2.0));
        let e = expm3(&d);
        for i in 0..3 {
            let expect = d[(i, i)].exp();
            assert!((e[(i, i)] - expect).abs() < 1e-13 * expect.abs().max(1.0));
        }
        // strictly upper triangular: exp is I + N
        let mut n = Matrix3::zeros();
        n[(0, 1)] = 3.0;
        let e = expm3(&n);
        assert!((e[(0, 1)] - 3.0).abs() < 1e-14 && (e[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cubic_roots_of_known_polynomial() {
        // (x-1)(x-2)(x+3) = x^3 - 7x + 6... expand: x^3 + 0 x^2 -7x + 6
        let r = cubic_real_roots(0.0, -7.0, 6.0);
        assert!((r[0] - 2.0).abs() < 1e-12);
        assert!((r[1] - 1.0).abs() < 1e-12);
        assert!((r[2] + 3.0).abs() < 1e-12);
    }
}
