//! The library basis against an independent spherical-coordinate form.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shdebias::sh_lighting::{sh_basis, UnitNormal, SH_COUNT};

fn oracle(theta: f64, phi: f64) -> [f64; SH_COUNT] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let k1 = (3.0 / (4.0 * PI)).sqrt();
    let k2 = (15.0 / (4.0 * PI)).sqrt();
    [
        0.5 / PI.sqrt(),
        k1 * st * sp,
        k1 * ct,
        k1 * st * cp,
        k2 * st * st * sp * cp,
        k2 * st * ct * sp,
        (5.0 / (16.0 * PI)).sqrt() * (3.0 * ct * ct - 1.0),
        k2 * st * ct * cp,
        (15.0 / (16.0 * PI)).sqrt() * st * st * (cp * cp - sp * sp),
    ]
}

fn normal(theta: f64, phi: f64) -> UnitNormal {
    UnitNormal::normalize(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()).unwrap()
}

#[test]
fn basis_matches_spherical_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let theta = rng.random_range(0.0..PI);
        let phi = rng.random_range(0.0..2.0 * PI);
        let lib = sh_basis(normal(theta, phi));
        let want = oracle(theta, phi);
        for i in 0..SH_COUNT {
            assert!((lib[i] - want[i]).abs() < 1e-12, "index {i}: {} vs {}", lib[i], want[i]);
        }
    }
}

#[test]
fn monte_carlo_orthonormality() {
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gram = [[0.0f64; SH_COUNT]; SH_COUNT];
    for _ in 0..n {
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).sqrt();
        let y = sh_basis(UnitNormal::normalize(r * phi.cos(), r * phi.sin(), z).unwrap());
        for (i, row) in gram.iter_mut().enumerate() {
            for j in i..SH_COUNT {
                row[j] += y[i] * y[j];
            }
        }
    }
    let area = 4.0 * PI / n as f64;
    for (i, row) in gram.iter().enumerate() {
        for (j, v) in row.iter().enumerate().skip(i) {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v * area - want).abs() < 0.01, "({i},{j}) = {}", v * area);
        }
    }
}
