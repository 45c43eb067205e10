//! Seeded probe sampling: Latin-hypercube designs and points in balls.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Vector;

/// Deterministic generator for a seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample in `[0, 1)` with 53 random bits.
pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Latin-hypercube design of `count` points in `[0,1)^dims`.
pub fn latin_hypercube(seed: u64, count: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut points = alloc::vec![alloc::vec![0.0; dims]; count];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            let j = (r.next_u64() % (i as u64 + 1)) as usize;
            strata.swap(i, j);
        }
        for (p, &s) in points.iter_mut().zip(strata.iter()) {
            p[d] = (s as f64 + uniform(&mut r)) / count as f64;
        }
    }
    points
}

/// Map a point of the cube `[-1,1]^n` radially into the unit ball.
fn cube_to_ball(c: &[f64]) -> Vector {
    let v = Vector::from_column_slice(c);
    let e = v.norm();
    if e == 0.0 {
        return v;
    }
    let inf = c.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    v * (inf / e)
}

/// `count` pairs of points in the ball of `radius` in dimension `n` from a Latin-hypercube design.
pub fn ball_pairs(seed: u64, count: usize, n: usize, radius: f64) -> Vec<(Vector, Vector)> {
    latin_hypercube(seed, count, 2 * n)
        .into_iter()
        .map(|p| {
            let c: Vec<f64> = p.iter().map(|u| 2.0 * u - 1.0).collect();
            (cube_to_ball(&c[..n]) * radius, cube_to_ball(&c[n..]) * radius)
        })
        .collect()
}

/// `count` points in the ball of `radius` in dimension `n` from a Latin-hypercube design.
pub fn ball_points(seed: u64, count: usize, n: usize, radius: f64) -> Vec<Vector> {
    latin_hypercube(seed, count, n)
        .into_iter()
        .map(|p| {
            let c: Vec<f64> = p.iter().map(|u| 2.0 * u - 1.0).collect();
            cube_to_ball(&c) * radius
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypercube_strata_are_filled_once() {
        let pts = latin_hypercube(7, 50, 3);
        for d in 0..3 {
            let mut seen = [false; 50];
            for p in &pts {
                let s = (p[d] * 50.0) as usize;
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
    }

    #[test]
    fn ball_points_stay_inside() {
        for p in ball_points(3, 200, 3, 5.0) {
            assert!(p.norm() <= 5.0 + 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(ball_pairs(11, 20, 2, 1.0), ball_pairs(11, 20, 2, 1.0));
    }
}
