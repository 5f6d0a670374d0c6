//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `|a − b| / (|a| + |b| + 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-8)
}

/// Up to `count` distinct coordinates in `0..n`, sorted, chosen by `seed`.
pub fn sample_coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, count.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Largest relative error between `analytic[i]` and the central difference
/// `(f(p + h·e_i) − f(p − h·e_i)) / 2h` over the given coordinates.
///
/// `f` is evaluated in `f64`; callers checking a lower-precision gradient
/// pass that gradient widened to `f64`.
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    coords: &[usize],
) -> f64 {
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let cd = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], cd));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        // f(p) = Σ (i+1) p_i²  ⇒  ∂f/∂p_i = 2 (i+1) p_i
        let f = |p: &[f64]| {
            p.iter()
                .enumerate()
                .map(|(i, v)| (i as f64 + 1.0) * v * v)
                .sum()
        };
        let p = vec![0.5, -1.5, 2.0, 0.25];
        let g: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * (i as f64 + 1.0) * v)
            .collect();
        let err = finite_diff_check(f, &p, &g, 1e-3, &[0, 1, 2, 3]);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |p: &[f64]| p[0] * p[0];
        let err = finite_diff_check(f, &[1.0], &[3.0], 1e-3, &[0]);
        assert!(err > 0.1);
    }

    #[test]
    fn coords_are_distinct_and_reproducible() {
        let a = sample_coords(1000, 200, 5);
        assert_eq!(a.len(), 200);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_coords(1000, 200, 5));
        assert_eq!(sample_coords(3, 10, 0), vec![0, 1, 2]);
    }
}
