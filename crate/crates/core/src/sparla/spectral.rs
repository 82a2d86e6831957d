//! Power iteration for the dominant eigenvalue magnitude of a linear operator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const MAX_RESTARTS: u64 = 4;

fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= norm);
    x
}

/// Estimates `ρ(A)` by `iters` steps of power iteration on `apply(x, y): y = A x`.
///
/// Returns `‖A x‖` for the final unit iterate. This approaches the dominant
/// eigenvalue magnitude from below for symmetric operators and is only as good
/// as the eigenvalue gap allows otherwise. A start vector annihilated by `A`
/// triggers a restart from a new seed; after a few failed restarts the
/// operator is reported as zero.
pub fn spectral_radius_estimate(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    n: usize,
    iters: usize,
    seed: u64,
) -> f64 {
    assert!(iters >= 1, "power iteration needs at least one step");
    if n == 0 {
        return 0.0;
    }
    let mut y = vec![0.0; n];
    'restart: for attempt in 0..MAX_RESTARTS {
        let mut x = random_unit(n, seed.wrapping_add(attempt));
        let mut rho = 0.0;
        for _ in 0..iters {
            apply(&x, &mut y);
            rho = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rho == 0.0 || !rho.is_finite() {
                continue 'restart;
            }
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi = yi / rho;
            }
        }
        return rho;
    }
    0.0
}
