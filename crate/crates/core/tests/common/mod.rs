#![allow(dead_code)]

use kreinext::numlin::{GridSpace, KernelOperator};

/// Relative Hilbert-Schmidt distance `|a - b| / |b|`.
pub fn rel_hs(space: &GridSpace, a: &KernelOperator, b: &KernelOperator) -> f64 {
    a.sub(b).hs_norm(space) / b.hs_norm(space)
}

/// Positive eigenvalues of `-u''` on (0,1) with `u'(0) = u'(1) = u(1) - u(0)`.
///
/// With `u = A cos kx + B sin kx` the two conditions give the determinant
/// `k (2 - 2 cos k - k sin k)`; its positive roots are bracketed on a fine
/// scan and refined by bisection.
pub fn krein_interval_eigenvalues(count: usize) -> Vec<f64> {
    let f = |k: f64| 2.0 - 2.0 * k.cos() - k * k.sin();
    let mut out = vec![];
    let step = 1e-3;
    let mut a = 0.5;
    while out.len() < count {
        let b = a + step;
        if f(a) * f(b) < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if f(lo) * f(m) <= 0.0 {
                    hi = m;
                } else {
                    lo = m;
                }
            }
            let k = 0.5 * (lo + hi);
            out.push(k * k);
        }
        a = b;
    }
    out
}
