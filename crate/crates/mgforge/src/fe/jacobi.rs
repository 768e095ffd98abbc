//! Classical Jacobi polynomials and Gauss–Jacobi rules with weight
//! (1-x)^alpha on [-1, 1].

/// Value of the classical Jacobi polynomial P_n^{(alpha,beta)} at x.
pub fn jacobi(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut pm1 = 1.0;
    let mut p = 0.5 * (alpha - beta) + 0.5 * (alpha + beta + 2.0) * x;
    for k in 2..=n {
        let kf = k as f64;
        let den = 2.0 * kf * (kf + alpha + beta) * (2.0 * kf + alpha + beta - 2.0);
        let b = (2.0 * kf + alpha + beta - 1.0) * (alpha * alpha - beta * beta);
        let c = (2.0 * kf + alpha + beta - 2.0)
            * (2.0 * kf + alpha + beta - 1.0)
            * (2.0 * kf + alpha + beta);
        let d = 2.0 * (kf + alpha - 1.0) * (kf + beta - 1.0) * (2.0 * kf + alpha + beta);
        let next = ((b + c * x) * p - d * pm1) / den;
        pm1 = p;
        p = next;
    }
    p
}

/// First derivative of P_n^{(alpha,beta)} at x.
pub fn jacobi_deriv(n: usize, alpha: f64, beta: f64, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    0.5 * (n as f64 + alpha + beta + 1.0) * jacobi(n - 1, alpha + 1.0, beta + 1.0, x)
}

/// Squared norm of P_n^{(alpha,0)} against the weight (1-x)^alpha.
fn norm_sq_beta0(n: usize, alpha: usize) -> f64 {
    // integer alpha, beta = 0 collapses the usual gamma expression
    2.0_f64.powi(alpha as i32 + 1) / (2.0 * n as f64 + alpha as f64 + 1.0)
}

/// Gauss–Jacobi rule: `n` nodes and weights integrating
/// `f(x) (1-x)^alpha` exactly on [-1, 1] for polynomial f of degree
/// <= 2n - 1. Nodes found by sign-change bracketing plus bisection;
/// weights from the Christoffel function of the orthonormalized family.
pub fn gauss_jacobi(n: usize, alpha: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let af = alpha as f64;
    let f = |x: f64| jacobi(n, af, 0.0, x);

    // bracket the n roots on a fine grid
    let grid = 64 * n + 64;
    let mut roots = Vec::with_capacity(n);
    let mut xa = -1.0 + 1e-14;
    let mut fa = f(xa);
    for g in 1..=grid {
        let xb = -1.0 + 2.0 * g as f64 / grid as f64 - 1e-14;
        let fb = f(xb);
        if fa == 0.0 {
            roots.push(xa);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi) = (xa, xb);
            let (mut flo, _) = (fa, fb);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
                if hi - lo <= f64::EPSILON * lo.abs().max(hi.abs()).max(1e-30) {
                    break;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        xa = xb;
        fa = fb;
    }
    assert_eq!(
        roots.len(),
        n,
        "expected {n} Gauss-Jacobi roots for alpha={alpha}"
    );

    let weights = roots
        .iter()
        .map(|&x| {
            let mut s = 0.0;
            for m in 0..n {
                let p = jacobi(m, af, 0.0, x);
                s += p * p / norm_sq_beta0(m, alpha);
            }
            1.0 / s
        })
        .collect();
    (roots, weights)
}

/// The same rule shifted to [0, 1] with weight (1-t)^alpha:
/// sum w_i f(t_i) ~= integral of f(t) (1-t)^alpha dt.
pub fn gauss_jacobi_unit(n: usize, alpha: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_jacobi(n, alpha);
    let scale = 0.5_f64.powi(alpha as i32 + 1);
    (
        x.iter().map(|&v| 0.5 * (v + 1.0)).collect(),
        w.iter().map(|&v| v * scale).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_values() {
        // P_2^{(0,0)}(x) = (3x^2 - 1)/2
        for x in [-0.7, 0.0, 0.3, 1.0] {
            assert!((jacobi(2, 0.0, 0.0, x) - 0.5 * (3.0 * x * x - 1.0)).abs() < 1e-14);
        }
        // derivative 3x
        assert!((jacobi_deriv(2, 0.0, 0.0, 0.4) - 1.2).abs() < 1e-14);
    }

    #[test]
    fn weight_sums() {
        for alpha in 0..=2usize {
            for n in 1..=8 {
                let (_, w) = gauss_jacobi(n, alpha);
                let expected = 2.0_f64.powi(alpha as i32 + 1) / (alpha as f64 + 1.0);
                let sum: f64 = w.iter().sum();
                assert!(
                    (sum - expected).abs() < 1e-13 * expected,
                    "alpha={alpha} n={n}: {sum} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn unit_interval_monomial_exactness() {
        // integral over [0,1] of t^k (1-t)^alpha dt = k! alpha! / (k+alpha+1)!
        let fact = |m: usize| (1..=m).map(|v| v as f64).product::<f64>().max(1.0);
        for alpha in 0..=2usize {
            for n in 1..=6 {
                let (t, w) = gauss_jacobi_unit(n, alpha);
                for k in 0..=(2 * n - 1) {
                    let quad: f64 = t
                        .iter()
                        .zip(&w)
                        .map(|(&ti, &wi)| wi * ti.powi(k as i32))
                        .sum();
                    let exact = fact(k) * fact(alpha) / fact(k + alpha + 1);
                    assert!(
                        (quad - exact).abs() < 1e-13,
                        "alpha={alpha} n={n} k={k}: {quad} vs {exact}"
                    );
                }
            }
        }
    }
}
