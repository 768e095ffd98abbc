//! Conical-product quadrature on the reference simplex.

use super::jacobi::gauss_jacobi_unit;

/// Quadrature rule on the unit reference simplex, exact for all
/// polynomials of total degree <= `degree`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub degree: usize,
    /// Flattened point coordinates, `num_points * dim`.
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn num_points(&self) -> usize {
        self.weights.len()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }
}

/// Collapsed-coordinate (Duffy) Gauss–Jacobi product rule: the axis
/// Jacobians (1-u)^alpha are absorbed into the 1D weights, so
/// ceil((q+1)/2) points per direction integrate total degree q exactly.
pub fn simplex_quadrature(dim: usize, degree: usize) -> QuadratureRule {
    assert!(dim == 2 || dim == 3);
    let n1 = (degree + 2) / 2;
    let n1 = n1.max(1);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    if dim == 2 {
        let (t1, w1) = gauss_jacobi_unit(n1, 1);
        let (t2, w2) = gauss_jacobi_unit(n1, 0);
        for (a, wa) in t1.iter().zip(&w1) {
            for (b, wb) in t2.iter().zip(&w2) {
                points.push(*a);
                points.push(b * (1.0 - a));
                weights.push(wa * wb);
            }
        }
    } else {
        let (t1, w1) = gauss_jacobi_unit(n1, 2);
        let (t2, w2) = gauss_jacobi_unit(n1, 1);
        let (t3, w3) = gauss_jacobi_unit(n1, 0);
        for (a, wa) in t1.iter().zip(&w1) {
            for (b, wb) in t2.iter().zip(&w2) {
                for (c, wc) in t3.iter().zip(&w3) {
                    points.push(*a);
                    points.push(b * (1.0 - a));
                    points.push(c * (1.0 - a) * (1.0 - b));
                    weights.push(wa * wb * wc);
                }
            }
        }
    }
    QuadratureRule {
        dim,
        degree,
        points,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|v| v as f64).product::<f64>().max(1.0)
    }

    /// Dirichlet integral of x^m y^n (z^p) over the unit simplex.
    fn exact_monomial(dim: usize, e: &[usize]) -> f64 {
        let top: f64 = e.iter().map(|&m| factorial(m)).product();
        top / factorial(e.iter().sum::<usize>() + dim)
    }

    #[test]
    fn point_counts_match_contract() {
        for (dim, degree) in [(2usize, 0usize), (2, 1), (2, 6), (3, 0), (3, 5), (3, 10)] {
            let rule = simplex_quadrature(dim, degree);
            let n1 = ((degree + 1) + 1) / 2;
            assert_eq!(rule.num_points(), n1.max(1).pow(dim as u32));
        }
    }

    #[test]
    fn triangle_weights_sum_to_area() {
        let rule = simplex_quadrature(2, 1);
        let sum: f64 = rule.weights.iter().sum();
        assert!((sum - 0.5).abs() < 1e-14);
    }

    #[test]
    fn tet_degree_zero_is_centroid() {
        let rule = simplex_quadrature(3, 0);
        assert_eq!(rule.num_points(), 1);
        assert!((rule.weights[0] - 1.0 / 6.0).abs() < 1e-14);
        for c in rule.point(0) {
            assert!((c - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn tet_degree_six_integrates_x2y2z2() {
        let rule = simplex_quadrature(3, 6);
        let mut s = 0.0;
        for q in 0..rule.num_points() {
            let p = rule.point(q);
            s += rule.weights[q] * p[0] * p[0] * p[1] * p[1] * p[2] * p[2];
        }
        // m! n! p! / (m+n+p+d)! = 8/362880 = 1/45360
        assert!((s - 1.0 / 45360.0).abs() < 1e-16);
    }

    #[test]
    fn monomial_exactness_up_to_degree() {
        for dim in [2usize, 3] {
            for degree in 0..=10usize {
                let rule = simplex_quadrature(dim, degree);
                for m in 0..=degree {
                    for n in 0..=(degree - m) {
                        let ps: Vec<usize> = if dim == 3 {
                            (0..=(degree - m - n)).collect()
                        } else {
                            vec![0]
                        };
                        for p in ps {
                            let exps = [m, n, p];
                            let mut s = 0.0;
                            for q in 0..rule.num_points() {
                                let pt = rule.point(q);
                                let mut term = rule.weights[q];
                                for a in 0..dim {
                                    term *= pt[a].powi(exps[a] as i32);
                                }
                                s += term;
                            }
                            let exact = exact_monomial(dim, &exps[..dim]);
                            assert!(
                                (s - exact).abs() <= 1e-12 * exact.max(1e-30),
                                "dim={dim} deg={degree} exps={exps:?}: {s} vs {exact}"
                            );
                        }
                    }
                }
            }
        }
    }
}
