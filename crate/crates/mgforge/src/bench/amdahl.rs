//! Amdahl's-law fit t = s + p/n by least squares.

use crate::error::{Error, Result};

/// Fitted serial/parallel split of strong-scaling timings.
#[derive(Debug, Clone)]
pub struct AmdahlFit {
    /// Seconds of non-parallelizable work.
    pub serial: f64,
    /// Seconds of perfectly parallel work (at n = 1).
    pub parallel: f64,
    /// Euclidean norm of the fit residual.
    pub residual: f64,
    pub points: Vec<(f64, f64)>,
}

/// Linear least squares in the basis {1, 1/n} over (n, t) samples.
pub fn fit_amdahl(points: &[(f64, f64)]) -> Result<AmdahlFit> {
    let mut distinct: Vec<f64> = points.iter().map(|&(n, _)| n).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateFit);
    }
    // normal equations for [s, p]
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(n, t) in points {
        let inv = 1.0 / n;
        a11 += 1.0;
        a12 += inv;
        a22 += inv * inv;
        b1 += t;
        b2 += t * inv;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-300 {
        return Err(Error::DegenerateFit);
    }
    let serial = (b1 * a22 - b2 * a12) / det;
    let parallel = (a11 * b2 - a12 * b1) / det;
    let residual = points
        .iter()
        .map(|&(n, t)| {
            let e = t - serial - parallel / n;
            e * e
        })
        .sum::<f64>()
        .sqrt();
    Ok(AmdahlFit {
        serial,
        parallel,
        residual,
        points: points.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_model_recovery() {
        let points: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&n| (n, 10.0 + 100.0 / n))
            .collect();
        let fit = fit_amdahl(&points).unwrap();
        assert!((fit.serial - 10.0).abs() < 1e-10);
        assert!((fit.parallel - 100.0).abs() < 1e-10);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn noisy_fit_matches_normal_equations_oracle() {
        // deterministic noise
        let mut state = 0x5ca1ab1e_u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let points: Vec<(f64, f64)> = (1..=8)
            .map(|n| {
                let n = n as f64;
                (n, 3.0 + 40.0 / n + 0.05 * next())
            })
            .collect();
        let fit = fit_amdahl(&points).unwrap();

        // independent oracle: accumulate the normal equations in a 2x2
        // dense solve written separately
        let m = points.len() as f64;
        let sx: f64 = points.iter().map(|p| 1.0 / p.0).sum();
        let sxx: f64 = points.iter().map(|p| 1.0 / (p.0 * p.0)).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxy: f64 = points.iter().map(|p| p.1 / p.0).sum();
        let det = m * sxx - sx * sx;
        let s_oracle = (sy * sxx - sxy * sx) / det;
        let p_oracle = (m * sxy - sx * sy) / det;
        assert!((fit.serial - s_oracle).abs() < 1e-10);
        assert!((fit.parallel - p_oracle).abs() < 1e-10);
    }

    #[test]
    fn single_point_is_degenerate() {
        assert!(matches!(
            fit_amdahl(&[(4.0, 1.0)]),
            Err(Error::DegenerateFit)
        ));
        assert!(matches!(
            fit_amdahl(&[(4.0, 1.0), (4.0, 1.1)]),
            Err(Error::DegenerateFit)
        ));
    }
}
