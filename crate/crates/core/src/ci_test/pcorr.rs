use nalgebra::{Cholesky, DMatrix};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{CiError, CiMethod, CiTestResult};

/// Population partial correlations at or below this magnitude count as zero.
pub const EXACT_PCORR_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PcorrMode {
    /// Covariance is exact; independent iff `|rho| <= EXACT_PCORR_TOL`.
    Exact,
    /// Covariance estimated from `n_samples` rows; Fisher z-test at `alpha`.
    Fisher { alpha: f64, n_samples: usize },
}

/// Sample covariance (divisor `m - 1`) of equally long columns.
pub fn column_covariance<C: AsRef<[f64]>>(cols: &[C]) -> Result<DMatrix<f64>, CiError> {
    let p = cols.len();
    let m = cols.first().map_or(0, |c| c.as_ref().len());
    if m < 2 || cols.iter().any(|c| c.as_ref().len() != m) {
        return Err(CiError::Shape("need at least two rows of equal length".into()));
    }
    let centred: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let c = c.as_ref();
            let mean = c.iter().sum::<f64>() / m as f64;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let s = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>() / (m - 1) as f64;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok(cov)
}

/// Partial correlation of variables `c` and `d` given `cond`, all indices
/// into `cov`, from the Schur complement of the conditioning block.
fn partial_corr(cov: &DMatrix<f64>, c: usize, d: usize, cond: &[usize]) -> Result<f64, CiError> {
    let n = cov.nrows();
    if cov.ncols() != n || c >= n || d >= n || c == d || cond.iter().any(|&k| k >= n || k == c || k == d) {
        return Err(CiError::Shape("partial correlation indices out of range or overlapping".into()));
    }
    let t = [c, d];
    let mut p = DMatrix::from_fn(2, 2, |i, j| cov[(t[i], t[j])]);
    if !cond.is_empty() {
        let szz = DMatrix::from_fn(cond.len(), cond.len(), |i, j| cov[(cond[i], cond[j])]);
        let szt = DMatrix::from_fn(cond.len(), 2, |i, j| cov[(cond[i], t[j])]);
        let chol = Cholesky::new(szz).ok_or(CiError::Singular)?;
        p -= szt.transpose() * chol.solve(&szt);
    }
    if !(p[(0, 0)] > 0.0 && p[(1, 1)] > 0.0) {
        return Err(CiError::Singular);
    }
    Ok((p[(0, 1)] / (p[(0, 0)] * p[(1, 1)]).sqrt()).clamp(-1.0, 1.0))
}

/// Gaussian conditional-independence test. The statistic is `|rho|`.
pub fn partial_corr_ci(
    cov: &DMatrix<f64>,
    c: usize,
    d: usize,
    cond: &[usize],
    mode: PcorrMode,
) -> Result<CiTestResult, CiError> {
    let rho = partial_corr(cov, c, d, cond)?;
    match mode {
        PcorrMode::Exact => Ok(CiTestResult::from_threshold(rho.abs(), EXACT_PCORR_TOL, CiMethod::PartialCorr)),
        PcorrMode::Fisher { alpha, n_samples } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CiError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            let need = cond.len() + 4;
            if n_samples < need {
                return Err(CiError::TooFewSamples { got: n_samples, need });
            }
            let z = rho.atanh() * ((n_samples - cond.len() - 3) as f64).sqrt();
            let p = 2.0 * Normal::standard().sf(z.abs());
            Ok(CiTestResult::from_p_value(rho.abs(), p.clamp(0.0, 1.0), alpha, CiMethod::PartialCorr))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_covariance_is_independent() {
        let cov = DMatrix::<f64>::identity(4, 4);
        let r = partial_corr_ci(&cov, 0, 3, &[1, 2], PcorrMode::Exact).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.independent);
    }

    #[test]
    fn markov_chain_partial_correlation() {
        // x0 -> x1 -> x2 with unit-variance innovations.
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 3.0]);
        let r = partial_corr_ci(&cov, 0, 2, &[1], PcorrMode::Exact).unwrap();
        assert!(r.statistic < 1e-14);
        let r = partial_corr_ci(&cov, 0, 2, &[], PcorrMode::Exact).unwrap();
        assert!((r.statistic - 1.0 / 3f64.sqrt()).abs() < 1e-14);
        assert!(!r.independent);
    }

    #[test]
    fn fisher_p_value_matches_reference() {
        // rho = 0.2, n = 103, no conditioning: z = atanh(0.2) * 10 = 2.0273...
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let r = partial_corr_ci(&cov, 0, 1, &[], PcorrMode::Fisher { alpha: 0.05, n_samples: 103 }).unwrap();
        assert!((r.p_value.unwrap() - 0.042_629_131).abs() < 1e-8, "{r:?}");
        assert!(!r.independent);
    }

    #[test]
    fn singular_conditioning_block() {
        let cov = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 1.0, 0.0, //
                0.0, 1.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(partial_corr_ci(&cov, 0, 3, &[1, 2], PcorrMode::Exact), Err(CiError::Singular));
    }

    #[test]
    fn sample_covariance_of_columns() {
        let cov = column_covariance(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((cov[(0, 1)] - 2.0).abs() < 1e-15);
    }
}
