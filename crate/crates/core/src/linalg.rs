//! Dense helpers for the small symmetric matrices used by Gaussian targets.
//! Matrices are row-major `d * d` slices.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    if a.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: a.len(),
        });
    }
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "matrix is not positive definite".into(),
                    ));
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Inverse of an SPD matrix via its Cholesky factor.
pub fn spd_inverse(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let l = cholesky(a, d)?;
    // invert L by forward substitution, then A^{-1} = L^{-T} L^{-1}
    let mut linv = vec![0.0; d * d];
    for col in 0..d {
        for i in col..d {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                sum -= l[i * d + k] * linv[k * d + col];
            }
            linv[i * d + col] = sum / l[i * d + i];
        }
    }
    let mut inv = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in i.max(j)..d {
                s += linv[k * d + i] * linv[k * d + j];
            }
            inv[i * d + j] = s;
        }
    }
    Ok(inv)
}

/// log-determinant of an SPD matrix.
pub fn spd_log_det(a: &[f64], d: usize) -> Result<f64> {
    let l = cholesky(a, d)?;
    Ok((0..d).map(|i| 2.0 * l[i * d + i].ln()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_corr_gauss_covariance() {
        let inv = spd_inverse(&[2.0, 1.5, 1.5, 1.6], 2).unwrap();
        let expect = [1.6 / 0.95, -1.5 / 0.95, -1.5 / 0.95, 2.0 / 0.95];
        for (a, b) in inv.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((spd_log_det(&[2.0, 1.5, 1.5, 1.6], 2).unwrap() - 0.95_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }
}
