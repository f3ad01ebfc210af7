//! Dense linear algebra used by the local explainers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ClimaxError, Result};

/// Weighted ridge solution on a column subset of a design matrix.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    /// Coefficients, aligned with the requested columns.
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Weighted residual sum of squares, Σ w (y - b - xᵀφ)².
    pub rss: f64,
}

/// Cholesky factorization of a symmetric positive-definite matrix, or
/// `SingularSystem` when it is not numerically positive definite.
pub fn spd_factor(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let chol = Cholesky::new(a).ok_or(ClimaxError::SingularSystem)?;
    // reject pivots that are pure round-off
    let l = chol.l_dirty();
    for i in 0..n {
        if !(l[(i, i)] * l[(i, i)] > scale * 1e-13) {
            return Err(ClimaxError::SingularSystem);
        }
    }
    Ok(chol)
}

/// Minimizes Σ_i w_i (y_i − b − φᵀx_i)² + λ‖φ‖² over the columns `cols` of
/// `design`. With `intercept = false`, b is fixed at zero. The intercept is
/// never penalized.
pub fn weighted_ridge(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    lambda: f64,
    intercept: bool,
    cols: &[usize],
) -> Result<RidgeFit> {
    let n = design.nrows();
    if response.len() != n || weights.len() != n {
        return Err(ClimaxError::Dimension { expected: n, actual: response.len().min(weights.len()) });
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(ClimaxError::Config(format!("ridge strength must be >= 0, got {lambda}")));
    }
    let p = cols.len();
    let wsum: f64 = weights.iter().sum();

    // weighted centering folds the unpenalized intercept out of the system
    let (xbar, ybar) = if intercept && wsum > 0.0 {
        let xbar: Vec<f64> = cols
            .iter()
            .map(|&c| (0..n).map(|i| weights[i] * design[(i, c)]).sum::<f64>() / wsum)
            .collect();
        let ybar = (0..n).map(|i| weights[i] * response[i]).sum::<f64>() / wsum;
        (xbar, ybar)
    } else {
        (vec![0.0; p], 0.0)
    };

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        for (a, &c) in cols.iter().enumerate() {
            row[a] = design[(i, c)] - xbar[a];
        }
        let yc = response[i] - ybar;
        for a in 0..p {
            let wa = w * row[a];
            rhs[a] += wa * yc;
            for b in 0..=a {
                gram[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
        gram[(a, a)] += lambda;
    }

    let coef: Vec<f64> = if p == 0 {
        Vec::new()
    } else {
        let chol = spd_factor(gram)?;
        chol.solve(&rhs).iter().copied().collect()
    };
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(ClimaxError::SingularSystem);
    }
    let b = if intercept {
        ybar - xbar.iter().zip(&coef).map(|(m, c)| m * c).sum::<f64>()
    } else {
        0.0
    };
    let rss = (0..n)
        .map(|i| {
            let pred = b + cols.iter().zip(&coef).map(|(&c, k)| design[(i, c)] * k).sum::<f64>();
            weights[i] * (response[i] - pred).powi(2)
        })
        .sum();
    Ok(RidgeFit { coef, intercept: b, rss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_closed_form_without_intercept() {
        // (zᵀz + 1)⁻¹ zᵀy with z = y = 1⁴ gives 4/5
        let z = DMatrix::from_element(4, 1, 1.0);
        let fit = weighted_ridge(&z, &[1.0; 4], &[1.0; 4], 1.0, false, &[0]).unwrap();
        assert!((fit.coef[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn exact_line_is_recovered_without_penalty() {
        let z = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let fit = weighted_ridge(&z, &[2.0, 4.0, 6.0], &[1.0; 3], 0.0, true, &[0]).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn collinear_design_without_penalty_is_singular() {
        let z = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let err = weighted_ridge(&z, &[1.0, 2.0, 3.0], &[1.0; 3], 0.0, true, &[0, 1]);
        assert!(matches!(err, Err(ClimaxError::SingularSystem)));
    }

    #[test]
    fn empty_column_set_fits_weighted_mean() {
        let z = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let fit = weighted_ridge(&z, &[1.0, 3.0], &[1.0, 3.0], 1.0, true, &[]).unwrap();
        assert!((fit.intercept - 2.5).abs() < 1e-12);
    }
}
