//! Diagonal approximations to inverse Fisher information for the β-model,
//! with the published max-norm and row-sum bounds evaluated next to the
//! measured quantities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::beta_model::{bn_cn, fisher_info};
use crate::data::MIN_NODES;
use crate::error::{Error, Result};
use crate::logistic::mu_prime;

/// Measured approximation error against its bound.
///
/// `max_abs_error` is the larger of `|V^-1 - S|_max` and the same quantity
/// for the lower-right block (or `|Ṽ^-1 - S̃|_max` for the tied system).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub n: usize,
    pub r: usize,
    pub b_n: f64,
    pub c_n: f64,
    pub max_abs_error: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub linf_inverse: f64,
    pub linf_bound: f64,
    pub linf_satisfied: bool,
    /// `c_n / (2 (n-1))`, which `|V^-1|_inf` can never fall below.
    pub linf_lower_bound: f64,
    /// Lower-right block row-sum norm and its bound; absent for the tied system.
    pub block_linf_inverse: Option<f64>,
    pub block_linf_bound: Option<f64>,
    pub reconstruction_error: f64,
    pub singular: bool,
}

impl ApproxReport {
    /// True when every inequality in the report holds.
    pub fn all_satisfied(&self) -> bool {
        let block = match (self.block_linf_inverse, self.block_linf_bound) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        };
        self.satisfied && self.linf_satisfied && self.linf_inverse >= self.linf_lower_bound && block
    }
}

/// Information matrix of the parameterisation `(β_1 tied over 0..r, β_r, ..., β_{n-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousInfo {
    pub r: usize,
    pub tilde_v11: f64,
    pub tilde_v1j: Vec<f64>,
    pub v22: DMatrix<f64>,
}

impl HomogeneousInfo {
    /// The assembled `(n-r+1)` square matrix Ṽ.
    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.v22.nrows() + 1;
        let mut out = DMatrix::zeros(m, m);
        out[(0, 0)] = self.tilde_v11;
        for (k, &v) in self.tilde_v1j.iter().enumerate() {
            out[(0, k + 1)] = v;
            out[(k + 1, 0)] = v;
        }
        out.view_mut((1, 1), (m - 1, m - 1)).copy_from(&self.v22);
        out
    }

    /// Diagonal of S̃.
    pub fn s_tilde(&self) -> Vec<f64> {
        std::iter::once(1.0 / self.tilde_v11).chain(self.v22.diagonal().iter().map(|v| 1.0 / v)).collect()
    }
}

fn check_beta(beta: &[f64], r: usize) -> Result<()> {
    let n = beta.len();
    if n < MIN_NODES {
        return Err(Error::invalid(format!("need at least {MIN_NODES} nodes, got {n}")));
    }
    if r >= n {
        return Err(Error::invalid(format!("block offset r={r} must be below n={n}")));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta has non-finite entries"));
    }
    Ok(())
}

/// Reciprocal diagonal `1/v_ii` for `i >= r`.
pub fn diag_approx(v: &DMatrix<f64>, r: usize) -> Result<Vec<f64>> {
    if r >= v.nrows() {
        return Err(Error::invalid(format!("block offset r={r} must be below {}", v.nrows())));
    }
    (r..v.nrows())
        .map(|i| {
            let d = v[(i, i)];
            if d == 0.0 || !d.is_finite() {
                Err(Error::Numerical(format!("diagonal entry {i} is {d}")))
            } else {
                Ok(1.0 / d)
            }
        })
        .collect()
}

/// Whether `V` lies in the class with `v_ii = Σ_{j≠i} v_ij` and `m <= v_ij <= big_m` off the diagonal.
pub fn in_matrix_class(v: &DMatrix<f64>, m: f64, big_m: f64, tol: f64) -> bool {
    let n = v.nrows();
    if v.ncols() != n {
        return false;
    }
    (0..n).all(|i| {
        let mut row = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let x = v[(i, j)];
            if x < m - tol || x > big_m + tol || (x - v[(j, i)]).abs() > tol {
                return false;
            }
            row += x;
        }
        (v[(i, i)] - row).abs() <= tol * n as f64
    })
}

fn invert(v: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    match v.clone().cholesky() {
        Some(ch) => Some(ch.inverse()),
        None => v.clone().try_inverse(),
    }
}

fn max_abs_minus_diag(inv: &DMatrix<f64>, diag: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..inv.nrows() {
        for j in 0..inv.ncols() {
            let s = if i == j { diag[i] } else { 0.0 };
            worst = worst.max((inv[(i, j)] - s).abs());
        }
    }
    worst
}

fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn reconstruction(v: &DMatrix<f64>, inv: &DMatrix<f64>) -> f64 {
    let id = DMatrix::<f64>::identity(v.nrows(), v.ncols());
    (v * inv - id).amax()
}

fn singular_report(n: usize, r: usize, b_n: f64, c_n: f64, bound: f64, linf_bound: f64) -> ApproxReport {
    ApproxReport {
        n,
        r,
        b_n,
        c_n,
        max_abs_error: f64::NAN,
        bound,
        satisfied: false,
        linf_inverse: f64::NAN,
        linf_bound,
        linf_satisfied: false,
        linf_lower_bound: c_n / (2.0 * (n as f64 - 1.0)),
        block_linf_inverse: None,
        block_linf_bound: None,
        reconstruction_error: f64::INFINITY,
        singular: true,
    }
}

/// `2 b^2 / (c (n-1)^2) * (n b / (2 (n-2) c) + 1/2)`.
pub fn inverse_error_bound(n: usize, b_n: f64, c_n: f64) -> f64 {
    let nf = n as f64;
    2.0 * b_n * b_n / (c_n * (nf - 1.0).powi(2)) * (nf * b_n / (2.0 * (nf - 2.0) * c_n) + 0.5)
}

/// `b / ((n-1)^2 c^2) * (b n / (2 (n-2) c) + 1/2)`.
pub fn homogeneous_error_bound(n: usize, b_n: f64, c_n: f64) -> f64 {
    let nf = n as f64;
    b_n / ((nf - 1.0).powi(2) * c_n * c_n) * (b_n * nf / (2.0 * (nf - 2.0) * c_n) + 0.5)
}

/// Compares `V^-1` and `V22^-1` (the block past the first `r` rows) with
/// their reciprocal-diagonal approximations.
pub fn check_inverse_bound(beta: &[f64], r: usize) -> Result<ApproxReport> {
    check_beta(beta, r)?;
    let n = beta.len();
    let nf = n as f64;
    let diag = bn_cn(beta);
    let (b, c) = (diag.b_n, diag.c_n);
    let bound = inverse_error_bound(n, b, c);
    let linf_bound = 3.0 * b / (2.0 * nf - 1.0);

    let v = fisher_info(beta);
    let Some(inv) = invert(&v) else {
        return Ok(singular_report(n, r, b, c, bound, linf_bound));
    };
    let v22 = v.view((r, r), (n - r, n - r)).into_owned();
    let Some(inv22) = invert(&v22) else {
        return Ok(singular_report(n, r, b, c, bound, linf_bound));
    };
    let err = max_abs_minus_diag(&inv, &diag_approx(&v, 0)?);
    let err22 = max_abs_minus_diag(&inv22, &diag_approx(&v, r)?);
    let max_abs_error = err.max(err22);
    let linf_inverse = row_sum_norm(&inv);
    let rf = r as f64;
    let block_bound = b / (nf - 1.0) * (1.0 + (nf - rf - 2.0) / (2.0 * nf - rf - 1.0));

    Ok(ApproxReport {
        n,
        r,
        b_n: b,
        c_n: c,
        max_abs_error,
        bound,
        satisfied: max_abs_error <= bound,
        linf_inverse,
        linf_bound,
        linf_satisfied: linf_inverse <= linf_bound,
        linf_lower_bound: c / (2.0 * (nf - 1.0)),
        block_linf_inverse: Some(row_sum_norm(&inv22)),
        block_linf_bound: Some(block_bound),
        reconstruction_error: reconstruction(&v, &inv).max(reconstruction(&v22, &inv22)),
        singular: false,
    })
}

/// Builds Ṽ for a parameter vector whose first `r` entries are equal.
pub fn build_homogeneous_info(beta: &[f64], r: usize) -> Result<HomogeneousInfo> {
    check_beta(beta, r)?;
    if r == 0 {
        return Err(Error::invalid("the tied system needs r >= 1"));
    }
    let b1 = beta[0];
    let scale = b1.abs().max(1.0);
    if let Some(k) = beta[..r].iter().position(|&b| (b - b1).abs() > 1e-12 * scale) {
        return Err(Error::invalid(format!("leading block is not tied: beta[{k}] differs from beta[0]")));
    }
    let n = beta.len();
    let rf = r as f64;
    let tilde_v1j: Vec<f64> = beta[r..].iter().map(|&bj| rf * mu_prime(b1 + bj)).collect();
    let tilde_v11 = 2.0 * rf * (rf - 1.0) * mu_prime(2.0 * b1) + tilde_v1j.iter().sum::<f64>();
    let v = fisher_info(beta);
    let v22 = v.view((r, r), (n - r, n - r)).into_owned();
    Ok(HomogeneousInfo { r, tilde_v11, tilde_v1j, v22 })
}

/// Compares `Ṽ^-1` with `S̃`. For `r = 0` the tied system is `V` itself.
pub fn check_homogeneous_bound(beta: &[f64], r: usize) -> Result<ApproxReport> {
    check_beta(beta, r)?;
    let n = beta.len();
    let nf = n as f64;
    let rf = r as f64;
    let diag = bn_cn(beta);
    let (b, c) = (diag.b_n, diag.c_n);
    let bound = homogeneous_error_bound(n, b, c);
    let linf_bound = b * (3.0 * nf - 2.0 * rf - 1.0) / ((nf - 1.0) * (2.0 * nf - rf - 1.0));

    let (vt, st) = if r == 0 {
        let v = fisher_info(beta);
        let s = diag_approx(&v, 0)?;
        (v, s)
    } else {
        let info = build_homogeneous_info(beta, r)?;
        (info.matrix(), info.s_tilde())
    };
    let Some(inv) = invert(&vt) else {
        return Ok(singular_report(n, r, b, c, bound, linf_bound));
    };
    let max_abs_error = max_abs_minus_diag(&inv, &st);
    let linf_inverse = row_sum_norm(&inv);
    Ok(ApproxReport {
        n,
        r,
        b_n: b,
        c_n: c,
        max_abs_error,
        bound,
        satisfied: max_abs_error <= bound,
        linf_inverse,
        linf_bound,
        linf_satisfied: linf_inverse <= linf_bound,
        linf_lower_bound: c / (2.0 * (nf - 1.0)),
        block_linf_inverse: None,
        block_linf_bound: None,
        reconstruction_error: reconstruction(&vt, &inv),
        singular: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reciprocal_diagonals() {
        let v = fisher_info(&[0.0; 3]);
        assert_eq!(diag_approx(&v, 0).unwrap(), vec![2.0; 3]);
        assert_eq!(diag_approx(&v, 1).unwrap(), vec![2.0; 2]);
        let v = fisher_info(&[0.0; 100]);
        assert!(diag_approx(&v, 0).unwrap().iter().all(|&s| (s - 4.0 / 99.0).abs() < 1e-15));
        assert!(diag_approx(&v, 100).is_err());
    }

    #[test]
    fn error_bound_value_at_zero() {
        let report = check_inverse_bound(&[0.0; 10], 0).unwrap();
        let expected = 2.0 * 16.0 / (4.0 * 81.0) * (10.0 * 4.0 / (2.0 * 8.0 * 4.0) + 0.5);
        assert!((report.bound - expected).abs() < 1e-15);
        assert!(report.satisfied);
        assert!(report.reconstruction_error < 1e-9);
    }

    #[test]
    fn bound_does_not_depend_on_r() {
        let beta: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = check_inverse_bound(&beta, 0).unwrap();
        let b = check_inverse_bound(&beta, 1).unwrap();
        assert_eq!(a.bound, b.bound);
        assert_eq!(check_homogeneous_bound(&beta, 0).unwrap().bound, a.bound / (2.0 * a.b_n * a.c_n));
    }

    #[test]
    fn row_sum_norm_at_zero_has_closed_form() {
        // with all off-diagonals equal the inverse is explicit
        for n in [5usize, 10, 50] {
            let nf = n as f64;
            let report = check_inverse_bound(&vec![0.0; n], 0).unwrap();
            let exact = (6.0 * nf - 8.0) / ((nf - 1.0) * (nf - 2.0));
            assert!((report.linf_inverse - exact).abs() < 1e-9 * exact);
            assert!(report.linf_inverse >= report.linf_lower_bound);
        }
    }

    #[test]
    fn tied_information_values() {
        let info = build_homogeneous_info(&[0.0; 4], 2).unwrap();
        assert_eq!(info.tilde_v11, 2.0);
        assert_eq!(info.tilde_v1j, vec![0.5, 0.5]);
        let info = build_homogeneous_info(&[0.0; 100], 50).unwrap();
        assert_eq!(info.tilde_v11, (2.0 * 50.0 * 49.0 + 50.0 * 50.0) / 4.0);
        assert!(build_homogeneous_info(&[0.0, 0.1, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn single_tie_is_plain_information() {
        let beta = [0.3, -0.2, 0.5, 0.1, -0.4];
        let info = build_homogeneous_info(&beta, 1).unwrap();
        let v = fisher_info(&beta);
        assert!((info.matrix() - v).amax() < 1e-15);
    }

    #[test]
    fn tied_first_diagonal_is_close_to_reciprocal() {
        let mut beta: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        beta[..3].fill(0.2);
        let info = build_homogeneous_info(&beta, 3).unwrap();
        let inv = info.matrix().cholesky().unwrap().inverse();
        let report = check_homogeneous_bound(&beta, 3).unwrap();
        assert!((inv[(0, 0)] - 1.0 / info.tilde_v11).abs() <= report.max_abs_error);
        assert!(report.reconstruction_error < 1e-9);
    }

    #[test]
    fn fisher_matrix_class() {
        let beta = [0.3, -0.2, 0.5, 0.1, -0.4];
        let v = fisher_info(&beta);
        let d = bn_cn(&beta);
        assert!(in_matrix_class(&v, 1.0 / d.b_n, 1.0 / d.c_n, 1e-12));
        assert!(!in_matrix_class(&v, 1.0 / d.b_n + 0.01, 1.0 / d.c_n, 1e-12));
    }
}
