//! Small dense linear algebra on `Vec<Vec<f64>>` matrices.
//!
//! Everything here runs on desk-scale problems (dimensions in the tens),
//! so a cyclic Jacobi sweep and Gaussian elimination with partial
//! pivoting are all that is needed.

use crate::error::{Error, Result};

pub type Mat = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            let ail = a[i][l];
            for j in 0..m {
                out[i][j] += ail * b[l][j];
            }
        }
    }
    out
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Mat {
    let (n, m) = (a.len(), a[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..n {
        for j in 0..m {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn mean_vec(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            m[j] += r[j];
        }
    }
    let n = rows.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Population covariance (divides by N) of row observations.
pub fn covariance(rows: &[Vec<f64>]) -> Mat {
    let n = rows.len();
    let d = rows[0].len();
    let mu = mean_vec(rows);
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mu[i];
            for j in 0..d {
                c[i][j] += di * (r[j] - mu[j]);
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    c
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and matching eigenvectors as columns
/// of the returned matrix.
pub fn eigen_sym(a: &[Vec<f64>]) -> Result<(Vec<f64>, Mat)> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(Error::shape("eigen_sym", "not square"));
    }
    let mut m: Mat = a.to_vec();
    let mut v = identity(n);
    for sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i][j] * m[i][j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        if sweep == 199 {
            return Err(Error::InvalidArg("jacobi failed to converge".into()));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| m[i][i]).collect();
    let mut vecs = vec![vec![0.0; n]; n];
    for (new_col, &old_col) in idx.iter().enumerate() {
        for k in 0..n {
            vecs[k][new_col] = v[k][old_col];
        }
    }
    Ok((vals, vecs))
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    if b.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::shape("solve", "dimension mismatch"));
    }
    let mut m: Mat = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if m[piv][col].abs() < 1e-300 {
            return Err(Error::Singular(format!("pivot {col} ~ 0")));
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[col][col];
        for row in 0..col {
            x[row] -= m[row][col] * x[col];
        }
    }
    Ok(x)
}

/// V f(Λ) Vᵀ for a symmetric matrix.
fn eigen_map(a: &[Vec<f64>], f: impl Fn(f64) -> Result<f64>) -> Result<Mat> {
    let n = a.len();
    let (vals, vecs) = eigen_sym(a)?;
    let mapped: Vec<f64> = vals.iter().map(|&l| f(l)).collect::<Result<_>>()?;
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += vecs[i][k] * mapped[k] * vecs[j][k];
            }
            out[i][j] = s;
        }
    }
    Ok(out)
}

/// A^(-1/2) of a symmetric positive-definite matrix.
pub fn spd_inverse_sqrt(a: &[Vec<f64>]) -> Result<Mat> {
    eigen_map(a, |l| {
        if l <= 0.0 {
            Err(Error::Singular(format!("eigenvalue {l} <= 0")))
        } else {
            Ok(1.0 / l.sqrt())
        }
    })
}

/// A^(1/2) of a symmetric positive-semidefinite matrix; tiny negative
/// eigenvalues from roundoff are clamped to zero.
pub fn spd_sqrt(a: &[Vec<f64>]) -> Result<Mat> {
    eigen_map(a, |l| Ok(l.max(0.0).sqrt()))
}

/// log det of a symmetric positive-definite matrix.
pub fn spd_log_det(a: &[Vec<f64>]) -> Result<f64> {
    let (vals, _) = eigen_sym(a)?;
    let mut s = 0.0;
    for l in vals {
        if l <= 0.0 {
            return Err(Error::Singular(format!("eigenvalue {l} <= 0")));
        }
        s += l.ln();
    }
    Ok(s)
}

/// Principal angles (radians) between the column spans of two matrices
/// with orthonormalized columns, largest first.
pub fn principal_angles(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    let qa = gram_schmidt(a)?;
    let qb = gram_schmidt(b)?;
    // Singular values of Qaᵀ Qb are the cosines of the principal angles.
    let m = matmul(&transpose(&qa), &qb);
    let mtm = matmul(&transpose(&m), &m);
    let (vals, _) = eigen_sym(&mtm)?;
    Ok(vals
        .iter()
        .map(|&v| v.clamp(0.0, 1.0).sqrt().clamp(-1.0, 1.0).acos())
        .collect())
}

fn gram_schmidt(a: &[Vec<f64>]) -> Result<Mat> {
    let (n, k) = (a.len(), a[0].len());
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| (0..n).map(|i| a[i][j]).collect()).collect();
    for j in 0..k {
        for prev in 0..j {
            let proj = dot(&cols[j], &cols[prev]);
            for i in 0..n {
                cols[j][i] -= proj * cols[prev][i];
            }
        }
        let nrm = norm_sq(&cols[j]).sqrt();
        if nrm < 1e-12 {
            return Err(Error::Singular("rank-deficient basis".into()));
        }
        for v in cols[j].iter_mut() {
            *v /= nrm;
        }
    }
    let mut out = vec![vec![0.0; k]; n];
    for j in 0..k {
        for i in 0..n {
            out[i][j] = cols[j][i];
        }
    }
    Ok(out)
}
