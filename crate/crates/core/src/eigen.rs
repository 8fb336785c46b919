//! Symmetric eigensolver: Householder tridiagonalization followed by the
//! implicit-shift QL iteration (the EISPACK `tred2`/`tql2` pair).

use crate::error::{HieroError, Result};
use crate::linalg::DenseMatrix;

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_SWEEPS_PER_EIGENVALUE: usize = 64;

/// Eigenpairs of a symmetric matrix, ascending by eigenvalue.
///
/// Column `k` of `eigenvectors` pairs with `eigenvalues[k]`. Each eigenvector
/// is unit length with its first non-negligible component positive.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseMatrix,
}

impl EigenDecomposition {
    /// `Q Λ Qᵀ`
    pub fn reconstruct(&self) -> DenseMatrix {
        let q = &self.eigenvectors;
        let n = q.rows();
        let mut ql = q.clone();
        for r in 0..n {
            for (c, v) in ql.row_mut(r).iter_mut().enumerate() {
                *v *= self.eigenvalues[c];
            }
        }
        ql.matmul_t(q).expect("square factors")
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.eigenvectors.column(k)
    }
}

/// Full eigendecomposition of a real symmetric matrix.
pub fn sym_eigen(a: &DenseMatrix) -> Result<EigenDecomposition> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(HieroError::NotSquare { rows, cols });
    }
    a.check_finite()?;
    let n = rows;
    let tol = SYMMETRY_TOL * a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (a.get(i, j) - a.get(j, i)).abs();
            if diff > tol {
                return Err(HieroError::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    if n == 0 {
        return Ok(EigenDecomposition { eigenvalues: vec![], eigenvectors: DenseMatrix::zeros(0, 0) });
    }

    // work on the exactly symmetrized copy
    let mut v: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            0.5 * (a.get(i, j) + a.get(j, i))
        })
        .collect();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    ql_implicit(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut vec: Vec<f64> = (0..n).map(|r| v[r * n + k]).collect();
        let len = vec.iter().map(|x| x * x).sum::<f64>().sqrt();
        vec.iter_mut().for_each(|x| *x /= len);
        if let Some(first) = vec.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
        }
        for (r, x) in vec.into_iter().enumerate() {
            vectors.set(r, col, x);
        }
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors: vectors })
}

/// Householder reduction to tridiagonal form. On return `d` holds the
/// diagonal, `e[1..]` the sub-diagonal and `v` the accumulated transform.
fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL on the tridiagonal matrix produced by `tridiagonalize`.
fn ql_implicit(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let at = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_SWEEPS_PER_EIGENVALUE {
                    return Err(HieroError::InvalidArgument(format!(
                        "eigensolver failed to converge for eigenvalue {l}"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}
