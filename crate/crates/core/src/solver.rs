//! Sparse symmetric linear algebra: CSR storage, matrix-vector products,
//! the Conjugate Gradient Squared iterative solver (with a plain CG mode
//! and an optional Jacobi preconditioner), and a dense direct solver used
//! as an independent cross-check.

use crate::error::{Error, Result};

/// Scalars with magnitude below this trigger a CGS/CG breakdown restart.
const BREAKDOWN_EPS: f64 = 1e-300;

/// Compressed sparse row matrix.
///
/// `row_offsets` has length `n_rows + 1`; the column indices of each row are
/// strictly increasing and no explicit zeros are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from coordinate triplets. Duplicate `(row, col)` entries are
    /// summed; entries that sum to exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<SparseMatrix> {
        for &(r, c, _) in entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Validation(format!(
                    "triplet ({r}, {c}) out of range for {n_rows}x{n_cols} matrix"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut iter = sorted.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
            }
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> SparseMatrix {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored value at `(row, col)`, or 0 if the entry is not present.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let lo = self.row_offsets[row];
        let hi = self.row_offsets[row + 1];
        match self.col_indices[lo..hi].binary_search(&col) {
            Ok(k) => self.values[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Iterate stored entries as `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let lo = self.row_offsets[r];
            let hi = self.row_offsets[r + 1];
            (lo..hi).map(move |k| (r, self.col_indices[k], self.values[k]))
        })
    }

    /// Matrix-vector product. Summation runs in ascending column order per
    /// row, so results are reproducible run to run.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::Validation(format!(
                "spmv dimension mismatch: matrix has {} columns, vector has {}",
                self.n_cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            let lo = self.row_offsets[r];
            let hi = self.row_offsets[r + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[r] = acc;
        }
        Ok(y)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz());
        for (r, c, v) in self.triplets() {
            entries.push((c, r, v));
        }
        SparseMatrix::from_triplets(self.n_cols, self.n_rows, &entries)
            .expect("transpose indices are in range")
    }

    /// Dense row-major copy; intended for small systems and oracle checks.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n_rows * self.n_cols];
        for (r, c, v) in self.triplets() {
            dense[r * self.n_cols + c] = v;
        }
        dense
    }

    /// Extract the main diagonal.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// Serialize as `row col value` lines, one stored entry per line.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        for (r, c, v) in self.triplets() {
            out.push_str(&format!("{r} {c} {v}\n"));
        }
        out
    }

    /// Parse the `row col value` line format written by [`to_triplet_text`].
    ///
    /// [`to_triplet_text`]: SparseMatrix::to_triplet_text
    pub fn from_triplet_text(text: &str, n_rows: usize, n_cols: usize) -> Result<SparseMatrix> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            let parse = |s: Option<&str>, what: &str| -> Result<String> {
                s.map(str::to_string).ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected {what}"),
                })
            };
            let r: usize = parse(tok.next(), "row index")?
                .parse()
                .map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: "row index is not an integer".into(),
                })?;
            let c: usize = parse(tok.next(), "column index")?
                .parse()
                .map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: "column index is not an integer".into(),
                })?;
            let v: f64 = parse(tok.next(), "value")?
                .parse()
                .map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: "value is not a number".into(),
                })?;
            entries.push((r, c, v));
        }
        SparseMatrix::from_triplets(n_rows, n_cols, &entries)
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

/// Which Krylov recurrence to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cgs,
    Cg,
}

/// Diagonal preconditioning switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub method: Method,
    pub preconditioner: Preconditioner,
    pub tol: f64,
    pub max_iter: usize,
}

impl SolveOptions {
    pub fn new(tol: f64, max_iter: usize) -> SolveOptions {
        SolveOptions {
            method: Method::Cgs,
            preconditioner: Preconditioner::None,
            tol,
            max_iter,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &SparseMatrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let ax = a.spmv(x)?;
    Ok(b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect())
}

fn apply_precond(inv_diag: Option<&[f64]>, v: &[f64]) -> Vec<f64> {
    match inv_diag {
        Some(d) => v.iter().zip(d).map(|(vi, di)| vi * di).collect(),
        None => v.to_vec(),
    }
}

fn check_square(a: &SparseMatrix, b: &[f64], x0: &[f64], tol: f64) -> Result<()> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::Validation(format!(
            "solver requires a square matrix, got {}x{}",
            a.n_rows(),
            a.n_cols()
        )));
    }
    if b.len() != a.n_rows() || x0.len() != a.n_rows() {
        return Err(Error::Validation(
            "right-hand side or initial guess length does not match matrix".into(),
        ));
    }
    if tol <= 0.0 {
        return Err(Error::Validation("solver tolerance must be positive".into()));
    }
    Ok(())
}

fn inverse_diagonal(a: &SparseMatrix) -> Vec<f64> {
    a.diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Solve `A x = b` with the configured method.
pub fn solve(a: &SparseMatrix, b: &[f64], x0: &[f64], opts: &SolveOptions) -> Result<SolveReport> {
    check_square(a, b, x0, opts.tol)?;
    let inv_diag = match opts.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => Some(inverse_diagonal(a)),
    };
    match opts.method {
        Method::Cgs => cgs_inner(a, b, x0, opts.tol, opts.max_iter, inv_diag.as_deref()),
        Method::Cg => cg_inner(a, b, x0, opts.tol, opts.max_iter, inv_diag.as_deref()),
    }
}

/// Conjugate Gradient Squared with default options (no preconditioner).
pub fn cgs_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    check_square(a, b, x0, tol)?;
    cgs_inner(a, b, x0, tol, max_iter, None)
}

/// Plain Conjugate Gradient, for symmetric positive definite systems.
pub fn cg_solve(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    check_square(a, b, x0, tol)?;
    cg_inner(a, b, x0, tol, max_iter, None)
}

/// CGS recurrence: shadow residual fixed at r0, auxiliary vectors u/p/q,
/// two A-products per iteration. A scalar breakdown restarts once from the
/// current iterate; a second breakdown ends the solve unconverged.
fn cgs_inner(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
    inv_diag: Option<&[f64]>,
) -> Result<SolveReport> {
    let n = b.len();
    let threshold = tol * norm(b);
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x)?;
    if norm(&r) <= threshold {
        return Ok(SolveReport {
            x,
            iterations: 0,
            final_residual_norm: norm(&r),
            converged: true,
        });
    }

    let mut r_shadow = r.clone();
    let mut u = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut rho_prev = 0.0;
    let mut first = true;
    let mut restarted = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let rho = dot(&r_shadow, &r);
        if rho.abs() < BREAKDOWN_EPS {
            if norm(&r) <= threshold {
                break;
            }
            if restarted {
                break;
            }
            restarted = true;
            r = residual(a, b, &x)?;
            r_shadow = r.clone();
            first = true;
            continue;
        }
        if first {
            u.copy_from_slice(&r);
            p.copy_from_slice(&r);
            first = false;
        } else {
            let beta = rho / rho_prev;
            for i in 0..n {
                u[i] = r[i] + beta * q[i];
            }
            for i in 0..n {
                p[i] = u[i] + beta * (q[i] + beta * p[i]);
            }
        }
        let p_hat = apply_precond(inv_diag, &p);
        let v = a.spmv(&p_hat)?;
        let sigma = dot(&r_shadow, &v);
        if sigma.abs() < BREAKDOWN_EPS {
            if restarted {
                break;
            }
            restarted = true;
            r = residual(a, b, &x)?;
            r_shadow = r.clone();
            first = true;
            continue;
        }
        let alpha = rho / sigma;
        for i in 0..n {
            q[i] = u[i] - alpha * v[i];
        }
        let uq: Vec<f64> = (0..n).map(|i| u[i] + q[i]).collect();
        let uq_hat = apply_precond(inv_diag, &uq);
        for i in 0..n {
            x[i] += alpha * uq_hat[i];
        }
        let w = a.spmv(&uq_hat)?;
        for i in 0..n {
            r[i] -= alpha * w[i];
        }
        if !alpha.is_finite() || !r.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical { iterations });
        }
        rho_prev = rho;
        if norm(&r) <= threshold {
            // The recursive residual can drift; only trust a recomputed one.
            let true_res = norm(&residual(a, b, &x)?);
            if true_res <= threshold {
                return Ok(SolveReport {
                    x,
                    iterations,
                    final_residual_norm: true_res,
                    converged: true,
                });
            }
        }
    }

    let final_residual_norm = norm(&residual(a, b, &x)?);
    Ok(SolveReport {
        x,
        iterations,
        final_residual_norm,
        converged: final_residual_norm <= threshold,
    })
}

/// Preconditioned conjugate gradient.
fn cg_inner(
    a: &SparseMatrix,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
    inv_diag: Option<&[f64]>,
) -> Result<SolveReport> {
    let n = b.len();
    let threshold = tol * norm(b);
    let mut x = x0.to_vec();
    let mut r = residual(a, b, &x)?;
    if norm(&r) <= threshold {
        return Ok(SolveReport {
            x,
            iterations: 0,
            final_residual_norm: norm(&r),
            converged: true,
        });
    }
    let mut z = apply_precond(inv_diag, &r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let v = a.spmv(&p)?;
        let pv = dot(&p, &v);
        if pv.abs() < BREAKDOWN_EPS {
            break;
        }
        let alpha = rz / pv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * v[i];
        }
        if !alpha.is_finite() || !r.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical { iterations });
        }
        if norm(&r) <= threshold {
            let true_res = norm(&residual(a, b, &x)?);
            if true_res <= threshold {
                return Ok(SolveReport {
                    x,
                    iterations,
                    final_residual_norm: true_res,
                    converged: true,
                });
            }
        }
        z = apply_precond(inv_diag, &r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
    }
    let final_residual_norm = norm(&residual(a, b, &x)?);
    Ok(SolveReport {
        x,
        iterations,
        final_residual_norm,
        converged: final_residual_norm <= threshold,
    })
}

/// Gaussian elimination with partial pivoting on a dense row-major matrix.
///
/// Independent of the sparse iterative path; used by tests and the
/// `--oracle` cross-check.
pub fn dense_solve(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != n * n || b.len() != n {
        return Err(Error::Validation(
            "dense_solve: matrix/vector dimensions do not match".into(),
        ));
    }
    if n > 2000 {
        return Err(Error::Validation(format!(
            "dense_solve limited to n <= 2000, got {n}"
        )));
    }
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = m[col * n + col].abs();
        for row in col + 1..n {
            let v = m[row * n + col].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = row;
            }
        }
        if pivot_abs < 1e-12 {
            return Err(Error::SingularMatrix {
                col,
                pivot: pivot_abs,
            });
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    Ok(x)
}
