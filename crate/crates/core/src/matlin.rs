//! Dense real matrices, norms and a one-sided Jacobi SVD.
//!
//! Everything here is double precision and row-major. The SVD always works
//! on the thinner orientation of the input so the number of Jacobi column
//! pairs stays small for the `m x n` state matrices used by the rewards
//! (`n` is the ensemble size, typically 5).

use std::fmt;

use crate::error::{Error, Result};

/// Maximum number of full Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 60;
/// Column pairs count as orthogonal once `|<a_p, a_q>| <= tol * |a_p| |a_q|`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
/// Singular values below `RANK_CLAMP * sigma_max` are set to exactly zero.
pub const RANK_CLAMP: f64 = 1e-12;

/// Row-major real matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting bad shapes and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidSpec(format!(
                "matrix shape {rows}x{cols} must be positive"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dimension(
                "DenseMatrix::new",
                format!("{rows}x{cols}"),
                format!("{} entries", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix shape must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::dimension(
                    "DenseMatrix::from_rows",
                    format!("row 0 has {c} entries"),
                    format!("row {i} has {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Stacks equal-length vectors as the columns of a matrix.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let c = columns.len();
        let r = columns.first().map_or(0, |col| col.as_ref().len());
        for (j, col) in columns.iter().enumerate() {
            if col.as_ref().len() != r {
                return Err(Error::dimension(
                    "DenseMatrix::from_columns",
                    format!("column 0 has {r} entries"),
                    format!("column {j} has {}", col.as_ref().len()),
                ));
            }
        }
        let mut data = vec![0.0; r * c];
        for (j, col) in columns.iter().enumerate() {
            for (i, &x) in col.as_ref().iter().enumerate() {
                data[i * c + j] = x;
            }
        }
        Self::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view for in-place parameter updates. Callers are responsible
    /// for keeping the entries finite.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::dimension(
                "matmul",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut data = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let out = &mut data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        DenseMatrix::new(self.rows, other.cols, data)
    }

    /// `self * x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dimension(
                "matvec",
                format!("{}x{}", self.rows, self.cols),
                format!("vector of length {}", x.len()),
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `self^T * y` for a vector `y` of length `rows`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::dimension(
                "matvec_transposed",
                format!("{}x{}", self.rows, self.cols),
                format!("vector of length {}", y.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<DenseMatrix> {
        DenseMatrix::new(self.rows, self.cols, self.data.iter().map(|x| x * c).collect())
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &DenseMatrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        DenseMatrix::new(self.rows, self.cols, data)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Thin singular value decomposition `a = u * diag(sigma) * v^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `m x d`, orthonormal columns.
    pub u: DenseMatrix,
    /// Non-increasing, non-negative, length `d = min(m, n)`.
    pub sigma: Vec<f64>,
    /// `n x d`, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DenseMatrix {
        let (m, d) = self.u.shape();
        let n = self.v.rows();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += self.u.get(i, k) * self.sigma[k] * self.v.get(j, k);
                }
                data[i * n + j] = acc;
            }
        }
        DenseMatrix { rows: m, cols: n, data }
    }

    pub fn rank(&self) -> usize {
        self.sigma.iter().filter(|&&s| s > 0.0).count()
    }
}

pub fn svd(a: &DenseMatrix) -> Result<SvdResult> {
    if a.rows >= a.cols {
        one_sided_jacobi(a)
    } else {
        let t = one_sided_jacobi(&a.transpose())?;
        Ok(SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

pub fn singular_values(a: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(svd(a)?.sigma)
}

/// Sum of singular values.
pub fn nuclear_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(singular_values(a)?.iter().sum())
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // Four independent partial sums let the compiler vectorize.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// Hestenes one-sided Jacobi on a matrix with rows >= cols.
fn one_sided_jacobi(a: &DenseMatrix) -> Result<SvdResult> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);

    let mut work: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    // Columns at roundoff level relative to the whole matrix are numerically
    // zero; their pairwise cosines are noise and must not block convergence.
    let negligible = (f64::EPSILON * f64::EPSILON) * dot(a.data(), a.data());
    let mut converged = n < 2;
    let mut worst = 0.0_f64;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        worst = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&work[p], &work[q]);
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                worst = worst.max(off);
                if off <= OFF_DIAGONAL_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        converged = worst <= OFF_DIAGONAL_TOL;
    }
    if !converged {
        return Err(Error::Decomposition {
            sweeps: MAX_SWEEPS,
            off: worst,
        });
    }

    let norms: Vec<f64> = work.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma_max = norms[order[0]];
    let mut sigma = Vec::with_capacity(n);
    let mut ucols: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
    for &j in &order {
        let s = norms[j];
        if s == 0.0 || s < RANK_CLAMP * sigma_max {
            sigma.push(0.0);
            ucols.push(None);
        } else {
            sigma.push(s);
            ucols.push(Some(work[j].iter().map(|x| x / s).collect()));
        }
    }
    let u = orthonormal_completion(m, ucols);

    let mut udata = vec![0.0; m * n];
    let mut vdata = vec![0.0; n * n];
    for (k, &j) in order.iter().enumerate() {
        for i in 0..m {
            udata[i * n + k] = u[k][i];
        }
        for i in 0..n {
            vdata[i * n + k] = vcols[j][i];
        }
    }
    Ok(SvdResult {
        u: DenseMatrix::new(m, n, udata)?,
        sigma,
        v: DenseMatrix::new(n, n, vdata)?,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

// Re-orthogonalizes the given columns in order (modified Gram-Schmidt) and
// fills `None` slots with unit vectors orthogonal to everything before them.
fn orthonormal_completion(m: usize, cols: Vec<Option<Vec<f64>>>) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    let mut pending = Vec::new();
    for (k, col) in cols.into_iter().enumerate() {
        match col {
            Some(mut c) => {
                for b in &basis {
                    let proj = dot(&c, b);
                    c.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                }
                let norm = dot(&c, &c).sqrt();
                c.iter_mut().for_each(|x| *x /= norm);
                basis.push(c);
            }
            None => {
                pending.push(k);
                basis.push(Vec::new());
            }
        }
    }
    let mut candidate = 0;
    for k in pending {
        loop {
            assert!(candidate < m, "orthonormal completion ran out of candidates");
            let mut c = vec![0.0; m];
            c[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for b in basis.iter().filter(|b| !b.is_empty()) {
                    let proj = dot(&c, b);
                    c.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let norm = dot(&c, &c).sqrt();
            if norm > 1e-3 {
                c.iter_mut().for_each(|x| *x /= norm);
                basis[k] = c;
                break;
            }
        }
    }
    basis
}
