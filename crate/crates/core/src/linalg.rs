//! Dense symmetric linear algebra.
//!
//! Everything here works on small to moderate dimensions (d up to a few
//! hundred): ridge solves through Cholesky, eigendecomposition through cyclic
//! Jacobi rotations, Moore-Penrose pseudoinverse application and the
//! effective dimension `Tr((S + λI)⁻¹ S)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative rank cut used by [`pseudo_inverse_apply`] callers by default.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Relative eigenvalue tolerance for declaring a matrix numerically singular.
pub const SINGULAR_TOL: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a - b`, elementwise.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

/// Dense symmetric matrix with full row-major storage.
///
/// Every constructor and mutator writes `(i, j)` and `(j, i)` together, so
/// the stored entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * m.dim + i] = v;
        }
        m
    }

    /// Builds the matrix from its upper triangle; `f(i, j)` is called for `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds the matrix from rows, rejecting input that is not exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        for i in 0..dim {
            for j in 0..i {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::InvalidSpec(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// `A Aᵀ` for a row-major `rows × cols` matrix `A`.
    pub fn gram_of(a: &[f64], rows: usize, cols: usize) -> Self {
        assert_eq!(a.len(), rows * cols);
        Self::from_fn(rows, |i, j| {
            dot(&a[i * cols..(i + 1) * cols], &a[j * cols..(j + 1) * cols])
        })
    }

    /// The outer product `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        let mut m = Self::zeros(v.len());
        m.add_outer(v, 1.0);
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major view of all entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self += c · v vᵀ`.
    pub fn add_outer(&mut self, v: &[f64], c: f64) {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            let vi = c * v[i];
            if vi == 0.0 {
                continue;
            }
            for j in i..n {
                let value = self.data[i * n + j] + vi * v[j];
                self.data[i * n + j] = value;
                self.data[j * n + i] = value;
            }
        }
    }

    /// `self += c · I`.
    pub fn add_diag(&mut self, c: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += c;
        }
    }

    pub fn with_ridge(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.add_diag(c);
        m
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }

    /// `Q S Qᵀ` for a row-major orthogonal (or arbitrary) `Q`; the result is
    /// re-symmetrised from its upper triangle.
    pub fn congruence(&self, q: &[f64]) -> Self {
        let n = self.dim;
        assert_eq!(q.len(), n * n);
        let mut qs = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let qik = q[i * n + k];
                if qik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    qs[i * n + j] += qik * self.get(k, j);
                }
            }
        }
        Self::from_fn(n, |i, j| dot(&qs[i * n..(i + 1) * n], &q[j * n..(j + 1) * n]))
    }

    /// Symmetrised matrix product `(A B + B A) / 2`; equals `A B` when the
    /// factors commute.
    pub fn sym_product(&self, other: &Self) -> Self {
        let n = self.dim;
        assert_eq!(n, other.dim);
        Self::from_fn(n, |i, j| {
            let ab: f64 = (0..n).map(|k| self.get(i, k) * other.get(k, j)).sum();
            let ba: f64 = (0..n).map(|k| other.get(i, k) * self.get(k, j)).sum();
            0.5 * (ab + ba)
        })
    }
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factorises `s`; fails with [`Error::NotPositiveDefinite`] on a
    /// non-positive pivot.
    pub fn new(s: &SymMatrix) -> Result<Self> {
        let n = s.dim();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = s.get(j, j);
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut v = s.get(i, j);
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / ljj;
            }
        }
        Ok(Self { dim: n, lower: l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut v = y[i];
            for k in 0..i {
                v -= self.lower[i * n + k] * y[k];
            }
            y[i] = v / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for k in (i + 1)..n {
                v -= self.lower[k * n + i] * y[k];
            }
            y[i] = v / self.lower[i * n + i];
        }
        y
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in j..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `Σ λᵢ vᵢ vᵢᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.dim());
        for (value, vector) in self.values.iter().zip(&self.vectors) {
            m.add_outer(vector, *value);
        }
        m
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `Σ_{λᵢ > cut} f(λᵢ) vᵢ (vᵢᵀ b)`.
    pub fn apply_spectral(&self, b: &[f64], cut: f64, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; b.len()];
        for (value, vector) in self.values.iter().zip(&self.vectors) {
            if *value > cut {
                let c = f(*value) * dot(vector, b);
                for (o, v) in out.iter_mut().zip(vector) {
                    *o += c * v;
                }
            }
        }
        out
    }
}

/// Eigendecomposition by cyclic Jacobi rotations.
///
/// Stops once the off-diagonal Frobenius norm drops to `1e-12·‖S‖_F`; gives
/// up with [`Error::NonConvergence`] after `100·dim` sweeps. Eigenvectors are
/// sign-normalised so that their largest-magnitude component is positive.
pub fn sym_eigendecomposition(s: &SymMatrix) -> Result<EigenDecomposition> {
    let n = s.dim();
    let mut a = s.as_slice().to_vec();
    // v[k * n + r]: component r of the k-th eigenvector.
    let mut v = vec![0.0; n * n];
    for k in 0..n {
        v[k * n + k] = 1.0;
    }
    let threshold = 1e-12 * s.frobenius_norm();
    let off_norm = |a: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        acc.sqrt()
    };

    let budget = 100 * n.max(1);
    let mut sweeps = 0;
    while off_norm(&a) > threshold {
        if sweeps == budget {
            return Err(Error::NonConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                if t == 0.0 {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                let tau = sn / (1.0 + c);
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = arp - sn * (arq + tau * arp);
                    let new_rq = arq + sn * (arp - tau * arq);
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
                let (head, tail) = v.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for r in 0..n {
                    let xp = vp[r];
                    let xq = vq[r];
                    vp[r] = xp - sn * (xq + tau * xp);
                    vq[r] = xq + sn * (xp - tau * xq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut vec = v[k * n..(k + 1) * n].to_vec();
            let pivot = vec
                .iter()
                .copied()
                .fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                vec.iter_mut().for_each(|x| *x = -*x);
            }
            vec
        })
        .collect();
    Ok(EigenDecomposition { values, vectors })
}

/// Cholesky factor and inverse of `S` when they prove the smallest
/// eigenvalue exceeds `SINGULAR_TOL·|Tr S|`, using `λ_min ≥ 1/‖S⁻¹‖_F`.
/// `None` means undecided; callers fall back to the eigendecomposition.
fn certified_cholesky(s: &SymMatrix) -> Option<(Cholesky, SymMatrix)> {
    let chol = Cholesky::new(s).ok()?;
    let inv = chol.inverse();
    let bound = 1.0 / inv.frobenius_norm();
    (bound > SINGULAR_TOL * s.trace().abs()).then_some((chol, inv))
}

/// Solves `(S + λI) x = b`.
///
/// With `λ > 0` this is a Cholesky solve. With `λ = 0` the smallest
/// eigenvalue of `S` must exceed `1e-10·|Tr S|`; a Cholesky-based bound
/// settles clear cases and the eigendecomposition decides the rest.
pub fn ridge_solve(s: &SymMatrix, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if b.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            got: b.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidSpec(format!(
            "ridge parameter must be nonnegative, got {lambda}"
        )));
    }
    if lambda > 0.0 {
        let chol = Cholesky::new(&s.with_ridge(lambda)).map_err(|_| Error::SingularSystem {
            min_eigenvalue: f64::NAN,
            tolerance: 0.0,
        })?;
        return Ok(chol.solve(b));
    }
    if let Some(chol) = certified_cholesky(s) {
        return Ok(chol.0.solve(b));
    }
    let eig = sym_eigendecomposition(s)?;
    let tolerance = SINGULAR_TOL * s.trace().abs();
    let min_eigenvalue = eig.min_value();
    if !(min_eigenvalue > tolerance) {
        return Err(Error::SingularSystem {
            min_eigenvalue,
            tolerance,
        });
    }
    Ok(eig.apply_spectral(b, f64::NEG_INFINITY, |l| 1.0 / l))
}

/// Inverse of `S + λI` for SPD `S + λI` (Cholesky for `λ > 0`, spectral
/// with a singularity check for `λ = 0`).
pub fn ridge_inverse(s: &SymMatrix, lambda: f64) -> Result<SymMatrix> {
    if lambda > 0.0 {
        let chol = Cholesky::new(&s.with_ridge(lambda)).map_err(|_| Error::SingularSystem {
            min_eigenvalue: f64::NAN,
            tolerance: 0.0,
        })?;
        return Ok(chol.inverse());
    }
    if let Some((_, inv)) = certified_cholesky(s) {
        return Ok(inv);
    }
    let eig = sym_eigendecomposition(s)?;
    let tolerance = SINGULAR_TOL * s.trace().abs();
    if !(eig.min_value() > tolerance) {
        return Err(Error::SingularSystem {
            min_eigenvalue: eig.min_value(),
            tolerance,
        });
    }
    let mut inv = SymMatrix::zeros(s.dim());
    for (value, vector) in eig.values.iter().zip(&eig.vectors) {
        inv.add_outer(vector, 1.0 / value);
    }
    Ok(inv)
}

/// Applies the Moore-Penrose pseudoinverse: eigenvalues at or below
/// `rank_tol · λ_max` are treated as zero.
pub fn pseudo_inverse_apply(s: &SymMatrix, b: &[f64], rank_tol: f64) -> Result<Vec<f64>> {
    if b.len() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            got: b.len(),
        });
    }
    let eig = sym_eigendecomposition(s)?;
    Ok(pseudo_inverse_apply_eig(&eig, b, rank_tol))
}

/// [`pseudo_inverse_apply`] with a precomputed decomposition.
pub fn pseudo_inverse_apply_eig(eig: &EigenDecomposition, b: &[f64], rank_tol: f64) -> Vec<f64> {
    let max = eig.max_value();
    if !(max > 0.0) {
        return vec![0.0; b.len()];
    }
    eig.apply_spectral(b, rank_tol * max, |l| 1.0 / l)
}

/// `Tr((S + λI)⁻¹ S) = Σᵢ λᵢ / (λᵢ + λ)`, clamped to `[0, dim]`.
///
/// # Panics
/// If `lambda` is not strictly positive.
pub fn effective_dimension(s: &SymMatrix, lambda: f64) -> f64 {
    assert!(lambda > 0.0, "effective dimension needs a positive ridge");
    let n = s.dim();
    let value = match Cholesky::new(&s.with_ridge(lambda)) {
        Ok(chol) => {
            let mut col = vec![0.0; n];
            let mut tr = 0.0;
            for j in 0..n {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = s.get(i, j);
                }
                tr += chol.solve(&col)[j];
            }
            tr
        }
        // S carries tiny negative eigenvalues from rounding: go spectral.
        Err(_) => match sym_eigendecomposition(s) {
            Ok(eig) => eig
                .values
                .iter()
                .map(|&l| {
                    let l = l.max(0.0);
                    l / (l + lambda)
                })
                .sum(),
            Err(_) => f64::NAN,
        },
    };
    value.clamp(0.0, n as f64)
}

/// Numerical rank: eigenvalues above `rank_tol · λ_max`.
pub fn numerical_rank(s: &SymMatrix, rank_tol: f64) -> Result<usize> {
    let eig = sym_eigendecomposition(s)?;
    let max = eig.max_value();
    if !(max > 0.0) {
        return Ok(0);
    }
    Ok(eig.values.iter().filter(|&&l| l > rank_tol * max).count())
}

/// `vᵀ S v`.
pub fn quadratic_form(s: &SymMatrix, v: &[f64]) -> f64 {
    assert_eq!(v.len(), s.dim());
    let n = s.dim();
    let mut acc = 0.0;
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        acc += v[i] * dot(s.row(i), v);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let a: Vec<f64> = (0..dim * rank).map(|_| rng.random_range(-1.0..1.0)).collect();
        SymMatrix::gram_of(&a, dim, rank)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    /// Independent oracle: Gaussian elimination with partial pivoting.
    fn gauss_solve(m: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut aug: Vec<Vec<f64>> = m
            .iter()
            .zip(b)
            .map(|(row, &bi)| {
                let mut r = row.clone();
                r.push(bi);
                r
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
                .unwrap();
            aug.swap(col, pivot);
            for row in (col + 1)..n {
                let f = aug[row][col] / aug[col][col];
                for k in col..=n {
                    aug[row][k] -= f * aug[col][k];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|k| aug[i][k] * x[k]).sum();
            x[i] = (aug[i][n] - s) / aug[i][i];
        }
        x
    }

    #[test]
    fn ridge_identity_halves() {
        let x = ridge_solve(&SymMatrix::identity(2), &[2.0, 4.0], 1.0).unwrap();
        assert!(close(&x, &[1.0, 2.0], 1e-14));
    }

    #[test]
    fn ridge_diagonal_rank_deficient() {
        let s = SymMatrix::from_diag(&[3.0, 0.0]);
        let x = ridge_solve(&s, &[1.0, 1.0], 1.0).unwrap();
        assert!(close(&x, &[0.25, 1.0], 1e-14));
    }

    #[test]
    fn ridge_matches_gaussian_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_psd(5, 5, &mut rng);
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = ridge_solve(&s, &b, 0.1).unwrap();
        let oracle = gauss_solve(&s.with_ridge(0.1).to_rows(), &b);
        assert!(close(&x, &oracle, 1e-8));
        let residual = sub(&s.with_ridge(0.1).mul_vec(&x), &b);
        assert!(norm(&residual) <= 1e-8 * (1.0 + norm(&b)));
    }

    #[test]
    fn ridge_zero_lambda_singular() {
        let s = SymMatrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            ridge_solve(&s, &[1.0, 1.0], 0.0),
            Err(Error::SingularSystem { .. })
        ));
        let x = ridge_solve(&SymMatrix::from_diag(&[2.0, 4.0]), &[1.0, 1.0], 0.0).unwrap();
        assert!(close(&x, &[0.5, 0.25], 1e-14));
    }

    #[test]
    fn ridge_dimension_mismatch() {
        assert!(matches!(
            ridge_solve(&SymMatrix::identity(2), &[1.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pinv_examples() {
        let x = pseudo_inverse_apply(&SymMatrix::from_diag(&[2.0, 0.0]), &[1.0, 1.0], 1e-10).unwrap();
        assert!(close(&x, &[0.5, 0.0], 1e-14));
        let x = pseudo_inverse_apply(&SymMatrix::identity(3), &[1.0, 2.0, 3.0], 1e-10).unwrap();
        assert!(close(&x, &[1.0, 2.0, 3.0], 1e-14));
        let x = pseudo_inverse_apply(&SymMatrix::zeros(3), &[1.0, 2.0, 3.0], 1e-10).unwrap();
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn pinv_penrose_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = SymMatrix::gram_of(&a, 4, 2);
        // b = S c lies in range(S)
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = s.mul_vec(&c);
        let x = pseudo_inverse_apply(&s, &b, DEFAULT_RANK_TOL).unwrap();
        assert!(close(&s.mul_vec(&x), &b, 1e-8));
    }

    #[test]
    fn effective_dimension_examples() {
        assert!((effective_dimension(&SymMatrix::identity(5), 1.0) - 2.5).abs() < 1e-14);
        assert!((effective_dimension(&SymMatrix::from_diag(&[1.0, 0.0]), 1.0) - 0.5).abs() < 1e-14);
        assert_eq!(effective_dimension(&SymMatrix::zeros(4), 0.3), 0.0);
    }

    #[test]
    fn quadratic_form_examples() {
        assert_eq!(quadratic_form(&SymMatrix::identity(2), &[3.0, 4.0]), 25.0);
        assert_eq!(quadratic_form(&SymMatrix::from_diag(&[2.0, 1.0]), &[1.0, 1.0]), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SymMatrix::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut naive = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                naive += v[i] * s.get(i, j) * v[j];
            }
        }
        assert!((quadratic_form(&s, &v) - naive).abs() < 1e-10);
    }

    #[test]
    fn eigen_examples() {
        let eig = sym_eigendecomposition(&SymMatrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(eig.values, vec![3.0, 1.0]);
        assert!(close(&eig.vectors[0], &[0.0, 1.0], 1e-14));

        let s = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eigendecomposition(&s).unwrap();
        assert!(close(&eig.values, &[3.0, 1.0], 1e-12));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&eig.vectors[0], &[h, h], 1e-12));

        let eig = sym_eigendecomposition(&SymMatrix::identity(4)).unwrap();
        assert!(eig.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn eigen_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dim in [1, 2, 5, 17, 40] {
            let s = SymMatrix::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let eig = sym_eigendecomposition(&s).unwrap();
            let err = eig.reconstruct().sub(&s).frobenius_norm();
            assert!(err <= 1e-8 * (1.0 + s.frobenius_norm()), "dim {dim}: {err}");
            for i in 0..dim {
                for j in 0..dim {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot(&eig.vectors[i], &eig.vectors[j]) - expect).abs() < 1e-10);
                }
            }
            assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn symmetric_storage_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = random_psd(6, 3, &mut rng);
        s.add_outer(&[0.3, -1.0, 2.0, 0.1, 0.0, 7.0], 0.7);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
        assert!(SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.5, 1.0]]).is_err());
    }
}
