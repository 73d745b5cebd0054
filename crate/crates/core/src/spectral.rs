//! Dense nonnegative matrices and their Perron eigendata.
//!
//! Mean-offspring matrices of a `p`-type branching process are nonnegative
//! `p x p` matrices acting on the cone of nonnegative vectors. Throughout the
//! crate a matrix `h` acts two ways:
//!
//! * column action `h * x` on column vectors (compositions of means), and
//! * row action `x * h` on row vectors (mass transport of a law on types).
//!
//! The operator norm is fixed once for the whole crate as the norm induced by
//! the L1 norm on the nonnegative cone, which for a nonnegative matrix is the
//! maximum column sum. For a strictly positive matrix the Perron root is the
//! unique dominant eigenvalue; [`perron_eig`] extracts it together with the
//! right eigenvector `U` and left eigenvector `V`, normalized in this order:
//! first `V` is scaled to sum to one, then `U` is scaled so that the inner
//! product of `V` and `U` is one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on power-iteration steps; hitting it is reported, never spun on.
const POWER_ITERATION_CAP: u64 = 100_000;

/// Dense row-major square matrix with finite nonnegative entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    p: usize,
    a: Vec<f64>,
}

impl Matrix {
    /// Builds a `p x p` matrix from row-major data, rejecting negative or
    /// non-finite entries.
    pub fn new(p: usize, a: Vec<f64>) -> Result<Self> {
        if p == 0 {
            return Err(Error::Domain("matrix dimension must be at least 1".into()));
        }
        if a.len() != p * p {
            return Err(Error::Domain(format!(
                "matrix data has {} entries, expected {}",
                a.len(),
                p * p
            )));
        }
        for (k, &v) in a.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "matrix entry ({},{}) is {v}, must be finite and nonnegative",
                    k / p,
                    k % p
                )));
            }
        }
        Ok(Self { p, a })
    }

    /// Builds a matrix from rows, checking they are square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let mut a = Vec::with_capacity(p * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::Domain(format!(
                    "row has {} entries in a {p}-dimensional matrix",
                    row.len()
                )));
            }
            a.extend_from_slice(row);
        }
        Self::new(p, a)
    }

    pub fn zero(p: usize) -> Self {
        Self { p, a: vec![0.0; p * p] }
    }

    pub fn identity(p: usize) -> Self {
        let mut m = Self::zero(p);
        for i in 0..p {
            m.a[i * p + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.p + j]
    }

    /// Sets an entry; panics on negative or non-finite values because every
    /// construction site in this crate produces moments, which are never
    /// negative.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(v.is_finite() && v >= 0.0, "matrix entries must be finite and nonnegative");
        self.a[i * self.p + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.p..(i + 1) * self.p]
    }

    /// Column action: `(h * x)_i = sum_j h[i][j] * x[j]`.
    pub fn mul_col(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.p);
        (0..self.p)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Row action: `(x * h)_j = sum_i x[i] * h[i][j]`.
    pub fn mul_row(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.p);
        let mut out = vec![0.0; self.p];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += xi * self.get(i, j);
            }
        }
        out
    }

    /// Matrix product `self * other` (column action composition).
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.p, other.p);
        let p = self.p;
        let mut out = Matrix::zero(p);
        for i in 0..p {
            for k in 0..p {
                let v = self.get(i, k);
                if v == 0.0 {
                    continue;
                }
                for j in 0..p {
                    out.a[i * p + j] += v * other.get(k, j);
                }
            }
        }
        out
    }

    /// `self + scale * other`, entrywise.
    pub fn add_scaled(&self, scale: f64, other: &Matrix) -> Matrix {
        assert_eq!(self.p, other.p);
        let a = self
            .a
            .iter()
            .zip(&other.a)
            .map(|(x, y)| x + scale * y)
            .collect();
        Matrix { p: self.p, a }
    }

    /// Operator norm induced by the L1 norm on the nonnegative cone: the
    /// maximum column sum.
    pub fn op_norm(&self) -> f64 {
        (0..self.p)
            .map(|j| (0..self.p).map(|i| self.get(i, j)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.a.iter().copied().fold(0.0, f64::max)
    }

    /// Sum of all entries; equals the L1 norm of `h * 1`.
    pub fn entry_sum(&self) -> f64 {
        self.a.iter().sum()
    }
}

/// A probability vector over particle types: nonnegative entries summing to
/// one. Directions of population vectors and eigenvector normalizations both
/// live here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    /// Accepts a nonnegative vector with positive total mass and renormalizes
    /// it to sum to one.
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Domain("simplex point must have dimension >= 1".into()));
        }
        let mut s = 0.0;
        for &v in &x {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!(
                    "simplex coordinate {v} must be finite and nonnegative"
                )));
            }
            s += v;
        }
        if s <= 0.0 {
            return Err(Error::DegenerateProjection(
                "cannot normalize a zero vector onto the simplex".into(),
            ));
        }
        Ok(Self(x.into_iter().map(|v| v / s).collect()))
    }

    /// The barycenter `(1/p, ..., 1/p)`.
    pub fn uniform(p: usize) -> Self {
        Self(vec![1.0 / p as f64; p])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Perron eigendata of a mean matrix `m`: the dominant eigenvalue together
/// with the right eigenvector `U` (column sense) and left eigenvector `V`
/// (row sense), normalized so that `V` sums to one and `(V, U) = 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralData {
    pub mean: Matrix,
    pub lambda: f64,
    /// Right eigenvector `U`; all entries positive.
    pub right: Vec<f64>,
    /// Left eigenvector `V`; positive entries summing to one.
    pub left: Vec<f64>,
    /// Final L1 eigen-residuals, `|m U - lambda U|` and `|V m - lambda V|`.
    pub residual_right: f64,
    pub residual_left: f64,
    pub iterations: u64,
}

impl SpectralData {
    /// `(z, U)`: the inner product of a population vector with the right
    /// eigenvector. This is the weight that makes survival asymptotics linear
    /// in the starting state.
    pub fn weight(&self, z: &[u64]) -> f64 {
        z.iter()
            .zip(&self.right)
            .map(|(&zi, &ui)| zi as f64 * ui)
            .sum()
    }
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Extracts Perron eigendata by simultaneous left/right power iteration from
/// the uniform start.
///
/// For a strictly positive matrix the limit is the unique dominant
/// eigentriple. Matrices with zero entries are accepted so degenerate cases
/// (such as the identity) remain usable, but then the power limit from the
/// uniform start is reported without a uniqueness guarantee. Iteration stops
/// when both L1 eigen-residuals of the finally normalized vectors drop to
/// `tol`; hitting the iteration cap is an error carrying the last residual.
pub fn perron_eig(m: &Matrix, tol: f64) -> Result<SpectralData> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let p = m.dim();
    let mut u = vec![1.0 / p as f64; p];
    let mut v = vec![1.0 / p as f64; p];

    let mut iterations = 0u64;
    loop {
        iterations += 1;

        let mu = m.mul_col(&u);
        let su = l1(&mu);
        if su <= 0.0 {
            return Err(Error::Domain(
                "matrix maps the positive cone to zero; no Perron data".into(),
            ));
        }
        u = mu.into_iter().map(|x| x / su).collect();

        let vm = m.mul_row(&v);
        let sv = l1(&vm);
        if sv <= 0.0 {
            return Err(Error::Domain(
                "matrix maps the positive cone to zero; no Perron data".into(),
            ));
        }
        v = vm.into_iter().map(|x| x / sv).collect();

        // Candidate eigendata in the final normalization. V is already a
        // probability vector; U is rescaled so (V, U) = 1; lambda is the
        // Rayleigh quotient V m U, exact when both residuals vanish.
        let vu = dot(&v, &u);
        if vu <= 0.0 {
            return Err(Error::Domain(
                "left/right iterates became orthogonal; no positive eigendata".into(),
            ));
        }
        let cu: Vec<f64> = u.iter().map(|x| x / vu).collect();
        let lambda = dot(&v, &m.mul_col(&cu));
        let r_res = {
            let w = m.mul_col(&cu);
            w.iter().zip(&cu).map(|(a, b)| (a - lambda * b).abs()).sum::<f64>()
        };
        let l_res = {
            let w = m.mul_row(&v);
            w.iter().zip(&v).map(|(a, b)| (a - lambda * b).abs()).sum::<f64>()
        };
        if r_res <= tol && l_res <= tol {
            return Ok(SpectralData {
                mean: m.clone(),
                lambda,
                right: cu,
                left: v,
                residual_right: r_res,
                residual_left: l_res,
                iterations,
            });
        }
        if iterations >= POWER_ITERATION_CAP {
            return Err(Error::NoConvergence {
                what: "perron power iteration",
                iterations,
                residual: r_res.max(l_res),
                tolerance: tol,
            });
        }
    }
}

/// Column-action projection onto the simplex: `h ∘ x = h x / |h x|`.
pub fn project_col(h: &Matrix, x: &SimplexPoint) -> Result<SimplexPoint> {
    let y = h.mul_col(x.coords());
    let s = l1(&y);
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::DegenerateProjection(format!(
            "column action maps {:?} to total mass {s}",
            x.coords()
        )));
    }
    Ok(SimplexPoint(y.into_iter().map(|v| v / s).collect()))
}

/// Row-action projection onto the simplex: `x ∘ h = x h / |x h|`.
pub fn project_row(x: &SimplexPoint, h: &Matrix) -> Result<SimplexPoint> {
    let y = h.mul_row(x.coords());
    let s = l1(&y);
    if s <= 0.0 || !s.is_finite() {
        return Err(Error::DegenerateProjection(format!(
            "row action maps {:?} to total mass {s}",
            x.coords()
        )));
    }
    Ok(SimplexPoint(y.into_iter().map(|v| v / s).collect()))
}

/// L1 mass of the column action before normalization, `|h x|`. The pair
/// (`project_col`, `col_mass`) is the cocycle driving every tilted product:
/// the masses along a trajectory of projections multiply to `|h_n ... h_1 x|`.
pub fn col_mass(h: &Matrix, x: &SimplexPoint) -> f64 {
    l1(&h.mul_col(x.coords()))
}

/// L1 mass of the row action before normalization, `|x h|`.
pub fn row_mass(x: &SimplexPoint, h: &Matrix) -> f64 {
    l1(&h.mul_row(x.coords()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Dominant eigendata of a positive 2x2 matrix by the quadratic formula;
    /// an independent route used to cross-check the power iteration.
    fn eig2(a: f64, b: f64, c: f64, d: f64) -> (f64, [f64; 2], [f64; 2]) {
        let tr = a + d;
        let disc = ((a - d) * (a - d) + 4.0 * b * c).sqrt();
        let lambda = (tr + disc) / 2.0;
        // m U = lambda U  =>  U2/U1 = (lambda - a)/b
        let u = [1.0, (lambda - a) / b];
        // V m = lambda V  =>  V2/V1 = (lambda - a)/c
        let v = [1.0, (lambda - a) / c];
        (lambda, u, v)
    }

    #[test]
    fn identity_has_uniform_eigendata() {
        let m = Matrix::identity(2);
        let s = perron_eig(&m, 1e-12).unwrap();
        assert!(close(s.lambda, 1.0, 1e-12));
        assert!(close(s.left[0], 0.5, 1e-12) && close(s.left[1], 0.5, 1e-12));
        assert!(close(s.right[0], 1.0, 1e-12) && close(s.right[1], 1.0, 1e-12));
    }

    #[test]
    fn ones_matrix_eigendata() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let s = perron_eig(&m, 1e-12).unwrap();
        assert!(close(s.lambda, 2.0, 1e-12));
        assert!(close(s.left[0], 0.5, 1e-12));
        assert!(close(s.right[0], 1.0, 1e-12));
        assert!(close(s.right[1], 1.0, 1e-12));
    }

    #[test]
    fn power_iteration_matches_quadratic_formula() {
        let (a, b, c, d) = (0.6, 0.195, 0.16, 0.62);
        let m = Matrix::from_rows(&[vec![a, b], vec![c, d]]).unwrap();
        let s = perron_eig(&m, 1e-13).unwrap();
        let (lambda, u, v) = eig2(a, b, c, d);
        assert!(close(s.lambda, lambda, 1e-11));
        // Normalize the closed-form vectors the same way: V sums to one,
        // then (V, U) = 1.
        let vs = v[0] + v[1];
        let vn = [v[0] / vs, v[1] / vs];
        let vu = vn[0] * u[0] + vn[1] * u[1];
        let un = [u[0] / vu, u[1] / vu];
        for i in 0..2 {
            assert!(close(s.left[i], vn[i], 1e-11), "left[{i}]");
            assert!(close(s.right[i], un[i], 1e-11), "right[{i}]");
        }
    }

    #[test]
    fn projections_normalize_and_reject_zero() {
        let h = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let x = SimplexPoint::new(vec![0.3, 0.7]).unwrap();
        let y = project_col(&h, &x).unwrap();
        assert!(close(y.coords().iter().sum::<f64>(), 1.0, 1e-15));
        let e1 = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        assert!(project_col(&h, &e1).is_err());
    }

    #[test]
    fn op_norm_is_max_column_sum() {
        let h = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 0.5]]).unwrap();
        assert!(close(h.op_norm(), 3.5, 1e-15));
        assert!(close(Matrix::zero(3).op_norm(), 0.0, 1e-15));
    }

    #[test]
    fn zero_matrix_has_no_perron_data() {
        let m = Matrix::zero(2);
        assert!(matches!(perron_eig(&m, 1e-12), Err(Error::Domain(_))));
    }
}
