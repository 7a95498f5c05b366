//! Graph-Laplacian spatial coherence prior.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use super::InverseError;

/// Ridge added to the prior precision when `L` may be singular.
pub const SINGULAR_RIDGE: f64 = 1e-6;

/// Which source prior to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PriorKind {
    /// `L = I`.
    MinimumNorm,
    /// `L = I - smoothness * D⁻¹W` over the mesh graph.
    Loreta { smoothness: f64 },
}

impl Default for PriorKind {
    fn default() -> Self {
        PriorKind::Loreta { smoothness: 0.2 }
    }
}

/// Source prior with precision `α (LᵀL + ridge·I)`.
#[derive(Debug, Clone)]
pub struct SpatialPrior {
    pub operator: CsrMatrix<f64>,
    pub smoothness: f64,
    pub ridge: f64,
}

/// `L = I - smoothness * D⁻¹W` with `W` the 0/1 adjacency and `D` its
/// degree matrix. Isolated vertices keep an identity row.
///
/// For `smoothness < 1` every row of `L` is strictly diagonally dominant,
/// so `LᵀL` is positive definite and no ridge is needed; otherwise a ridge
/// of [`SINGULAR_RIDGE`] removes the null space.
pub fn build_laplacian(adjacency: &[Vec<usize>], smoothness: f64) -> Result<SpatialPrior, InverseError> {
    let n = adjacency.len();
    if n == 0 {
        return Err(InverseError::EmptyMesh);
    }
    if !(smoothness.is_finite() && smoothness >= 0.0) {
        return Err(InverseError::InvalidModel(format!("smoothness {smoothness} must be >= 0")));
    }
    let mut coo = CooMatrix::new(n, n);
    for (i, nb) in adjacency.iter().enumerate() {
        coo.push(i, i, 1.0);
        if nb.is_empty() || smoothness == 0.0 {
            continue;
        }
        let w = smoothness / nb.len() as f64;
        for &j in nb {
            if j >= n {
                return Err(InverseError::InvalidModel(format!("adjacency references vertex {j} >= {n}")));
            }
            coo.push(i, j, -w);
        }
    }
    let ridge = if smoothness < 1.0 { 0.0 } else { SINGULAR_RIDGE };
    Ok(SpatialPrior { operator: CsrMatrix::from(&coo), smoothness, ridge })
}

impl SpatialPrior {
    pub fn from_kind(kind: PriorKind, adjacency: &[Vec<usize>]) -> Result<Self, InverseError> {
        match kind {
            PriorKind::MinimumNorm => Self::identity(adjacency.len()),
            PriorKind::Loreta { smoothness } => build_laplacian(adjacency, smoothness),
        }
    }

    pub fn identity(n: usize) -> Result<Self, InverseError> {
        if n == 0 {
            return Err(InverseError::EmptyMesh);
        }
        Ok(Self { operator: CsrMatrix::identity(n), smoothness: 0.0, ridge: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.operator.nrows()
    }

    /// `(LᵀL + ridge·I) x`.
    pub fn apply_precision(&self, x: &DVector<f64>) -> DVector<f64> {
        let lx = &self.operator * x;
        let mut out = self.operator.transpose() * &lx;
        out.axpy(self.ridge, x, 1.0);
        out
    }

    /// Dense `LᵀL + ridge·I`.
    pub fn precision_dense(&self) -> DMatrix<f64> {
        let l: DMatrix<f64> = DMatrix::from(&self.operator);
        let mut p = l.transpose() * &l;
        for i in 0..p.nrows() {
            p[(i, i)] += self.ridge;
        }
        p
    }

    fn precision_diagonal(&self) -> DVector<f64> {
        let mut d = DVector::from_element(self.dim(), self.ridge);
        for (_, j, v) in self.operator.triplet_iter() {
            d[j] += v * v;
        }
        d
    }

    /// Solves `(LᵀL + ridge·I) x = b` by Jacobi-preconditioned conjugate
    /// gradients. Fails with `SingularPrior` when the iteration breaks down
    /// or does not converge.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, InverseError> {
        let n = self.dim();
        let inv_diag = self.precision_diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 });
        let b_norm = b.norm();
        let mut x = DVector::zeros(n);
        if b_norm == 0.0 {
            return Ok(x);
        }
        let tol = 1e-14 * b_norm;
        let mut r = b.clone();
        let mut z = r.component_mul(&inv_diag);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        for _ in 0..(10 * n).max(100) {
            let ap = self.apply_precision(&p);
            let pap = p.dot(&ap);
            if !(pap > f64::MIN_POSITIVE * p.norm_squared()) {
                return Err(InverseError::SingularPrior);
            }
            let step = rz / pap;
            x.axpy(step, &p, 1.0);
            r.axpy(-step, &ap, 1.0);
            if r.norm() <= tol {
                return Ok(x);
            }
            z = r.component_mul(&inv_diag);
            let rz_next = r.dot(&z);
            p = &z + (rz_next / rz) * &p;
            rz = rz_next;
        }
        Err(InverseError::SingularPrior)
    }
}
