//! Preconditioners behind one operator interface `v ↦ M⁻¹ v`.

mod amg;
mod ic0;
mod learned;

pub use amg::{aggregate, amg_setup, AmgParams, AmgPrecond};
pub use ic0::{ic0, ic0_factor, Ic0Precond, DEFAULT_IC0_SHIFT, MAX_SHIFT_DOUBLINGS};
pub use learned::LearnedPrecond;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::sparse::{check_dense_cap, CsrMatrix, DenseMatrix};

/// Entries of an implicitly formed operator above this magnitude count as
/// non-zero.
pub const IMPLICIT_DENSITY_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecondKind {
    Identity,
    Jacobi,
    Ic0,
    Amg,
    Learned,
    /// Exact inverse through a dense Cholesky factorisation (reference only).
    Direct,
}

pub trait Preconditioner: Send + Sync {
    fn kind(&self) -> PrecondKind;

    fn dim(&self) -> usize;

    /// `z = M⁻¹ r`.
    fn apply_into(&self, r: &[f64], z: &mut [f64]) -> Result<()>;

    fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut z = vec![0.0; self.dim()];
        self.apply_into(r, &mut z)?;
        Ok(z)
    }

    /// Number of stored entries for explicitly represented operators, `None`
    /// for implicit ones whose density must be measured.
    fn stored_nnz(&self) -> Option<usize>;
}

fn check_len(expected: usize, r: &[f64], z: &[f64]) -> Result<()> {
    for len in [r.len(), z.len()] {
        if len != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: len,
            });
        }
    }
    Ok(())
}

/// `M⁻¹ = I`.
#[derive(Debug, Clone)]
pub struct IdentityPrecond {
    n: usize,
}

impl IdentityPrecond {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl Preconditioner for IdentityPrecond {
    fn kind(&self) -> PrecondKind {
        PrecondKind::Identity
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        check_len(self.n, r, z)?;
        z.copy_from_slice(r);
        Ok(())
    }

    fn stored_nnz(&self) -> Option<usize> {
        Some(self.n)
    }
}

/// `M⁻¹ = diag(A)⁻¹`.
#[derive(Debug, Clone)]
pub struct JacobiPrecond {
    inv_diag: Vec<f64>,
}

impl JacobiPrecond {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .enumerate()
            .map(|(row, d)| {
                if d > 0.0 {
                    Ok(1.0 / d)
                } else {
                    Err(Error::NonPositiveDiagonal { row, value: d })
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { inv_diag })
    }
}

impl Preconditioner for JacobiPrecond {
    fn kind(&self) -> PrecondKind {
        PrecondKind::Jacobi
    }

    fn dim(&self) -> usize {
        self.inv_diag.len()
    }

    fn apply_into(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        check_len(self.dim(), r, z)?;
        for ((zi, ri), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * d;
        }
        Ok(())
    }

    fn stored_nnz(&self) -> Option<usize> {
        Some(self.inv_diag.len())
    }
}

pub fn jacobi_precond(a: &CsrMatrix) -> Result<JacobiPrecond> {
    JacobiPrecond::new(a)
}

/// `M⁻¹ = A⁻¹` through a dense Cholesky factor. Desk-scale reference.
#[derive(Debug, Clone)]
pub struct DirectPrecond {
    factor: DenseMatrix,
}

impl DirectPrecond {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        Ok(Self {
            factor: a.to_dense()?.cholesky()?,
        })
    }
}

impl Preconditioner for DirectPrecond {
    fn kind(&self) -> PrecondKind {
        PrecondKind::Direct
    }

    fn dim(&self) -> usize {
        self.factor.n_rows()
    }

    fn apply_into(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        check_len(self.dim(), r, z)?;
        z.copy_from_slice(&self.factor.cholesky_solve(r)?);
        Ok(())
    }

    fn stored_nnz(&self) -> Option<usize> {
        None
    }
}

/// Forms `M⁻¹` densely by applying the operator to every unit vector.
pub fn form_inverse_dense(p: &dyn Preconditioner) -> Result<DenseMatrix> {
    let n = p.dim();
    check_dense_cap(n)?;
    let columns = Execution::default().map_range(n, |j| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        p.apply(&e)
    });
    let mut m = DenseMatrix::zeros(n, n)?;
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            m.set(i, j, v);
        }
    }
    Ok(m)
}

/// Dense `A M⁻¹`.
pub fn preconditioned_operator(a: &CsrMatrix, p: &dyn Preconditioner) -> Result<DenseMatrix> {
    a.mul_dense(&form_inverse_dense(p)?)
}

/// Density of the operator: stored entries over `n²` for explicit operators,
/// measured entries of the formed `M⁻¹` for implicit ones.
pub fn operator_density(p: &dyn Preconditioner, n: usize) -> Result<f64> {
    if let Some(nnz) = p.stored_nnz() {
        return Ok(nnz as f64 / (n as f64 * n as f64));
    }
    let m = form_inverse_dense(p)?;
    let nnz = m
        .values()
        .iter()
        .filter(|v| v.abs() > IMPLICIT_DENSITY_THRESHOLD)
        .count();
    Ok(nnz as f64 / (n as f64 * n as f64))
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::condition_number;
    use crate::poisson::{assemble_poisson, generate_grid};

    #[test]
    fn jacobi_examples() {
        let a = CsrMatrix::from_diagonal(&[1.0, 100.0]);
        let j = JacobiPrecond::new(&a).unwrap();
        let b = preconditioned_operator(&a, &j).unwrap();
        assert!((condition_number(&b).unwrap().kappa() - 1.0).abs() < 1e-15);

        let a = assemble_poisson(&generate_grid(6, 7, 2, 3).unwrap());
        let j = JacobiPrecond::new(&a).unwrap();
        let b = preconditioned_operator(&a, &j).unwrap();
        let k_pre = condition_number(&b).unwrap().kappa();
        let k = condition_number(&a.to_dense().unwrap()).unwrap().kappa();
        assert_eq!(k_pre, k);

        let j4 = JacobiPrecond::new(&CsrMatrix::identity(4)).unwrap();
        assert_eq!(operator_density(&j4, 4).unwrap(), 0.25);
        assert!(matches!(
            JacobiPrecond::new(&CsrMatrix::from_diagonal(&[1.0, 0.0])),
            Err(Error::NonPositiveDiagonal { row: 1, .. })
        ));
    }

    #[test]
    fn identity_density_and_probes() {
        let p = IdentityPrecond::new(5);
        assert_eq!(operator_density(&p, 5).unwrap(), 5.0 / 25.0);
        probes::assert_linear_spd(&p);
        let a = assemble_poisson(&generate_grid(5, 5, 1, 8).unwrap());
        probes::assert_linear_spd(&JacobiPrecond::new(&a).unwrap());
        probes::assert_linear_spd(&DirectPrecond::new(&a).unwrap());
    }

    #[test]
    fn jacobi_density_at_1024() {
        let a = assemble_poisson(&crate::poisson::OccupancyGrid::all_fluid(32, 32).unwrap());
        let j = JacobiPrecond::new(&a).unwrap();
        let d = operator_density(&j, 1024).unwrap();
        assert!((d - 1.0 / 1024.0).abs() < 1e-15);
    }
}
