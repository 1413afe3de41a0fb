//! Incomplete Cholesky with zero fill-in.

use super::{check_len, PrecondKind, Preconditioner};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const DEFAULT_IC0_SHIFT: f64 = 1e-3;
pub const MAX_SHIFT_DOUBLINGS: usize = 20;

/// Factors `A + shift·diag(A)` on the pattern of `tril(A)`.
///
/// Returns `None` on a non-positive pivot.
pub fn ic0_factor(a: &CsrMatrix, shift: f64) -> Result<Option<CsrMatrix>> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            n_rows: a.n_rows(),
            n_cols: a.n_cols(),
        });
    }
    let lower = a.lower();
    let n = lower.n_rows();
    let row_ptr = lower.row_ptr().to_vec();
    let col_idx = lower.col_idx().to_vec();
    let mut vals = lower.values().to_vec();

    for i in 0..n {
        let (start, end) = (row_ptr[i], row_ptr[i + 1]);
        if start == end || col_idx[end - 1] != i {
            return Ok(None);
        }
        for p in start..end - 1 {
            let k = col_idx[p];
            // s = a_ik - sum_{j<k} L_ij L_kj over the shared pattern
            let mut s = vals[p];
            let (mut q, mut r) = (start, row_ptr[k]);
            let r_end = row_ptr[k + 1] - 1;
            while q < p && r < r_end {
                match col_idx[q].cmp(&col_idx[r]) {
                    std::cmp::Ordering::Less => q += 1,
                    std::cmp::Ordering::Greater => r += 1,
                    std::cmp::Ordering::Equal => {
                        s -= vals[q] * vals[r];
                        q += 1;
                        r += 1;
                    }
                }
            }
            vals[p] = s / vals[r_end];
        }
        let mut d = vals[end - 1] * (1.0 + shift);
        for p in start..end - 1 {
            d -= vals[p] * vals[p];
        }
        if !(d > 0.0) {
            return Ok(None);
        }
        vals[end - 1] = d.sqrt();
    }
    CsrMatrix::from_raw_parts(n, n, row_ptr, col_idx, vals).map(Some)
}

#[derive(Debug, Clone)]
pub struct Ic0Precond {
    factor: CsrMatrix,
    shift: f64,
}

impl Ic0Precond {
    pub fn factor(&self) -> &CsrMatrix {
        &self.factor
    }

    /// Diagonal shift α that was needed, `0` when none.
    pub fn shift(&self) -> f64 {
        self.shift
    }
}

/// IC(0); on breakdown retries with `A + α diag(A)` for
/// `α = shift0, 2·shift0, 4·shift0, ...`.
pub fn ic0(a: &CsrMatrix, shift0: f64) -> Result<Ic0Precond> {
    if let Some(factor) = ic0_factor(a, 0.0)? {
        return Ok(Ic0Precond { factor, shift: 0.0 });
    }
    let mut shift = shift0;
    for attempt in 0..=MAX_SHIFT_DOUBLINGS {
        if let Some(factor) = ic0_factor(a, shift)? {
            log::debug!("IC(0) needed diagonal shift {shift:e} after {attempt} doublings");
            return Ok(Ic0Precond { factor, shift });
        }
        shift *= 2.0;
    }
    Err(Error::IcBreakdown {
        attempts: MAX_SHIFT_DOUBLINGS,
        shift: shift / 2.0,
    })
}

impl Preconditioner for Ic0Precond {
    fn kind(&self) -> PrecondKind {
        PrecondKind::Ic0
    }

    fn dim(&self) -> usize {
        self.factor.n_rows()
    }

    fn apply_into(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        check_len(self.dim(), r, z)?;
        z.copy_from_slice(r);
        self.factor.lower_solve_in_place(z, false)?;
        self.factor.lower_solve_in_place(z, true)
    }

    fn stored_nnz(&self) -> Option<usize> {
        Some(self.factor.nnz())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::{pcg, SolveOptions};
    use crate::poisson::{assemble_poisson, generate_grid, laplacian_1d};
    use crate::precond::probes::assert_linear_spd;
    use crate::sparse::{symmetric_eigenvalues, DenseMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_matrix_gives_sqrt_factor() {
        let a = CsrMatrix::from_diagonal(&[4.0, 9.0, 2.25]);
        let p = ic0(&a, DEFAULT_IC0_SHIFT).unwrap();
        assert_eq!(
            p.factor().to_coo(),
            vec![(0, 0, 2.0), (1, 1, 3.0), (2, 2, 1.5)]
        );
        let rep = pcg(&a, &p, &[1.0, 2.0, 3.0], &SolveOptions::with_tol(1e-12)).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn tridiagonal_factor_is_exact() {
        let a = laplacian_1d(8);
        let p = ic0(&a, DEFAULT_IC0_SHIFT).unwrap();
        assert_eq!(p.shift(), 0.0);
        let exact = a.to_dense().unwrap().cholesky().unwrap();
        let got = p.factor().to_dense().unwrap();
        assert!(got.max_abs_diff(&exact) < 1e-12);
        let b: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let rep = pcg(&a, &p, &b, &SolveOptions::with_tol(1e-10)).unwrap();
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn poisson_factor_keeps_pattern() {
        let a = assemble_poisson(&generate_grid(9, 9, 3, 4).unwrap());
        let p = ic0(&a, DEFAULT_IC0_SHIFT).unwrap();
        assert_eq!(p.shift(), 0.0);
        let l = a.lower();
        assert_eq!(p.factor().col_idx(), l.col_idx());
        assert_eq!(p.factor().row_ptr(), l.row_ptr());
        assert_linear_spd(&p);
    }

    /// Random sparse symmetric matrix shifted to be barely SPD.
    fn barely_spd(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
        let mut d = DenseMatrix::zeros(n, n).unwrap();
        for i in 0..n {
            for j in 0..i {
                if rng.random_bool(0.35) {
                    let v = rng.random_range(-1.0..1.0);
                    d.set(i, j, v);
                    d.set(j, i, v);
                }
            }
        }
        let lo = symmetric_eigenvalues(&d).unwrap()[0];
        let mut e = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    d.get(i, i) - lo + 0.05
                } else {
                    d.get(i, j)
                };
                if v != 0.0 {
                    e.push((i, j, v));
                }
            }
        }
        CsrMatrix::from_coo(n, n, &e).unwrap()
    }

    #[test]
    fn breakdown_specimen_is_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let specimen = (0..500)
            .map(|_| barely_spd(10, &mut rng))
            .find(|a| ic0_factor(a, 0.0).unwrap().is_none())
            .expect("randomised search finds an IC(0) breakdown");
        // the specimen itself is SPD: dense Cholesky succeeds
        specimen.to_dense().unwrap().cholesky().unwrap();
        let p = ic0(&specimen, DEFAULT_IC0_SHIFT).unwrap();
        assert!(p.shift() >= DEFAULT_IC0_SHIFT);
        assert!(p.factor().diagonal().iter().all(|&d| d > 0.0));
        assert_linear_spd(&p);
    }

    #[test]
    fn persistent_breakdown_is_an_error() {
        let a = CsrMatrix::from_coo(
            2,
            2,
            &[(0, 0, 1.0), (1, 0, 5.0), (0, 1, 5.0), (1, 1, -30.0)],
        )
        .unwrap();
        assert!(matches!(
            ic0(&a, DEFAULT_IC0_SHIFT),
            Err(Error::IcBreakdown { .. })
        ));
    }
}
