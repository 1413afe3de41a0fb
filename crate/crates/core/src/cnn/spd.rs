use super::feature_map::FeatureMap;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::sparse::{symmetric_eigenvalues, CsrMatrix, DenseMatrix};

/// Floor applied to the factor diagonal.
pub const EPSILON: f64 = 1e-3;

/// Lower factor `T + D` of the learned operator `M⁻¹ = (T + D)(T + D)ᵀ`.
#[derive(Debug, Clone)]
pub struct SpdFactors {
    /// Strictly lower part of the raw map.
    pub strict_lower: CsrMatrix,
    /// `max(diag(raw), ε)`.
    pub diag: Vec<f64>,
    pub epsilon: f64,
    /// `T + D`, lower triangular with the diagonal last in each row.
    pub factor: CsrMatrix,
}

impl SpdFactors {
    /// `M⁻¹ r = F (Fᵀ r)`.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        let y = self.factor.spmv_transpose(r)?;
        self.factor.spmv(&y)
    }

    /// Dense `M⁻¹`, for inspection at small sizes.
    pub fn minv_dense(&self) -> Result<DenseMatrix> {
        let f = self.factor.to_dense()?;
        f.matmul(&f.transpose())
    }

    /// Smallest eigenvalue of `M⁻¹`, computed as `1 / λ_max(F⁻ᵀ F⁻¹)`.
    ///
    /// Clamped diagonals can push `λ_min(F Fᵀ)` far below round-off of
    /// `λ_max`, where a direct eigen solve of `M⁻¹` returns noise; the largest
    /// eigenvalue of the inverse keeps its relative accuracy.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let n = self.factor.n_rows();
        let mut inv = DenseMatrix::zeros(n, n)?;
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            self.factor.lower_solve_in_place(&mut e, false)?;
            for (i, v) in e.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        let gram = inv.transpose().matmul(&inv)?;
        let top = *symmetric_eigenvalues(&gram)?.last().expect("non-empty");
        Ok(1.0 / top)
    }
}

/// Keeps the strictly lower part of `raw`, clamps its diagonal from below by
/// [`EPSILON`], and discards the upper part.
pub fn spd_assemble(raw: &FeatureMap) -> Result<SpdFactors> {
    let n = raw.height();
    if raw.width() != n || raw.channels() != 1 {
        return Err(Error::ShapeMismatch {
            tensor: format!(
                "raw map {}x{}x{}",
                raw.channels(),
                raw.height(),
                raw.width()
            ),
        });
    }
    let mut diag = vec![EPSILON; n];
    let mut lower = Vec::new();
    for (s, (i, j)) in raw.sites().enumerate() {
        let v = raw.site_values(s)[0];
        if j < i {
            lower.push((i, j, v));
        } else if j == i {
            diag[i] = v.max(EPSILON);
        }
    }
    let strict_lower = CsrMatrix::from_coo(n, n, &lower)?;
    let mut with_diag = lower;
    with_diag.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    let factor = CsrMatrix::from_coo(n, n, &with_diag)?;
    Ok(SpdFactors {
        strict_lower,
        diag,
        epsilon: EPSILON,
        factor,
    })
}

/// Dense `A F Fᵀ` built row by row from sparse products.
pub fn learned_operator_dense(
    a: &CsrMatrix,
    factor: &CsrMatrix,
    exec: Execution,
) -> Result<DenseMatrix> {
    let n = a.n_rows();
    let af = a.matmul(factor)?;
    let ft = factor.transpose();
    let mut b = DenseMatrix::zeros(n, factor.n_rows())?;
    let width = b.n_cols();
    exec.for_each_chunk_mut(b.values_mut(), width, |i, row| {
        let (cols, vals) = af.row(i);
        for (&k, &v) in cols.iter().zip(vals) {
            let (fc, fv) = ft.row(k);
            for (&j, &w) in fc.iter().zip(fv) {
                row[j] += v * w;
            }
        }
    });
    Ok(b)
}
