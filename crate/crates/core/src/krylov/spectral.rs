use crate::error::{Error, Result};
use crate::sparse::{check_dense_cap, symmetric_eigenvalues, CsrMatrix, DenseMatrix};

/// Below this the smallest singular value is treated as zero.
const SINGULAR_FLOOR: f64 = 1e-300;

/// Extreme singular triplets of a square matrix.
#[derive(Debug, Clone)]
pub struct SpectralInfo {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub u_max: Vec<f64>,
    pub v_max: Vec<f64>,
    pub u_min: Vec<f64>,
    pub v_min: Vec<f64>,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
}

impl SpectralInfo {
    pub fn kappa(&self) -> f64 {
        self.sigma_max / self.sigma_min
    }

    /// Relative gaps `(σ₁ - σ₂)/σ₁` and `(σₙ₋₁ - σₙ)/σ₁`; zero for n = 1.
    pub fn extreme_gaps(&self) -> (f64, f64) {
        let s = &self.singular_values;
        let n = s.len();
        if n < 2 {
            return (f64::INFINITY, f64::INFINITY);
        }
        ((s[0] - s[1]) / s[0], (s[n - 2] - s[n - 1]) / s[0])
    }
}

fn check_square(b: &DenseMatrix) -> Result<()> {
    if b.n_rows() != b.n_cols() {
        return Err(Error::NotSquare {
            n_rows: b.n_rows(),
            n_cols: b.n_cols(),
        });
    }
    check_dense_cap(b.n_rows())
}

/// Full SVD (Golub-Kahan, via nalgebra) returning the extreme singular
/// triplets; `κ = σ_max / σ_min`.
pub fn condition_number(b: &DenseMatrix) -> Result<SpectralInfo> {
    check_square(b)?;
    let svd = b.to_nalgebra().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let s = &svd.singular_values;
    let imax = s.imax();
    let imin = s.imin();
    let sigma_max = s[imax];
    let sigma_min = s[imin];
    if !(sigma_min >= SINGULAR_FLOOR) {
        return Err(Error::NumericallySingular { sigma_min });
    }
    let mut singular_values: Vec<f64> = s.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    Ok(SpectralInfo {
        sigma_max,
        sigma_min,
        u_max: u.column(imax).iter().copied().collect(),
        v_max: vt.row(imax).iter().copied().collect(),
        u_min: u.column(imin).iter().copied().collect(),
        v_min: vt.row(imin).iter().copied().collect(),
        singular_values,
    })
}

/// Singular values only, descending.
pub fn singular_values(b: &DenseMatrix) -> Result<Vec<f64>> {
    check_square(b)?;
    let mut s: Vec<f64> = b.to_nalgebra().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// `σ_max / σ_min` without singular vectors.
pub fn kappa(b: &DenseMatrix) -> Result<f64> {
    let s = singular_values(b)?;
    let sigma_min = *s.last().expect("non-empty");
    if !(sigma_min >= SINGULAR_FLOOR) {
        return Err(Error::NumericallySingular { sigma_min });
    }
    Ok(s[0] / sigma_min)
}

/// A-priori CG bound `2 ((√κ - 1)/(√κ + 1))^j ‖x - x₀‖_A`.
pub fn cg_error_bound(kappa: f64, j: usize, initial_error_a_norm: f64) -> f64 {
    let s = kappa.sqrt();
    let ratio = (s - 1.0) / (s + 1.0);
    if j == 0 {
        return 2.0 * initial_error_a_norm;
    }
    2.0 * ratio.powi(j as i32) * initial_error_a_norm
}

/// Eigenvalue ratio of the symmetrised operator `Cᵀ A C` with `M⁻¹ = C Cᵀ`.
///
/// `A M⁻¹` is similar to `Cᵀ A C`, so this is the eigenvalue condition
/// number of the right-preconditioned operator. Uses the Jacobi eigen
/// solver, independent of the SVD route.
pub fn symmetrized_kappa(a: &CsrMatrix, minv: &DenseMatrix) -> Result<f64> {
    let c = minv.cholesky()?;
    let ac = a.mul_dense(&c)?;
    let s = c.transpose().matmul(&ac)?;
    // symmetrise away round-off before the eigen solve
    let n = s.n_rows();
    let mut sym = s.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (s.get(i, j) + s.get(j, i));
            sym.set(i, j, v);
            sym.set(j, i, v);
        }
    }
    let e = symmetric_eigenvalues(&sym)?;
    let lo = e[0];
    if !(lo > 0.0) {
        return Err(Error::NumericallySingular { sigma_min: lo });
    }
    Ok(e[n - 1] / lo)
}

/// Iterations per decade of residual reduction, from a least-squares line
/// through `log10(residual)` over the final half of the history.
pub fn iterations_per_decade(history: &[f64]) -> Option<f64> {
    let start = history.len() / 2;
    let pts: Vec<(f64, f64)> = history
        .iter()
        .enumerate()
        .skip(start)
        .filter(|(_, &r)| r > 0.0)
        .map(|(j, &r)| (j as f64, r.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -1.0 / slope)
}
