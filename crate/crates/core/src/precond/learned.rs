//! Preconditioner produced by the model: `M⁻¹ = F Fᵀ` with `F = T + D`.

use super::{check_len, PrecondKind, Preconditioner};
use crate::cnn::{
    encode_input, forward_trace, spd_assemble, support_within_dilation, CnnParams, SpdFactors,
    RECEPTIVE_DILATION,
};
use crate::error::Result;
use crate::exec::Execution;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct LearnedPrecond {
    factors: SpdFactors,
    factor_t: CsrMatrix,
    /// Whether the raw map stayed inside the receptive-field dilation of the
    /// input encoding.
    support_contained: bool,
    /// Density of `tril(A)`, for comparison with the factor density.
    input_lower_density: f64,
}

impl LearnedPrecond {
    pub fn from_factors(factors: SpdFactors) -> Self {
        let factor_t = factors.factor.transpose();
        Self {
            factors,
            factor_t,
            support_contained: true,
            input_lower_density: f64::NAN,
        }
    }

    /// Runs the model once on `a` and assembles the factor.
    pub fn from_model(params: &CnnParams, a: &CsrMatrix) -> Result<Self> {
        let trace = forward_trace(params, a, Execution::default())?;
        let input = encode_input(a)?;
        let support_contained = support_within_dilation(trace.output(), &input, RECEPTIVE_DILATION);
        let factors = spd_assemble(trace.output())?;
        Ok(Self {
            support_contained,
            input_lower_density: a.lower().density(),
            ..Self::from_factors(factors)
        })
    }

    pub fn factors(&self) -> &SpdFactors {
        &self.factors
    }

    pub fn support_contained(&self) -> bool {
        self.support_contained
    }

    pub fn factor_density(&self) -> f64 {
        self.factors.factor.density()
    }

    pub fn input_lower_density(&self) -> f64 {
        self.input_lower_density
    }
}

impl Preconditioner for LearnedPrecond {
    fn kind(&self) -> PrecondKind {
        PrecondKind::Learned
    }

    fn dim(&self) -> usize {
        self.factors.factor.n_rows()
    }

    fn apply_into(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        check_len(self.dim(), r, z)?;
        let y = self.factor_t.spmv(r)?;
        self.factors.factor.spmv_into(&y, z)
    }

    fn stored_nnz(&self) -> Option<usize> {
        Some(self.factors.factor.nnz())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::{cg, pcg, SolveOptions};
    use crate::poisson::{assemble_poisson, generate_grid, generate_rhs};
    use crate::precond::probes::assert_linear_spd;

    #[test]
    fn zero_model_matches_plain_cg() {
        let grid = generate_grid(8, 8, 2, 5).unwrap();
        let a = assemble_poisson(&grid);
        let b = generate_rhs(&grid, 1);
        let p = LearnedPrecond::from_model(&CnnParams::zeros(), &a).unwrap();
        let opts = SolveOptions::default();
        let plain = cg(&a, &b, &opts).unwrap();
        let pre = pcg(&a, &p, &b, &opts).unwrap();
        assert_eq!(plain.iterations, pre.iterations);
        assert!(p.support_contained());
    }

    #[test]
    fn random_model_is_linear_spd_and_sparse() {
        let a = assemble_poisson(&generate_grid(12, 12, 3, 6).unwrap());
        let p = LearnedPrecond::from_model(&CnnParams::init(8), &a).unwrap();
        assert_linear_spd(&p);
        assert!(p.support_contained());
        assert!(p.factor_density() <= 10.0 * p.input_lower_density());
        let via_factors = p.factors().apply(&vec![1.0; a.n_rows()]).unwrap();
        assert_eq!(p.apply(&vec![1.0; a.n_rows()]).unwrap(), via_factors);
    }
}
