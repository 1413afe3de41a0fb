//! Smoothed-aggregation algebraic multigrid, applied as one V-cycle.
//!
//! Setup: strength graph `|a_ij| > θ √(a_ii a_jj)`, greedy root-node
//! aggregation, tentative prolongator from the aggregate indicator with unit
//! columns, one damped-Jacobi smoothing step `P = (I - ω D⁻¹ A) P₀`, Galerkin
//! coarse operators `Pᵀ A P`. Coarsening continues until a level has at most
//! `max_coarse` unknowns, which is then solved by dense Cholesky.
//!
//! Apply: one pre- and one post-smoothing weighted-Jacobi step per level with
//! weight `4 / (3 ρ̂)`, `ρ̂` the Gershgorin bound on `ρ(D⁻¹ A)`. Identical
//! pre- and post-smoothers keep the cycle symmetric.

use super::{check_len, PrecondKind, Preconditioner};
use crate::error::Result;
use crate::sparse::{CsrMatrix, DenseMatrix};

#[derive(Debug, Clone)]
pub struct AmgParams {
    pub strength_threshold: f64,
    pub prolongation_omega: f64,
    pub max_coarse: usize,
    pub max_levels: usize,
}

impl Default for AmgParams {
    fn default() -> Self {
        Self {
            strength_threshold: 0.08,
            prolongation_omega: 2.0 / 3.0,
            max_coarse: 16,
            max_levels: 12,
        }
    }
}

const UNASSIGNED: usize = usize::MAX;

fn strong_neighbours(a: &CsrMatrix, theta: f64) -> Vec<Vec<usize>> {
    let diag = a.diagonal();
    (0..a.n_rows())
        .map(|i| {
            let (cols, vals) = a.row(i);
            cols.iter()
                .zip(vals)
                .filter(|&(&j, &v)| j != i && v.abs() > theta * (diag[i] * diag[j]).abs().sqrt())
                .map(|(&j, _)| j)
                .collect()
        })
        .collect()
}

/// Greedy root-node aggregation over the strength graph.
///
/// Returns the aggregate of every node and the number of aggregates.
pub fn aggregate(a: &CsrMatrix, theta: f64) -> (Vec<usize>, usize) {
    let n = a.n_rows();
    let strong = strong_neighbours(a, theta);
    let mut agg = vec![UNASSIGNED; n];
    let mut count = 0;

    // roots whose whole strong neighbourhood is still free
    for i in 0..n {
        if agg[i] != UNASSIGNED || strong[i].iter().any(|&j| agg[j] != UNASSIGNED) {
            continue;
        }
        agg[i] = count;
        for &j in &strong[i] {
            agg[j] = count;
        }
        count += 1;
    }

    // attach leftovers to the aggregate of their strongest aggregated neighbour
    let phase1 = agg.clone();
    for i in 0..n {
        if phase1[i] != UNASSIGNED {
            continue;
        }
        let (cols, vals) = a.row(i);
        let best = cols
            .iter()
            .zip(vals)
            .filter(|(j, _)| strong[i].contains(j) && phase1[**j] != UNASSIGNED)
            .fold(None::<(usize, f64)>, |best, (&j, &v)| match best {
                Some((_, bv)) if bv >= v.abs() => best,
                _ => Some((j, v.abs())),
            });
        if let Some((j, _)) = best {
            agg[i] = phase1[j];
        }
    }

    // whatever remains seeds new aggregates with its free neighbours
    for i in 0..n {
        if agg[i] != UNASSIGNED {
            continue;
        }
        agg[i] = count;
        for &j in &strong[i] {
            if agg[j] == UNASSIGNED {
                agg[j] = count;
            }
        }
        count += 1;
    }
    (agg, count)
}

#[derive(Debug, Clone)]
struct Level {
    a: CsrMatrix,
    inv_diag: Vec<f64>,
    smoother_weight: f64,
    p: CsrMatrix,
    r: CsrMatrix,
}

#[derive(Debug, Clone)]
enum Coarsest {
    Direct(DenseMatrix),
    /// Setup could not coarsen the fine level: plain Jacobi.
    Jacobi(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct AmgPrecond {
    n: usize,
    levels: Vec<Level>,
    coarsest: Coarsest,
}

fn inverse_diagonal(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect()
}

/// Gershgorin bound on `ρ(D⁻¹ A)`.
fn gershgorin_jacobi(a: &CsrMatrix, inv_diag: &[f64]) -> f64 {
    (0..a.n_rows())
        .map(|i| a.row(i).1.iter().map(|v| v.abs()).sum::<f64>() * inv_diag[i])
        .fold(0.0, f64::max)
}

fn smoothed_prolongator(
    a: &CsrMatrix,
    agg: &[usize],
    n_agg: usize,
    omega: f64,
) -> Result<CsrMatrix> {
    let n = a.n_rows();
    let mut sizes = vec![0usize; n_agg];
    for &g in agg {
        sizes[g] += 1;
    }
    let tentative: Vec<(usize, usize, f64)> = agg
        .iter()
        .enumerate()
        .map(|(i, &g)| (i, g, 1.0 / (sizes[g] as f64).sqrt()))
        .collect();
    let p0 = CsrMatrix::from_coo(n, n_agg, &tentative)?;
    let inv_diag = inverse_diagonal(a);
    let mut s = Vec::with_capacity(a.nnz());
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let id = if i == j { 1.0 } else { 0.0 };
            s.push((i, j, id - omega * inv_diag[i] * v));
        }
    }
    let smoother = CsrMatrix::from_coo(n, n, &s)?;
    smoother.matmul(&p0)
}

impl AmgPrecond {
    pub fn new(a: &CsrMatrix, params: &AmgParams) -> Result<Self> {
        let n = a.n_rows();
        let mut levels = Vec::new();
        let mut current = a.clone();
        while levels.len() + 1 < params.max_levels {
            let (agg, n_agg) = aggregate(&current, params.strength_threshold);
            if n_agg == 0 || n_agg >= current.n_rows() {
                break;
            }
            let p = smoothed_prolongator(&current, &agg, n_agg, params.prolongation_omega)?;
            let r = p.transpose();
            let coarse = r.matmul(&current.matmul(&p)?)?;
            let inv_diag = inverse_diagonal(&current);
            let rho = gershgorin_jacobi(&current, &inv_diag);
            levels.push(Level {
                a: current,
                inv_diag,
                smoother_weight: 4.0 / (3.0 * rho),
                p,
                r,
            });
            current = coarse;
            if current.n_rows() <= params.max_coarse {
                break;
            }
        }
        let coarsest = if levels.is_empty() {
            log::debug!("AMG aggregation made no progress; falling back to Jacobi");
            Coarsest::Jacobi(inverse_diagonal(a))
        } else {
            Coarsest::Direct(current.to_dense()?.cholesky()?)
        };
        Ok(Self {
            n,
            levels,
            coarsest,
        })
    }

    /// Number of coarse levels below the fine one.
    pub fn coarse_levels(&self) -> usize {
        self.levels.len()
    }

    /// Sizes of every level, finest first.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.levels.iter().map(|l| l.a.n_rows()).collect();
        match &self.coarsest {
            Coarsest::Direct(l) => s.push(l.n_rows()),
            Coarsest::Jacobi(d) => s.push(d.len()),
        }
        s
    }

    pub fn is_single_level(&self) -> bool {
        matches!(self.coarsest, Coarsest::Jacobi(_))
    }

    fn vcycle(&self, level: usize, b: &[f64]) -> Result<Vec<f64>> {
        if level == self.levels.len() {
            return match &self.coarsest {
                Coarsest::Direct(l) => l.cholesky_solve(b),
                Coarsest::Jacobi(d) => Ok(b.iter().zip(d).map(|(x, y)| x * y).collect()),
            };
        }
        let lv = &self.levels[level];
        let w = lv.smoother_weight;
        let mut x: Vec<f64> = b
            .iter()
            .zip(&lv.inv_diag)
            .map(|(bi, d)| w * d * bi)
            .collect();
        let ax = lv.a.spmv(&x)?;
        let res: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
        let xc = self.vcycle(level + 1, &lv.r.spmv(&res)?)?;
        let corr = lv.p.spmv(&xc)?;
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        let ax = lv.a.spmv(&x)?;
        for i in 0..x.len() {
            x[i] += w * lv.inv_diag[i] * (b[i] - ax[i]);
        }
        Ok(x)
    }
}

pub fn amg_setup(a: &CsrMatrix, params: &AmgParams) -> Result<AmgPrecond> {
    AmgPrecond::new(a, params)
}

impl Preconditioner for AmgPrecond {
    fn kind(&self) -> PrecondKind {
        PrecondKind::Amg
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        check_len(self.n, r, z)?;
        z.copy_from_slice(&self.vcycle(0, r)?);
        Ok(())
    }

    fn stored_nnz(&self) -> Option<usize> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::{cg, pcg, SolveOptions};
    use crate::poisson::{assemble_poisson, generate_grid, laplacian_1d, OccupancyGrid};
    use crate::precond::{
        form_inverse_dense, ic0, operator_density, probes::assert_linear_spd, DEFAULT_IC0_SHIFT,
    };

    #[test]
    fn one_d_poisson_nine_aggregates_into_three() {
        let a = laplacian_1d(9);
        let (agg, count) = aggregate(&a, 0.08);
        assert_eq!(count, 3);
        assert_eq!(agg, vec![0, 0, 1, 1, 1, 2, 2, 2, 2]);
        let m = AmgPrecond::new(&a, &AmgParams::default()).unwrap();
        assert_eq!(m.coarse_levels(), 1);
        assert_eq!(m.level_sizes(), vec![9, 3]);
    }

    #[test]
    fn identity_falls_back_to_jacobi() {
        let a = CsrMatrix::identity(6);
        let m = AmgPrecond::new(&a, &AmgParams::default()).unwrap();
        assert!(m.is_single_level());
        let rep = pcg(
            &a,
            &m,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            &SolveOptions::with_tol(1e-10),
        )
        .unwrap();
        assert!(rep.iterations <= 2);
    }

    #[test]
    fn probes_hold() {
        for a in [
            laplacian_1d(40),
            assemble_poisson(&generate_grid(12, 12, 3, 1).unwrap()),
        ] {
            assert_linear_spd(&AmgPrecond::new(&a, &AmgParams::default()).unwrap());
        }
    }

    /// Spectral radius of `I - M⁻¹ A` by power iteration.
    fn error_propagation_radius(a: &CsrMatrix, m: &AmgPrecond) -> f64 {
        let n = a.n_rows();
        let mut v: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let mut est = 0.0;
        for _ in 0..200 {
            let av = a.spmv(&v).unwrap();
            let mav = m.apply(&av).unwrap();
            let w: Vec<f64> = v.iter().zip(&mav).map(|(x, y)| x - y).collect();
            let nv = crate::sparse::norm2(&v);
            let nw = crate::sparse::norm2(&w);
            est = nw / nv;
            v = w.iter().map(|x| x / nw).collect();
        }
        est
    }

    #[test]
    fn vcycle_is_convergent() {
        let cases = [
            laplacian_1d(64),
            assemble_poisson(&OccupancyGrid::all_fluid(16, 16).unwrap()),
            assemble_poisson(&generate_grid(20, 20, 4, 9).unwrap()),
        ];
        for a in &cases {
            let m = AmgPrecond::new(a, &AmgParams::default()).unwrap();
            let rho = error_propagation_radius(a, &m);
            assert!(rho < 1.0, "rho = {rho}");
        }
    }

    #[test]
    fn beats_ic0_on_32x32() {
        let a = assemble_poisson(&OccupancyGrid::all_fluid(32, 32).unwrap());
        let b = vec![1.0; a.n_rows()];
        let opts = SolveOptions::with_tol(1e-6);
        let amg = pcg(
            &a,
            &AmgPrecond::new(&a, &AmgParams::default()).unwrap(),
            &b,
            &opts,
        )
        .unwrap();
        let ic = pcg(&a, &ic0(&a, DEFAULT_IC0_SHIFT).unwrap(), &b, &opts).unwrap();
        let plain = cg(&a, &b, &opts).unwrap();
        assert!(
            amg.iterations < ic.iterations,
            "amg {} ic0 {}",
            amg.iterations,
            ic.iterations
        );
        assert!(ic.iterations < plain.iterations);
    }

    #[test]
    fn implicit_density_is_near_dense() {
        let a = assemble_poisson(&OccupancyGrid::all_fluid(12, 12).unwrap());
        let m = AmgPrecond::new(&a, &AmgParams::default()).unwrap();
        let d = operator_density(&m, a.n_rows()).unwrap();
        assert!(d > 0.9, "density {d}");
        let minv = form_inverse_dense(&m).unwrap();
        assert!(minv.is_symmetric(1e-12));
    }
}
