//! Conjugate gradients, right-preconditioned conjugate gradients, and the
//! spectral quantities that govern their convergence.

mod spectral;

pub use spectral::{
    cg_error_bound, condition_number, iterations_per_decade, kappa, singular_values,
    symmetrized_kappa, SpectralInfo,
};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::precond::Preconditioner;
use crate::sparse::{dot, norm2, CsrMatrix};

/// The true residual `b - A x` replaces the recurrence every this many
/// iterations.
pub const RESIDUAL_REFRESH: usize = 50;

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative tolerance on the unpreconditioned residual, `‖r‖ ≤ tol·‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial guess; zero when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
            x0: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖b - A x_j‖₂` for `j = 0..=iterations`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub wall_time_ms: f64,
    /// `κ(A M⁻¹)`, filled in by the caller when requested.
    pub kappa: Option<f64>,
    pub density: Option<f64>,
    pub setup_time_ms: f64,
    pub solution: Vec<f64>,
    pub x0: Vec<f64>,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self
            .residual_history
            .last()
            .expect("history holds the initial residual")
    }
}

fn prepare(a: &CsrMatrix, b: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            n_rows: a.n_rows(),
            n_cols: a.n_cols(),
        });
    }
    if b.len() != a.n_rows() {
        return Err(Error::DimensionMismatch {
            expected: a.n_rows(),
            found: b.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    match &opts.x0 {
        Some(x0) if x0.len() != b.len() => Err(Error::DimensionMismatch {
            expected: b.len(),
            found: x0.len(),
        }),
        Some(x0) => Ok(x0.clone()),
        None => Ok(vec![0.0; b.len()]),
    }
}

fn true_residual(a: &CsrMatrix, b: &[f64], x: &[f64], r: &mut [f64]) -> Result<()> {
    a.spmv_into(x, r)?;
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    Ok(())
}

/// Unpreconditioned conjugate gradients.
pub fn cg(a: &CsrMatrix, b: &[f64], opts: &SolveOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let x0 = prepare(a, b, opts)?;
    let n = b.len();
    let mut x = x0.clone();
    let mut r = vec![0.0; n];
    true_residual(a, b, &x, &mut r)?;
    let threshold = opts.tol * norm2(b);
    let mut history = vec![norm2(&r)];
    let mut converged = history[0] <= threshold;
    let mut iterations = 0;

    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &r);
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        a.spmv_into(&p, &mut ap)?;
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::NotSpd {
                iteration: iterations,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        if iterations % RESIDUAL_REFRESH == 0 {
            true_residual(a, b, &x, &mut r)?;
        } else {
            for i in 0..n {
                r[i] -= alpha * ap[i];
            }
        }
        let rnorm = norm2(&r);
        history.push(rnorm);
        if rnorm <= threshold {
            converged = true;
            break;
        }
        let rz_new = dot(&r, &r);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rz = rz_new;
    }
    Ok(SolveReport {
        iterations,
        residual_history: history,
        converged,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        kappa: None,
        density: None,
        setup_time_ms: 0.0,
        solution: x,
        x0,
    })
}

/// Preconditioned conjugate gradients with `z = M⁻¹ r` each iteration.
///
/// The iterate is the solution of the original system and the stopping test
/// uses the unpreconditioned residual.
pub fn pcg(
    a: &CsrMatrix,
    m: &dyn Preconditioner,
    b: &[f64],
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    let x0 = prepare(a, b, opts)?;
    let n = b.len();
    if m.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m.dim(),
        });
    }
    let mut x = x0.clone();
    let mut r = vec![0.0; n];
    true_residual(a, b, &x, &mut r)?;
    let threshold = opts.tol * norm2(b);
    let mut history = vec![norm2(&r)];
    let mut converged = history[0] <= threshold;
    let mut iterations = 0;

    let mut z = vec![0.0; n];
    m.apply_into(&r, &mut z)?;
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    if !converged && !(rz > 0.0) {
        return Err(Error::PreconditionerNotSpd {
            iteration: 0,
            value: rz,
        });
    }
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        a.spmv_into(&p, &mut ap)?;
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::NotSpd {
                iteration: iterations,
                curvature,
            });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        if iterations % RESIDUAL_REFRESH == 0 {
            true_residual(a, b, &x, &mut r)?;
        } else {
            for i in 0..n {
                r[i] -= alpha * ap[i];
            }
        }
        let rnorm = norm2(&r);
        history.push(rnorm);
        if rnorm <= threshold {
            converged = true;
            break;
        }
        m.apply_into(&r, &mut z)?;
        let rz_new = dot(&r, &z);
        if !(rz_new > 0.0) {
            return Err(Error::PreconditionerNotSpd {
                iteration: iterations,
                value: rz_new,
            });
        }
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    Ok(SolveReport {
        iterations,
        residual_history: history,
        converged,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        kappa: None,
        density: None,
        setup_time_ms: 0.0,
        solution: x,
        x0,
    })
}

/// `iteration,residual` CSV, one row per entry of the history.
pub fn write_residual_csv<W: Write>(history: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,residual")?;
    for (j, r) in history.iter().enumerate() {
        writeln!(out, "{j},{}", crate::fmt17(*r))?;
    }
    Ok(())
}

pub fn save_residual_csv(history: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_residual_csv(history, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
