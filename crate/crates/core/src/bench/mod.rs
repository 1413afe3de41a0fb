//! Evaluation of every method on a sample set and the summary tables.
//!
//! Per-sample results are persisted in an audit CSV from which the summary
//! can be recomputed exactly:
//!
//! ```text
//! method,sample,n,time_ms,setup_ms,iter,converged,kappa,density,final_residual
//! ```

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::cnn::CnnParams;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fmt17;
use crate::krylov::{cg, kappa, pcg, save_residual_csv, SolveOptions, SolveReport};
use crate::poisson::PoissonSample;
use crate::precond::{
    amg_setup, ic0, operator_density, preconditioned_operator, AmgParams, IdentityPrecond,
    JacobiPrecond, LearnedPrecond, Preconditioner, DEFAULT_IC0_SHIFT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Vanilla,
    Jacobi,
    Ic0,
    Amg,
    Learned,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vanilla,
        Method::Jacobi,
        Method::Ic0,
        Method::Amg,
        Method::Learned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Jacobi => "jacobi",
            Method::Ic0 => "ic0",
            Method::Amg => "amg",
            Method::Learned => "learned",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Parses a comma-separated method list, rejecting duplicates.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let m: Method = part.parse()?;
        if out.contains(&m) {
            return Err(Error::InvalidArgument(format!("method {m} listed twice")));
        }
        out.push(m);
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no methods given".into()));
    }
    Ok(out)
}

fn build_preconditioner(
    method: Method,
    a: &crate::sparse::CsrMatrix,
    model: Option<&CnnParams>,
) -> Result<Box<dyn Preconditioner>> {
    Ok(match method {
        Method::Vanilla => Box::new(IdentityPrecond::new(a.n_rows())),
        Method::Jacobi => Box::new(JacobiPrecond::new(a)?),
        Method::Ic0 => Box::new(ic0(a, DEFAULT_IC0_SHIFT)?),
        Method::Amg => Box::new(amg_setup(a, &AmgParams::default())?),
        Method::Learned => {
            let params = model.ok_or(Error::MissingCheckpoint)?;
            let p = LearnedPrecond::from_model(params, a)?;
            if !p.support_contained() {
                log::warn!("learned factor left the receptive-field dilation of the input");
            }
            Box::new(p)
        }
    })
}

/// Builds the method's preconditioner once, solves, and fills `κ(A M⁻¹)`,
/// density and setup time. `vanilla` runs plain CG.
pub fn evaluate_method(
    sample: &PoissonSample,
    method: Method,
    model: Option<&CnnParams>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let a = &sample.matrix;
    let n = a.n_rows();
    let setup_start = Instant::now();
    let precond = build_preconditioner(method, a, model)?;
    let setup_time_ms = setup_start.elapsed().as_secs_f64() * 1e3;

    let mut report = match method {
        Method::Vanilla => cg(a, &sample.rhs, opts)?,
        _ => pcg(a, precond.as_ref(), &sample.rhs, opts)?,
    };
    report.setup_time_ms = setup_time_ms;
    let operator = match method {
        Method::Vanilla => a.to_dense()?,
        _ => preconditioned_operator(a, precond.as_ref())?,
    };
    report.kappa = Some(kappa(&operator)?);
    report.density = Some(operator_density(precond.as_ref(), n)?);
    Ok(report)
}

/// One method's result on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub method: Method,
    pub sample: usize,
    pub n: usize,
    pub time_ms: f64,
    pub setup_ms: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kappa: f64,
    pub density: f64,
    pub final_residual: f64,
}

impl SampleResult {
    fn from_report(method: Method, sample: &PoissonSample, r: &SolveReport) -> Self {
        Self {
            method,
            sample: sample.id,
            n: sample.n(),
            time_ms: r.wall_time_ms,
            setup_ms: r.setup_time_ms,
            iterations: r.iterations,
            converged: r.converged,
            kappa: r.kappa.unwrap_or(f64::NAN),
            density: r.density.unwrap_or(f64::NAN),
            final_residual: r.final_residual(),
        }
    }
}

/// Results of every requested method, method-major, samples in input order.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub results: Vec<SampleResult>,
    /// Residual histories aligned with `results`.
    pub histories: Vec<Vec<f64>>,
}

/// Evaluates each method on each sample, fanning out across samples.
pub fn evaluate_all(
    samples: &[PoissonSample],
    methods: &[Method],
    model: Option<&CnnParams>,
    opts: &SolveOptions,
    exec: Execution,
) -> Result<EvalRun> {
    if methods.contains(&Method::Learned) && model.is_none() {
        return Err(Error::MissingCheckpoint);
    }
    let mut results = Vec::with_capacity(samples.len() * methods.len());
    let mut histories = Vec::with_capacity(results.capacity());
    for &method in methods {
        let reports = exec.map(samples, |s| {
            evaluate_method(s, method, model, opts).map_err(|e| e.in_sample(s.id))
        });
        for (s, r) in samples.iter().zip(reports) {
            let r = r?;
            log::debug!("{method} sample {}: {} iterations", s.id, r.iterations);
            results.push(SampleResult::from_report(method, s, &r));
            histories.push(r.residual_history);
        }
    }
    Ok(EvalRun { results, histories })
}

/// Writes `<dir>/<method>_sample<id>.csv` for every result.
pub fn save_residual_csvs(run: &EvalRun, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (r, h) in run.results.iter().zip(&run.histories) {
        save_residual_csv(h, dir.join(format!("{}_sample{}.csv", r.method, r.sample)))?;
    }
    Ok(())
}

/// Means of one method's columns over its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub samples: usize,
    pub time_ms: f64,
    pub setup_ms: f64,
    pub iterations: f64,
    pub kappa: f64,
    pub density: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

/// Arithmetic means per method, in order of first appearance. Every method
/// must cover exactly the same sample ids.
pub fn summarize(results: &[SampleResult]) -> Result<Vec<MethodSummary>> {
    let mut methods: Vec<Method> = Vec::new();
    for r in results {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut reference: Option<(Method, Vec<usize>)> = None;
    let mut out = Vec::with_capacity(methods.len());
    for m in methods {
        let rows: Vec<&SampleResult> = results.iter().filter(|r| r.method == m).collect();
        let mut ids: Vec<usize> = rows.iter().map(|r| r.sample).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::MismatchedSamples(format!(
                "{m} lists a sample twice"
            )));
        }
        match &reference {
            None => reference = Some((m, ids)),
            Some((first, want)) if *want != ids => {
                return Err(Error::MismatchedSamples(format!(
                    "{m} and {first} cover different samples"
                )));
            }
            Some(_) => {}
        }
        out.push(MethodSummary {
            method: m,
            samples: rows.len(),
            time_ms: mean(rows.iter().map(|r| r.time_ms)),
            setup_ms: mean(rows.iter().map(|r| r.setup_ms)),
            iterations: mean(rows.iter().map(|r| r.iterations as f64)),
            kappa: mean(rows.iter().map(|r| r.kappa)),
            density: mean(rows.iter().map(|r| r.density)),
        });
    }
    Ok(out)
}

/// `method,time_ms,iter,kappa,density`; with `omit_time` the time column is
/// written as `NA` so the file depends only on deterministic quantities.
pub fn write_summary_csv<W: Write>(
    summaries: &[MethodSummary],
    omit_time: bool,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "method,time_ms,iter,kappa,density")?;
    for s in summaries {
        let time = if omit_time {
            "NA".to_string()
        } else {
            fmt17(s.time_ms)
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            s.method,
            time,
            fmt17(s.iterations),
            fmt17(s.kappa),
            fmt17(s.density)
        )?;
    }
    Ok(())
}

const AUDIT_HEADER: &str =
    "method,sample,n,time_ms,setup_ms,iter,converged,kappa,density,final_residual";

pub fn write_audit_csv<W: Write>(results: &[SampleResult], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{AUDIT_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.sample,
            r.n,
            fmt17(r.time_ms),
            fmt17(r.setup_ms),
            r.iterations,
            r.converged,
            fmt17(r.kappa),
            fmt17(r.density),
            fmt17(r.final_residual)
        )?;
    }
    Ok(())
}

pub fn read_audit_csv<R: BufRead>(input: R) -> Result<Vec<SampleResult>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let no = k + 1;
        let line = line.map_err(|e| Error::parse(no, e.to_string()))?;
        if no == 1 {
            if line.trim() != AUDIT_HEADER {
                return Err(Error::parse(no, format!("bad header {line:?}")));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::parse(
                no,
                format!("expected 10 fields, found {}", f.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::parse(no, format!("bad number {:?}", f[i])))
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse()
                .map_err(|_| Error::parse(no, format!("bad integer {:?}", f[i])))
        };
        out.push(SampleResult {
            method: f[0].parse()?,
            sample: int(1)?,
            n: int(2)?,
            time_ms: num(3)?,
            setup_ms: num(4)?,
            iterations: int(5)?,
            converged: f[6]
                .parse()
                .map_err(|_| Error::parse(no, format!("bad flag {:?}", f[6])))?,
            kappa: num(7)?,
            density: num(8)?,
            final_residual: num(9)?,
        });
    }
    Ok(out)
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_summary_csv(
    summaries: &[MethodSummary],
    omit_time: bool,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(path.as_ref(), |w| {
        write_summary_csv(summaries, omit_time, w)
    })
}

pub fn save_audit_csv(results: &[SampleResult], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), |w| write_audit_csv(results, w))
}

pub fn load_audit_csv(path: impl AsRef<Path>) -> Result<Vec<SampleResult>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_audit_csv(BufReader::new(file))
}

/// Audit file written next to a summary: `out.csv` → `out.audit.csv`.
pub fn audit_path_for(summary: &Path) -> std::path::PathBuf {
    let stem = summary
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    summary.with_file_name(format!("{stem}.audit.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson::generate_samples;

    fn result(method: Method, sample: usize, iterations: usize) -> SampleResult {
        SampleResult {
            method,
            sample,
            n: 9,
            time_ms: 1.5,
            setup_ms: 0.25,
            iterations,
            converged: true,
            kappa: 3.0,
            density: 0.5,
            final_residual: 1e-7,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!(
            parse_methods("vanilla,jacobi,ic0,amg,learned").unwrap(),
            Method::ALL.to_vec()
        );
        assert!(parse_methods("ic0,ic0").is_err());
        assert!(parse_methods("ilu").is_err());
    }

    #[test]
    fn summary_means() {
        let s = summarize(&[result(Method::Ic0, 0, 7)]).unwrap();
        assert_eq!(s[0].iterations, 7.0);
        assert_eq!(
            (s[0].kappa, s[0].density, s[0].time_ms, s[0].samples),
            (3.0, 0.5, 1.5, 1)
        );
        let s = summarize(&[result(Method::Amg, 0, 10), result(Method::Amg, 1, 20)]).unwrap();
        assert_eq!(s[0].iterations, 15.0);
    }

    #[test]
    fn mismatched_samples_are_rejected() {
        let rows = [
            result(Method::Vanilla, 0, 1),
            result(Method::Vanilla, 1, 1),
            result(Method::Jacobi, 0, 1),
        ];
        assert!(matches!(summarize(&rows), Err(Error::MismatchedSamples(_))));
        let rows = [result(Method::Vanilla, 0, 1), result(Method::Jacobi, 2, 1)];
        assert!(matches!(summarize(&rows), Err(Error::MismatchedSamples(_))));
    }

    #[test]
    fn learned_needs_a_model() {
        let s = generate_samples(5, 5, 1, 1, 1, Execution::Sequential).unwrap();
        let err =
            evaluate_method(&s[0], Method::Learned, None, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint));
        assert!(evaluate_all(
            &s,
            &[Method::Learned],
            None,
            &SolveOptions::default(),
            Execution::Sequential
        )
        .is_err());
    }

    #[test]
    fn vanilla_is_cg_and_jacobi_matches_it() {
        let samples = generate_samples(10, 10, 4, 3, 8, Execution::Sequential).unwrap();
        let opts = SolveOptions::default();
        for s in &samples {
            let v = evaluate_method(s, Method::Vanilla, None, &opts).unwrap();
            let plain = cg(&s.matrix, &s.rhs, &opts).unwrap();
            assert_eq!(v.residual_history, plain.residual_history);
            let j = evaluate_method(s, Method::Jacobi, None, &opts).unwrap();
            assert_eq!(j.iterations, v.iterations);
            let (kj, kv) = (j.kappa.unwrap(), v.kappa.unwrap());
            assert!((kj - kv).abs() <= 1e-10 * kv);
        }
    }

    #[test]
    fn zero_model_matches_vanilla_iterations() {
        let samples = generate_samples(10, 10, 3, 2, 9, Execution::Sequential).unwrap();
        let opts = SolveOptions::default();
        let zero = CnnParams::zeros();
        for s in &samples {
            let v = evaluate_method(s, Method::Vanilla, None, &opts).unwrap();
            let l = evaluate_method(s, Method::Learned, Some(&zero), &opts).unwrap();
            assert_eq!(l.iterations, v.iterations);
            assert!((l.kappa.unwrap() - v.kappa.unwrap()).abs() <= 1e-10 * v.kappa.unwrap());
            assert_eq!(l.density.unwrap(), 1.0 / s.n() as f64);
        }
    }

    #[test]
    fn audit_resummarizes_byte_identically() {
        let samples = generate_samples(8, 8, 3, 2, 4, Execution::Sequential).unwrap();
        let run = evaluate_all(
            &samples,
            &[Method::Vanilla, Method::Ic0, Method::Amg],
            None,
            &SolveOptions::default(),
            Execution::default(),
        )
        .unwrap();
        let summary = summarize(&run.results).unwrap();
        let mut direct = Vec::new();
        write_summary_csv(&summary, false, &mut direct).unwrap();

        let mut audit = Vec::new();
        write_audit_csv(&run.results, &mut audit).unwrap();
        let reread = read_audit_csv(audit.as_slice()).unwrap();
        assert_eq!(reread, run.results);
        let mut again = Vec::new();
        write_summary_csv(&summarize(&reread).unwrap(), false, &mut again).unwrap();
        assert_eq!(direct, again);

        let dir = tempfile::tempdir().unwrap();
        save_residual_csvs(&run, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("amg_sample1.csv")).unwrap();
        assert!(text.starts_with("iteration,residual\n0,"));
    }

    #[test]
    fn audit_path_sits_next_to_summary() {
        assert_eq!(
            audit_path_for(Path::new("/tmp/x/out.csv")),
            Path::new("/tmp/x/out.audit.csv")
        );
    }
}
