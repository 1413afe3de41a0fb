//! `PMD1` dataset files.
//!
//! ```text
//! PMD1 <sample_count>
//! sample <id> <height> <width>
//! <row_0> <row_1> ... <row_{height-1}>      ('.' fluid, '#' solid)
//! matrix <n> <nnz>
//! <i> <j> <value>                            (nnz lines, row-major)
//! rhs <n>
//! <value>                                    (n lines)
//! ```
//!
//! Values carry 17 significant digits so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{OccupancyGrid, PoissonSample};
use crate::error::{Error, Result};
use crate::fmt17;
use crate::sparse::CsrMatrix;

pub fn write_dataset<W: Write>(samples: &[PoissonSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "PMD1 {}", samples.len())?;
    for s in samples {
        writeln!(
            out,
            "sample {} {} {}",
            s.id,
            s.grid.height(),
            s.grid.width()
        )?;
        writeln!(out, "{}", s.grid.rows().join(" "))?;
        writeln!(out, "matrix {} {}", s.matrix.n_rows(), s.matrix.nnz())?;
        for (i, j, v) in s.matrix.to_coo() {
            writeln!(out, "{i} {j} {}", fmt17(v))?;
        }
        writeln!(out, "rhs {}", s.rhs.len())?;
        for &v in &s.rhs {
            writeln!(out, "{}", fmt17(v))?;
        }
    }
    Ok(())
}

pub fn save_dataset(samples: &[PoissonSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(samples, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<PoissonSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    /// Next line, or a parse error naming the section that was expected.
    fn expect(&mut self, section: &str) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::parse(self.line_no, e.to_string())),
            None => Err(Error::parse(
                self.line_no,
                format!("unexpected end of file, missing {section}"),
            )),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.line_no, msg)
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T> {
    tok.ok_or_else(|| Error::parse(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what}")))
}

fn header<'a>(
    line: &'a str,
    keyword: &str,
    lines_no: usize,
) -> Result<std::str::SplitWhitespace<'a>> {
    let mut toks = line.split_whitespace();
    match toks.next() {
        Some(k) if k == keyword => Ok(toks),
        other => Err(Error::parse(
            lines_no,
            format!(
                "expected `{keyword}` section, found {:?}",
                other.unwrap_or("")
            ),
        )),
    }
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<PoissonSample>> {
    let mut lines = Lines {
        inner: reader.lines(),
        line_no: 0,
    };
    let first = lines.expect("`PMD1` header")?;
    let mut toks = header(&first, "PMD1", lines.line_no)?;
    let count: usize = parse_num(toks.next(), "sample count", lines.line_no)?;

    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let l = lines.expect(&format!("`sample` section {k}"))?;
        let mut t = header(&l, "sample", lines.line_no)?;
        let id: usize = parse_num(t.next(), "sample id", lines.line_no)?;
        let height: usize = parse_num(t.next(), "height", lines.line_no)?;
        let width: usize = parse_num(t.next(), "width", lines.line_no)?;

        let l = lines.expect(&format!("grid rows of sample {id}"))?;
        let rows: Vec<&str> = l.split_whitespace().collect();
        if rows.len() != height || rows.iter().any(|r| r.len() != width) {
            return Err(lines.err(format!("grid of sample {id} is not {height}x{width}")));
        }
        let grid = OccupancyGrid::from_rows(&rows).map_err(|e| lines.err(e.to_string()))?;

        let l = lines.expect(&format!("`matrix` section of sample {id}"))?;
        let mut t = header(&l, "matrix", lines.line_no)?;
        let n: usize = parse_num(t.next(), "matrix size", lines.line_no)?;
        let nnz: usize = parse_num(t.next(), "nnz", lines.line_no)?;
        if n != grid.n_fluid() {
            return Err(lines.err(format!(
                "matrix size {n} does not match {} fluid cells",
                grid.n_fluid()
            )));
        }
        let mut entries = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let l = lines.expect(&format!("matrix entries of sample {id}"))?;
            let mut t = l.split_whitespace();
            let i: usize = parse_num(t.next(), "row index", lines.line_no)?;
            let j: usize = parse_num(t.next(), "column index", lines.line_no)?;
            let v: f64 = parse_num(t.next(), "value", lines.line_no)?;
            entries.push((i, j, v));
        }
        let matrix = CsrMatrix::from_coo(n, n, &entries).map_err(|e| lines.err(e.to_string()))?;
        if matrix.nnz() != nnz {
            return Err(lines.err(format!("matrix of sample {id} is not canonical")));
        }

        let l = lines.expect(&format!("`rhs` section of sample {id}"))?;
        let mut t = header(&l, "rhs", lines.line_no)?;
        let m: usize = parse_num(t.next(), "rhs length", lines.line_no)?;
        if m != n {
            return Err(lines.err(format!("rhs length {m} does not match matrix size {n}")));
        }
        let mut rhs = Vec::with_capacity(n);
        for _ in 0..n {
            let l = lines.expect(&format!("rhs values of sample {id}"))?;
            rhs.push(parse_num(Some(l.trim()), "rhs value", lines.line_no)?);
        }
        samples.push(PoissonSample {
            id,
            grid,
            matrix,
            rhs,
        });
    }
    Ok(samples)
}
