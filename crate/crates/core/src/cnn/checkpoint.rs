//! `PMC1` checkpoint files.
//!
//! ```text
//! PMC1
//! k=1,2,2,2,2,1 c=2,8,16,32,16,8,1
//! tensor <name> <ndim> <d1> ... <dk>
//! <value>                                    (one per line, row-major)
//! ...
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{CnnParams, Tensor};
use crate::error::{Error, Result};
use crate::fmt17;

pub const ARCHITECTURE: &str = "k=1,2,2,2,2,1 c=2,8,16,32,16,8,1";

pub fn write_checkpoint<W: Write>(params: &CnnParams, mut out: W) -> std::io::Result<()> {
    writeln!(out, "PMC1")?;
    writeln!(out, "{ARCHITECTURE}")?;
    for t in params.tensors() {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(
            out,
            "tensor {} {} {}",
            t.name,
            t.shape.len(),
            dims.join(" ")
        )?;
        for &v in &t.data {
            writeln!(out, "{}", fmt17(v))?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(params: &CnnParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(params, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CnnParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<CnnParams> {
    let mut lines = input.lines().enumerate().map(|(k, l)| (k + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((no, Ok(l))) => Ok((no, l)),
            Some((no, Err(e))) => Err(Error::parse(no, e.to_string())),
            None => Err(Error::parse(
                0,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    };
    let (no, magic) = next("header")?;
    if magic.trim() != "PMC1" {
        return Err(Error::parse(no, format!("bad magic {magic:?}")));
    }
    let (no, arch) = next("architecture")?;
    if arch.trim() != ARCHITECTURE {
        return Err(Error::parse(
            no,
            format!("unsupported architecture {arch:?}"),
        ));
    }
    let expected = CnnParams::zeros();
    let mut tensors = Vec::with_capacity(expected.tensors().len());
    for want in expected.tensors() {
        let (no, head) = next(&format!("tensor {}", want.name))?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() < 3 || parts[0] != "tensor" {
            return Err(Error::parse(
                no,
                format!("expected tensor header, found {head:?}"),
            ));
        }
        let ndim: usize = parts[2]
            .parse()
            .map_err(|_| Error::parse(no, format!("bad rank {:?}", parts[2])))?;
        if parts.len() != 3 + ndim {
            return Err(Error::parse(no, "rank does not match dimension count"));
        }
        let shape = parts[3..]
            .iter()
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::parse(no, format!("bad dimension {d:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if parts[1] != want.name || shape != want.shape {
            return Err(Error::ShapeMismatch {
                tensor: parts[1].to_string(),
            });
        }
        let mut t = Tensor::zeros(parts[1], shape);
        for v in t.data.iter_mut() {
            let (no, line) = next(&format!("values of {}", want.name))?;
            *v = line
                .trim()
                .parse()
                .map_err(|_| Error::parse(no, format!("bad value {line:?}")))?;
        }
        tensors.push(t);
    }
    CnnParams::from_tensors(tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = CnnParams::init(42);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(
            text.starts_with("PMC1\nk=1,2,2,2,2,1 c=2,8,16,32,16,8,1\ntensor conv_0 4 8 2 1 1\n")
        );
        assert!(text.contains("tensor prelu_4 1 1\n2.5000000000000000e-1\n"));
        let q = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_wrong_architecture_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&CnnParams::zeros(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let other = text.replace("c=2,8,16", "c=2,9,16");
        assert!(matches!(
            read_checkpoint(other.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(read_checkpoint(cut.as_bytes()).is_err());
        let renamed = text.replacen("tensor conv_1", "tensor conv_x", 1);
        assert!(matches!(
            read_checkpoint(renamed.as_bytes()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
