//! Covariance-sequence files.
//!
//! Text: one matrix per step in the [`SymMatrix::to_text`] layout (dimension
//! line, then the packed upper triangle on one line).
//!
//! Packed binary: `n: u8`, `length: u32` (little-endian), then `length`
//! upper triangles of `n(n+1)/2` little-endian binary64 values. A dataset
//! file is a concatenation of packed sequences.

use std::io::{BufRead, ErrorKind, Read, Write};

use crate::error::{Error, Result};
use crate::symmat::{upper_len, SymMatrix};

pub fn write_text<W: Write>(mut w: W, seq: &[SymMatrix]) -> Result<()> {
    for p in seq {
        w.write_all(p.to_text().as_bytes())?;
    }
    Ok(())
}

pub fn read_text<R: BufRead>(r: R) -> Result<Vec<SymMatrix>> {
    let lines: Vec<String> = r
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .collect::<std::io::Result<_>>()?;
    if !lines.len().is_multiple_of(2) {
        return Err(Error::Parse("truncated text sequence".into()));
    }
    lines
        .chunks(2)
        .enumerate()
        .map(|(k, pair)| {
            SymMatrix::from_text(&format!("{}\n{}", pair[0], pair[1]))
                .map_err(|e| e.context(format!("step {}", k + 1)))
        })
        .collect()
}

fn check_square(seq: &[SymMatrix]) -> Result<usize> {
    let n = seq.first().map_or(0, SymMatrix::n);
    if let Some(p) = seq.iter().find(|p| p.n() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.n(),
        });
    }
    Ok(n)
}

pub fn write_packed<W: Write>(mut w: W, seq: &[SymMatrix]) -> Result<()> {
    let n = check_square(seq)?;
    let n8 = u8::try_from(n).map_err(|_| Error::Parse(format!("dimension {n} exceeds 255")))?;
    let len = u32::try_from(seq.len())
        .map_err(|_| Error::Parse(format!("sequence of {} steps is too long", seq.len())))?;
    w.write_all(&[n8])?;
    w.write_all(&len.to_le_bytes())?;
    for p in seq {
        for v in p.as_upper() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads one packed sequence; `None` at a clean end of input.
pub fn read_packed<R: Read>(mut r: R) -> Result<Option<Vec<SymMatrix>>> {
    let mut n = [0u8; 1];
    loop {
        match r.read(&mut n) {
            Ok(0) => return Ok(None),
            Ok(_) => break,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let n = n[0] as usize;
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; upper_len(n) * 8];
    let mut seq = Vec::with_capacity(len);
    for k in 0..len {
        r.read_exact(&mut buf)
            .map_err(|e| Error::from(e).context(format!("step {} of {len}", k + 1)))?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        seq.push(SymMatrix::from_upper(n, data)?);
    }
    Ok(Some(seq))
}

pub fn write_dataset<W: Write>(mut w: W, dataset: &[Vec<SymMatrix>]) -> Result<()> {
    for seq in dataset {
        write_packed(&mut w, seq)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<Vec<SymMatrix>>> {
    let mut out = Vec::new();
    while let Some(seq) = read_packed(&mut r).map_err(|e| e.context(format!("sequence {}", out.len() + 1)))? {
        out.push(seq);
    }
    Ok(out)
}
