//! Path files.
//!
//! CSV: header `replicate,t,x`, one row per observation.
//!
//! Binary: magic `PJLM`, then little-endian `u32` version, `u64` fields
//! `n`, `m`, `seed`, `replicates`, then `replicates * n` `f64` values,
//! replicate-major.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EngineError, Path};

pub const MAGIC: &[u8; 4] = b"PJLM";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    replicate: u64,
    t: usize,
    x: f64,
}

pub fn write_csv<W: Write>(paths: &[Path], out: W) -> Result<(), EngineError> {
    let mut w = csv::Writer::from_writer(out);
    for p in paths {
        for (i, x) in p.values.iter().enumerate() {
            w.serialize(Row {
                replicate: p.echo.replicate,
                t: i + 1,
                x: *x,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `(replicate, values)` in file order. Rows of a replicate must be
/// contiguous with `t = 1, 2, ...`.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<(u64, Vec<f64>)>, EngineError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<(u64, Vec<f64>)> = Vec::new();
    for row in r.deserialize() {
        let row: Row = row.map_err(csv_err)?;
        match out.last_mut() {
            Some((rep, v)) if *rep == row.replicate => {
                if row.t != v.len() + 1 {
                    return Err(EngineError::Io(format!(
                        "replicate {rep}: expected t = {}, found {}",
                        v.len() + 1,
                        row.t
                    )));
                }
                v.push(row.x);
            }
            _ => {
                if row.t != 1 {
                    return Err(EngineError::Io(format!(
                        "replicate {} must start at t = 1",
                        row.replicate
                    )));
                }
                out.push((row.replicate, vec![row.x]));
            }
        }
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> EngineError {
    EngineError::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHeader {
    pub n: u64,
    pub m: u64,
    pub seed: u64,
    pub replicates: u64,
}

/// All paths must share `n`, `m` and seed.
pub fn write_binary<W: Write>(paths: &[Path], mut out: W) -> Result<(), EngineError> {
    let first = paths
        .first()
        .ok_or_else(|| EngineError::InvalidConfig("no paths to write".into()))?;
    let (n, m, seed) = (first.echo.n, first.echo.m, first.echo.seed);
    if paths
        .iter()
        .any(|p| p.echo.n != n || p.echo.m != m || p.echo.seed != seed || p.values.len() != n)
    {
        return Err(EngineError::InvalidConfig(
            "binary output needs paths of one run".into(),
        ));
    }
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for v in [n as u64, m as u64, seed, paths.len() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(8 * n);
    for p in paths {
        buf.clear();
        for x in &p.values {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<(BinaryHeader, Vec<Vec<f64>>), EngineError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EngineError::Io("not a path file".into()));
    }
    let mut w4 = [0u8; 4];
    input.read_exact(&mut w4)?;
    let version = u32::from_le_bytes(w4);
    if version != VERSION {
        return Err(EngineError::Io(format!("unsupported version {version}")));
    }
    let mut field = || -> Result<u64, EngineError> {
        let mut w8 = [0u8; 8];
        input.read_exact(&mut w8)?;
        Ok(u64::from_le_bytes(w8))
    };
    let header = BinaryHeader {
        n: field()?,
        m: field()?,
        seed: field()?,
        replicates: field()?,
    };
    let n = usize::try_from(header.n).map_err(|_| EngineError::Io("n too large".into()))?;
    let mut paths = Vec::with_capacity(header.replicates as usize);
    let mut buf = vec![0u8; 8 * n];
    for _ in 0..header.replicates {
        input.read_exact(&mut buf)?;
        paths.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    Ok((header, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Distribution, PathEcho};

    fn paths() -> Vec<Path> {
        (0..3)
            .map(|r| {
                let echo = PathEcho {
                    n: 4,
                    m: 2,
                    seed: 9,
                    replicate: r,
                    distribution: Distribution::StandardNormal,
                };
                Path::from_values(vec![r as f64, 0.1, -1e-300, 7.25], 0.0, echo)
            })
            .collect()
    }

    #[test]
    fn csv_roundtrip() {
        let mut buf = Vec::new();
        write_csv(&paths(), &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("replicate,t,x\n0,1,"));
        let back = read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        for (p, (r, v)) in paths().iter().zip(back) {
            assert_eq!(p.echo.replicate, r);
            assert_eq!(p.values, v);
        }
    }

    #[test]
    fn binary_roundtrip() {
        let mut buf = Vec::new();
        write_binary(&paths(), &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 32 + 3 * 4 * 8);
        let (h, v) = read_binary(&buf[..]).unwrap();
        assert_eq!(
            h,
            BinaryHeader {
                n: 4,
                m: 2,
                seed: 9,
                replicates: 3
            }
        );
        for (p, v) in paths().iter().zip(v) {
            assert_eq!(p.values, v);
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(read_binary(&b"NOPE"[..]).is_err());
        assert!(read_csv(&b"replicate,t,x\n0,2,1.0\n"[..]).is_err());
        let mut mixed = paths();
        mixed[1].echo.n = 5;
        assert!(write_binary(&mixed, Vec::new()).is_err());
    }
}
