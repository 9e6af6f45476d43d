//! Trajectory and signal files.
//!
//! Binary cache layout (little endian):
//!
//! | field        | type                          |
//! |--------------|-------------------------------|
//! | magic        | 8 bytes, `FDCTRAJ\0`          |
//! | version      | u32                           |
//! | N (rows)     | u64                           |
//! | Δt           | f64                           |
//! | t0           | f64                           |
//! | column count | u32                           |
//! | columns      | per column: u16 length + UTF-8 |
//! | data         | N × columns f64, row major    |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{FdcError, Result};
use crate::propagation::SampledSignal;

pub const CACHE_MAGIC: &[u8; 8] = b"FDCTRAJ\0";
pub const CACHE_VERSION: u32 = 1;

pub const STATE_COLUMNS: [&str; 7] = ["t", "x", "y", "z", "vx", "vy", "vz"];

/// Uniformly spaced table of named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub t0: f64,
    pub dt: f64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SampleTable {
    pub fn new(t0: f64, dt: f64, columns: Vec<String>) -> Self {
        Self { t0, dt, columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(FdcError::Config(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record(r.iter().map(|v| format!("{v:.17e}"))).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&self.t0.to_le_bytes())?;
        w.write_all(&(self.columns.len() as u32).to_le_bytes())?;
        for c in &self.columns {
            let b = c.as_bytes();
            let len = u16::try_from(b.len())
                .map_err(|_| FdcError::Config(format!("column name too long: {c}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(b)?;
        }
        for r in &self.rows {
            for v in r {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(FdcError::Config("not a trajectory cache (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(FdcError::Config(format!("unsupported cache version {version}")));
        }
        let n = read_u64(&mut r)? as usize;
        let dt = read_f64(&mut r)?;
        let t0 = read_f64(&mut r)?;
        let ncol = read_u32(&mut r)? as usize;
        let mut columns = Vec::with_capacity(ncol);
        for _ in 0..ncol {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut buf = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut buf)?;
            columns.push(
                String::from_utf8(buf).map_err(|_| FdcError::Config("column name is not UTF-8".into()))?,
            );
        }
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = Vec::with_capacity(ncol);
            for _ in 0..ncol {
                row.push(read_f64(&mut r)?);
            }
            rows.push(row);
        }
        Ok(Self { t0, dt, columns, rows })
    }
}

fn csv_err(e: csv::Error) -> FdcError {
    FdcError::Config(format!("csv: {e}"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Write a signal as `t,q` CSV.
pub fn write_signal_csv<W: Write>(s: &SampledSignal, w: W) -> Result<()> {
    let mut table = SampleTable::new(s.t0, s.dt, vec!["t".into(), "q".into()]);
    for (i, v) in s.values.iter().enumerate() {
        table.push(vec![s.epoch(i), *v])?;
    }
    table.write_csv(w)
}

/// Read a `t,q` CSV; spacing must be uniform to a relative 1e-9. Lines
/// starting with `#` are skipped.
pub fn read_signal_csv<R: Read>(r: R) -> Result<SampledSignal> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let headers = rd.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ti, qi) = match (col("t"), col("q")) {
        (Some(t), Some(q)) => (t, q),
        _ => (0, 1),
    };
    let mut t = Vec::new();
    let mut q = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse = |idx: usize| -> Result<f64> {
            rec.get(idx)
                .ok_or_else(|| FdcError::Config(format!("line {}: missing column {idx}", line + 2)))?
                .parse::<f64>()
                .map_err(|e| FdcError::Config(format!("line {}: {e}", line + 2)))
        };
        t.push(parse(ti)?);
        q.push(parse(qi)?);
    }
    if t.len() < 2 {
        return Err(FdcError::InvalidSignal("a signal needs at least two samples".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    for (i, ti) in t.iter().enumerate() {
        let expect = t[0] + dt * i as f64;
        if (ti - expect).abs() > 1e-9 * dt.abs().max(expect.abs()) {
            return Err(FdcError::InvalidSignal(format!("non-uniform spacing at sample {i}")));
        }
    }
    SampledSignal::new(q, dt, t[0])
}
