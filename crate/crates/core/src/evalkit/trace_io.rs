//! Attention-trace CSV: a header line `kind,n,n_b,n_h,count`, its values,
//! a column line, then one record per (user, block, head, row) with the
//! row's `n` weights. Masked slots are written as `0`. `head` is `mean`
//! for head-averaged maps.

use std::io::{BufRead, Write};

use crate::numerics::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub user: u32,
    pub block: usize,
    /// `None` for the head average.
    pub head: Option<usize>,
    pub row: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub kind: String,
    pub n: usize,
    pub blocks: usize,
    pub heads: usize,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn new(kind: &str, n: usize, blocks: usize, heads: usize) -> Self {
        Self { kind: kind.to_owned(), n, blocks, heads, records: Vec::new() }
    }

    /// Appends every row of `map` (skipping all-zero rows when `skip_zero`).
    pub fn push_map(&mut self, user: u32, block: usize, head: Option<usize>, map: &Matrix, skip_zero: bool) {
        for r in 0..map.rows() {
            let row = map.row(r);
            if skip_zero && row.iter().all(|&w| w == 0.0) {
                continue;
            }
            self.records.push(TraceRecord { user, block, head, row: r, weights: row.to_vec() });
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,n,n_b,n_h,count")?;
        writeln!(out, "{},{},{},{},{}", self.kind, self.n, self.blocks, self.heads, self.records.len())?;
        write!(out, "user,block,head,row")?;
        for k in 0..self.n {
            write!(out, ",w{k}")?;
        }
        writeln!(out)?;
        for r in &self.records {
            let head = r.head.map_or_else(|| "mean".to_owned(), |h| h.to_string());
            write!(out, "{},{},{},{}", r.user, r.block, head, r.row)?;
            for w in &r.weights {
                // shortest round-trip representation
                write!(out, ",{w:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String> {
            lines.next().ok_or_else(|| Error::Format(format!("trace file missing {what}")))?.map_err(Error::from)
        };
        if next("header")?.trim() != "kind,n,n_b,n_h,count" {
            return Err(Error::Format("bad trace header".into()));
        }
        let values = next("header values")?;
        let v: Vec<&str> = values.trim().split(',').collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad header value {s:?}")));
        if v.len() != 5 {
            return Err(Error::Format("bad trace header values".into()));
        }
        let mut file = TraceFile::new(v[0], num(v[1])?, num(v[2])?, num(v[3])?);
        let count = num(v[4])?;
        next("column line")?;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("trace record {}: {line:?}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 + file.n {
                return Err(bad());
            }
            let head = if f[2] == "mean" { None } else { Some(f[2].parse().map_err(|_| bad())?) };
            let weights = f[4..].iter().map(|w| w.parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
            file.records.push(TraceRecord {
                user: f[0].parse().map_err(|_| bad())?,
                block: f[1].parse().map_err(|_| bad())?,
                head,
                row: f[3].parse().map_err(|_| bad())?,
                weights,
            });
        }
        if file.records.len() != count {
            return Err(Error::Format(format!("header promises {count} records, found {}", file.records.len())));
        }
        Ok(file)
    }
}
