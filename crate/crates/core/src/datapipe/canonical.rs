//! Canonical on-disk form of a processed dataset: a tab-separated table of
//! dense ids `user<TAB>item<TAB>timestamp` sorted by (user, timestamp), and a
//! sidecar id map `kind<TAB>dense_id<TAB>external_key`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::{Error, Result};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const ID_MAP_FILE: &str = "id_map.tsv";

pub fn write_interactions<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for (u, (seq, ts)) in ds.sequences.iter().zip(&ds.timestamps).enumerate() {
        for (item, t) in seq.iter().zip(ts) {
            writeln!(out, "{u}\t{item}\t{t}")?;
        }
    }
    Ok(())
}

pub fn write_id_map<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for (u, key) in ds.user_keys.iter().enumerate() {
        writeln!(out, "user\t{u}\t{}", escape(key))?;
    }
    for (i, key) in ds.item_keys.iter().enumerate() {
        writeln!(out, "item\t{}\t{}", i + 1, escape(key))?;
    }
    Ok(())
}

fn escape(key: &str) -> String {
    key.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    let mut chars = key.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn read_canonical<R1: Read, R2: Read>(interactions: R1, id_map: R2) -> Result<Dataset> {
    let mut ds = Dataset {
        user_keys: Vec::new(),
        item_keys: Vec::new(),
        sequences: Vec::new(),
        timestamps: Vec::new(),
    };
    for (n, line) in BufReader::new(id_map).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(kind), Some(id), Some(key)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!("id map line {}: expected 3 fields", n + 1)));
        };
        let id: usize = id
            .parse()
            .map_err(|_| Error::Format(format!("id map line {}: bad id {id:?}", n + 1)))?;
        let (table, expected) = match kind {
            "user" => (&mut ds.user_keys, id),
            "item" => (&mut ds.item_keys, id.wrapping_sub(1)),
            other => {
                return Err(Error::Format(format!("id map line {}: unknown kind {other:?}", n + 1)))
            }
        };
        if expected != table.len() {
            return Err(Error::Format(format!("id map line {}: ids not dense", n + 1)));
        }
        table.push(unescape(key));
    }
    ds.sequences = vec![Vec::new(); ds.user_keys.len()];
    ds.timestamps = vec![Vec::new(); ds.user_keys.len()];
    for (n, line) in BufReader::new(interactions).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("interactions line {}: {line:?}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad());
        }
        let u: usize = fields[0].parse().map_err(|_| bad())?;
        let i: u32 = fields[1].parse().map_err(|_| bad())?;
        let t: i64 = fields[2].parse().map_err(|_| bad())?;
        if u >= ds.sequences.len() {
            return Err(bad());
        }
        ds.sequences[u].push(i);
        ds.timestamps[u].push(t);
    }
    ds.validate()?;
    Ok(ds)
}

pub fn save_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(INTERACTIONS_FILE))?);
    write_interactions(ds, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join(ID_MAP_FILE))?);
    write_id_map(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dir(dir: &Path) -> Result<Dataset> {
    read_canonical(
        File::open(dir.join(INTERACTIONS_FILE))?,
        File::open(dir.join(ID_MAP_FILE))?,
    )
}
