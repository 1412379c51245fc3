use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One raw event from an interaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub rating: Option<f64>,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogFormat {
    /// `user::item::rating::timestamp`, no header.
    MovielensDat,
    /// Header row naming `user`, `item`, `timestamp` and optionally `rating`.
    Csv,
    Tsv,
}

impl LogFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "movielens-dat" | "dat" => Ok(LogFormat::MovielensDat),
            "csv" => Ok(LogFormat::Csv),
            "tsv" => Ok(LogFormat::Tsv),
            other => Err(Error::Config(format!("unknown log format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub interactions: Vec<Interaction>,
    pub malformed: usize,
    /// 1-based line numbers of the first few malformed lines.
    pub malformed_lines: Vec<usize>,
}

/// Fraction of malformed data lines above which a log is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;
const KEEP_MALFORMED_LINES: usize = 20;

pub fn parse_log<R: BufRead>(source: R, format: LogFormat) -> Result<ParsedLog> {
    let parsed = match format {
        LogFormat::MovielensDat => parse_dat(source)?,
        LogFormat::Csv => parse_delimited(source, b',')?,
        LogFormat::Tsv => parse_delimited(source, b'\t')?,
    };
    let total = parsed.interactions.len() + parsed.malformed;
    if total > 0 && parsed.malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(Error::Format(format!(
            "{} of {total} lines malformed (first at lines {:?})",
            parsed.malformed, parsed.malformed_lines
        )));
    }
    Ok(parsed)
}

impl ParsedLog {
    fn bad_line(&mut self, line_no: usize) {
        self.malformed += 1;
        if self.malformed_lines.len() < KEEP_MALFORMED_LINES {
            self.malformed_lines.push(line_no);
        }
    }
}

fn parse_fields(user: &str, item: &str, rating: Option<&str>, ts: &str) -> Option<Interaction> {
    let (user, item) = (user.trim(), item.trim());
    if user.is_empty() || item.is_empty() {
        return None;
    }
    let rating = match rating.map(str::trim) {
        None | Some("") => None,
        Some(r) => Some(r.parse::<f64>().ok().filter(|v| v.is_finite())?),
    };
    let timestamp = ts.trim().parse::<i64>().ok()?;
    Some(Interaction { user: user.to_owned(), item: item.to_owned(), rating, timestamp })
}

fn parse_dat<R: BufRead>(source: R) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("::").collect();
        let parsed = if fields.len() == 4 {
            parse_fields(fields[0], fields[1], Some(fields[2]), fields[3])
        } else {
            None
        };
        match parsed {
            Some(i) => out.interactions.push(i),
            None => out.bad_line(idx + 1),
        }
    }
    Ok(out)
}

fn parse_delimited<R: BufRead>(source: R, delimiter: u8) -> Result<ParsedLog> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut out = ParsedLog::default();
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_error(e)),
    };
    if headers.is_empty() {
        return Ok(out);
    }
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(user), Some(item), Some(ts)) = (column("user"), column("item"), column("timestamp"))
    else {
        return Err(Error::Format(format!(
            "header must name user, item and timestamp columns, got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    };
    let rating = column("rating");
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(csv_error(e)),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                out.bad_line(line);
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed = match (record.get(user), record.get(item), record.get(ts)) {
            (Some(u), Some(i), Some(t)) => {
                parse_fields(u, i, rating.and_then(|r| record.get(r)), t)
            }
            _ => None,
        };
        match parsed {
            Some(i) => out.interactions.push(i),
            None => out.bad_line(line),
        }
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn movielens_line() {
        let log = parse_log("1::1193::5::978300760\n".as_bytes(), LogFormat::MovielensDat).unwrap();
        assert_eq!(
            log.interactions,
            vec![Interaction {
                user: "1".into(),
                item: "1193".into(),
                rating: Some(5.0),
                timestamp: 978300760
            }]
        );
    }

    #[test]
    fn empty_file() {
        for f in [LogFormat::MovielensDat, LogFormat::Csv, LogFormat::Tsv] {
            let log = parse_log("".as_bytes(), f).unwrap();
            assert!(log.interactions.is_empty());
            assert_eq!(log.malformed, 0);
        }
    }

    #[test]
    fn csv_with_reordered_header_and_no_rating() {
        let src = "timestamp,item,user\n10,a,u1\n11,b,u1\n";
        let log = parse_log(src.as_bytes(), LogFormat::Csv).unwrap();
        assert_eq!(log.interactions.len(), 2);
        assert_eq!(log.interactions[1].item, "b");
        assert_eq!(log.interactions[1].rating, None);
    }

    #[test]
    fn tsv_parses() {
        let src = "user\titem\trating\ttimestamp\n7\t9\t3\t100\n";
        let log = parse_log(src.as_bytes(), LogFormat::Tsv).unwrap();
        assert_eq!(log.interactions[0].rating, Some(3.0));
    }

    #[test]
    fn too_many_malformed_lines_is_format_error() {
        let src = "1::2::3::4\nbroken line\n";
        match parse_log(src.as_bytes(), LogFormat::MovielensDat) {
            Err(Error::Format(msg)) => assert!(msg.contains("[2]"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sparse_malformed_lines_are_counted() {
        let mut src = String::new();
        for i in 0..200 {
            src.push_str(&format!("{}::{}::4::{}\n", i % 7, i, i));
        }
        src.push_str("x::y::z\n");
        let log = parse_log(src.as_bytes(), LogFormat::MovielensDat).unwrap();
        assert_eq!(log.interactions.len(), 200);
        assert_eq!(log.malformed, 1);
        assert_eq!(log.malformed_lines, vec![201]);
    }

    #[test]
    fn missing_header_columns() {
        assert!(matches!(
            parse_log("a,b\n1,2\n".as_bytes(), LogFormat::Csv),
            Err(Error::Format(_))
        ));
    }
}
