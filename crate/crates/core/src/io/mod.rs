//! Wide CSV ingestion, report writers and the command layer behind the
//! `jblcsm` binary.

mod cli;
mod commands;
mod config;

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimation::{Dataset, Individual};
use crate::model::Schedule;

pub use cli::{run, Cli, Command, Flags};
pub use commands::{
    cmd_fit, cmd_rates, cmd_scores, cmd_simulate, parse_conditions, parse_grid, CommandOutcome, ExitStatus,
};
pub use config::{ConfigOverrides, ModelKind, RunConfig};

/// Read a wide data file with header `id,y1..yJ,t1..tJ`.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    read_wide(File::open(path)?, path)
}

/// Parse wide data from any reader; `path` only labels error messages.
pub fn read_wide<R: Read>(reader: R, path: &Path) -> Result<Dataset> {
    let err = |row: usize, message: String| Error::Ingest {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = header.len();
    if cols < 3 || cols % 2 == 0 {
        return Err(err(1, format!("expected columns id,y1..yJ,t1..tJ, found {cols} columns")));
    }
    let j = (cols - 1) / 2;
    let expected: Vec<String> = std::iter::once("id".to_string())
        .chain((1..=j).map(|k| format!("y{k}")))
        .chain((1..=j).map(|k| format!("t{k}")))
        .collect();
    if header.iter().zip(&expected).any(|(h, e)| h != e) {
        return Err(err(1, format!("header must be {}", expected.join(","))));
    }

    let mut individuals = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 2;
        let record = record?;
        if record.len() != cols {
            return Err(err(row, format!("{} fields, expected {cols}", record.len())));
        }
        let mut values = Vec::with_capacity(2 * j);
        for (c, field) in record.iter().enumerate().skip(1) {
            if field.is_empty() {
                return Err(err(row, format!("missing value in column {}", &header[c])));
            }
            let v: f64 = field
                .parse()
                .map_err(|_| err(row, format!("non-numeric value {field:?} in column {}", &header[c])))?;
            if !v.is_finite() {
                return Err(err(row, format!("non-finite value in column {}", &header[c])));
            }
            values.push(v);
        }
        let schedule = Schedule::new(values[j..].to_vec()).map_err(|e| err(row, e.to_string()))?;
        individuals.push(Individual {
            id: record[0].to_string(),
            y: values[..j].to_vec(),
            schedule,
        });
    }
    if individuals.is_empty() {
        return Err(err(2, "no data rows".into()));
    }
    Dataset::new(individuals)
}

/// Write wide data in the layout read by [`ingest_csv`].
pub fn write_wide<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let j = data.n_waves();
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((1..=j).map(|k| format!("y{k}")))
        .chain((1..=j).map(|k| format!("t{k}")))
        .collect();
    w.write_record(&header)?;
    for ind in data.individuals() {
        let row: Vec<String> = std::iter::once(ind.id.clone())
            .chain(ind.y.iter().map(|v| num(*v)))
            .chain(ind.schedule.times().iter().map(|v| num(*v)))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_wide_file(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_wide(File::create(path)?, data)
}

/// Shortest text that parses back to the same value.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

/// Write rows under a header; every row must match the header width.
pub(crate) fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        read_wide(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn reads_two_rows() {
        let d = parse("id,y1,y2,y3,t1,t2,t3\na,1,2,3,0,1,2\nb,2,3.5,4,0,1.1,2.2\n").unwrap();
        assert_eq!((d.len(), d.n_waves()), (2, 3));
        assert_eq!(d.individuals()[1].schedule.times(), &[0.0, 1.1, 2.2]);
    }

    #[test]
    fn errors_name_the_row() {
        let e = parse("id,y1,y2,y3,t1,t2,t3\na,1,2,3,0,1,2\nb,1,2,3,1,0.5,2\n").unwrap_err();
        assert!(matches!(e, Error::Ingest { row: 3, .. }), "{e}");
        let e = parse("id,y1,y2,y3,t1,t2,t3\na,1,2,3,0,1\n").unwrap_err();
        assert!(matches!(e, Error::Ingest { row: 2, .. }), "{e}");
        let e = parse("id,y1,y2,y3,t1,t2,t3\na,1,2,3,0,1,2\nb,1,x,3,0,1,2\n").unwrap_err();
        assert!(e.to_string().contains("row 3") && e.to_string().contains("y2"), "{e}");
        let e = parse("id,y1,y2,y3,t1,t2,t3\na,1,,3,0,1,2\n").unwrap_err();
        assert!(e.to_string().contains("missing"), "{e}");
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(parse("id,y1,t1,y2,t2\na,1,0,2,1\n").is_err());
        assert!(parse("id,y1,y2,t1\n").is_err());
        assert!(parse("id,y1,y2,t1,t2\n").is_err());
    }

    #[test]
    fn round_trip() {
        let d = parse("id,y1,y2,t1,t2\nx,0.1,1e-7,-0.2,0.30000000000000004\n").unwrap();
        let mut buf = Vec::new();
        write_wide(&mut buf, &d).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }
}
