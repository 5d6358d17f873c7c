//! CSV emission. Floats carry 12 significant digits in scientific notation, which
//! is locale-free and parses back to the same 12 digits.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::TrialRecord;

pub const HEADER: [&str; 10] = [
    "n_antennas",
    "trial",
    "algorithm",
    "objective",
    "iterations",
    "converged",
    "flops_estimate",
    "channel_hash",
    "wall_time_s",
    "error",
];

pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        String::new()
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn write_records<W: Write>(records: &[TrialRecord], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(out);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.n_antennas.to_string(),
            r.trial.to_string(),
            r.algorithm.clone(),
            opt_float(r.objective),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.flops_estimate.to_string(),
            format!("{:016x}", r.channel_hash),
            opt_float(r.wall_time_s),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_records(records, std::io::BufWriter::new(file)).map_err(csv_err)
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str) -> std::result::Result<T, String> {
    field
        .parse()
        .map_err(|_| format!("bad {name} field `{field}`"))
}

fn parse_opt_float(field: &str, name: &str) -> std::result::Result<Option<f64>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_field(field, name).map(Some)
    }
}

pub fn read_records<R: Read>(input: R) -> std::result::Result<Vec<TrialRecord>, String> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(HEADER) {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let hash = u64::from_str_radix(&row[7], 16).map_err(|_| format!("bad channel_hash `{}`", &row[7]))?;
        out.push(TrialRecord {
            n_antennas: parse_field(&row[0], "n_antennas")?,
            trial: parse_field(&row[1], "trial")?,
            algorithm: row[2].to_string(),
            objective: parse_opt_float(&row[3], "objective")?,
            iterations: parse_field(&row[4], "iterations")?,
            converged: parse_field(&row[5], "converged")?,
            flops_estimate: parse_field(&row[6], "flops_estimate")?,
            channel_hash: hash,
            wall_time_s: parse_opt_float(&row[8], "wall_time_s")?,
            error: (!row[9].is_empty()).then(|| row[9].to_string()),
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_records(file).map_err(|msg| Error::InvalidConfig(format!("{}: {msg}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(trial: usize, objective: Option<f64>, error: Option<&str>) -> TrialRecord {
        TrialRecord {
            n_antennas: 80,
            trial,
            algorithm: "heuristic:worst-first-ratio".into(),
            objective,
            iterations: 3,
            converged: error.is_none(),
            flops_estimate: 12345,
            channel_hash: 0xdead_beef,
            wall_time_s: None,
            error: error.map(str::to_string),
        }
    }

    #[test]
    fn empty_list_is_header_only() {
        let mut buf = Vec::new();
        write_records(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), HEADER.join(",") + "\n");
    }

    #[test]
    fn round_trip_at_twelve_digits() {
        let x = 0.123_456_789_012_345_6;
        let recs = vec![
            record(0, Some(x), None),
            record(1, None, Some("degenerate, \"quoted\" problem")),
            record(2, Some(-3.5e-17), None),
        ];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("1.23456789012e-1"));
        assert!(!text.contains("1.234567890123"));
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].objective, Some(0.123456789012));
        assert_eq!(back[1], recs[1]);
        assert_eq!(back[2], recs[2]);
        // rewriting the parsed records is byte-identical
        let mut again = Vec::new();
        write_records(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn io_errors_carry_the_path() {
        let err = emit_csv(&[], Path::new("/nonexistent-dir/out.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/out.csv"));
    }
}
