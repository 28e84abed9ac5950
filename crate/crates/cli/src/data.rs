//! CSV ingestion and emission.

use std::path::Path;

use chrono::{Datelike, NaiveDate};
use indexmap::IndexMap;
use larx_core::design::{quarter_end_sample, Frequency, SeriesTable};

use crate::error::{CliError, CliResult};

/// Monthly when consecutive dates are one month apart anywhere, quarterly
/// otherwise.
fn detect_frequency(dates: &[NaiveDate]) -> Frequency {
    let months = |d: &NaiveDate| d.year() as i64 * 12 + d.month0() as i64;
    if dates.windows(2).any(|w| (months(&w[1]) - months(&w[0])) % 3 != 0) {
        Frequency::Monthly
    } else {
        Frequency::Quarterly
    }
}

/// Reads `date,<name>,...` with ISO-8601 dates in ascending order. Empty
/// cells are missing values.
pub fn load_csv(path: &Path) -> CliResult<SeriesTable> {
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| CliError::io(path, e))?;
    let csv_err = |line: u64, message: String| CliError::Csv { path: shown.clone(), line, message };
    let headers = rdr.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    if headers.get(0) != Some("date") || headers.len() < 2 {
        return Err(csv_err(1, "header must be date,<name>,...".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let d = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|_| csv_err(line, format!("unparseable date '{}'", &rec[0])))?;
        if let Some(prev) = dates.last() {
            if d == *prev {
                return Err(csv_err(line, format!("duplicate date {d}")));
            }
            if d < *prev {
                return Err(csv_err(line, format!("date {d} is earlier than {prev}")));
            }
        }
        dates.push(d);
        for (j, name) in names.iter().enumerate() {
            let cell = rec.get(j + 1).unwrap_or("");
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| csv_err(line, format!("column {name}: unparseable value '{cell}'")))?)
            };
            cols[j].push(v);
        }
    }
    let freq = detect_frequency(&dates);
    let columns: IndexMap<String, Vec<Option<f64>>> = names.into_iter().zip(cols).collect();
    SeriesTable::new(dates, columns, freq).map_err(|e| csv_err(0, e.to_string()))
}

/// Loads and outer-joins every file. Monthly tables are reduced to quarter
/// ends as soon as any quarterly table is present.
pub fn load_tables(paths: &[impl AsRef<Path>]) -> CliResult<SeriesTable> {
    if paths.is_empty() {
        return Err(CliError::Config("no data files given".into()));
    }
    let mut tables = paths.iter().map(|p| load_csv(p.as_ref())).collect::<CliResult<Vec<_>>>()?;
    if tables.iter().any(|t| t.frequency() == Frequency::Quarterly) {
        for t in &mut tables {
            if t.frequency() == Frequency::Monthly {
                *t = quarter_end_sample(t)?;
            }
        }
    }
    Ok(SeriesTable::join(&tables)?)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes rows to CSV text.
pub fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn table_csv(t: &SeriesTable) -> String {
    let mut header = vec!["date".to_string()];
    header.extend(t.names().map(str::to_string));
    let rows: Vec<Vec<String>> = t
        .dates()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut r = vec![d.to_string()];
            r.extend(t.columns().values().map(|c| fmt_opt(c[i])));
            r
        })
        .collect();
    csv_text(&header, &rows)
}
