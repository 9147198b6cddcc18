//! CSV dialect: a `timestamp` column (ISO-8601) plus one column per
//! channel. Empty or unparseable cells are missing values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{cadence, DataError, Series, SiteRecord, AUX_CHANNELS, CADENCE_MINUTES, NET_LOAD, SOLAR_PV};

/// Format used when writing timestamps.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

const NAIVE_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

/// Maps canonical channel names to header names in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub timestamp: String,
    pub columns: BTreeMap<String, String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        let columns = std::iter::once(NET_LOAD)
            .chain(std::iter::once(SOLAR_PV))
            .chain(AUX_CHANNELS)
            .map(|c| (c.to_string(), c.to_string()))
            .collect();
        Self {
            timestamp: "timestamp".to_string(),
            columns,
        }
    }
}

impl CsvSchema {
    /// Renames the header used for `channel`.
    pub fn with_column(mut self, channel: &str, header: &str) -> Self {
        self.columns.insert(channel.to_string(), header.to_string());
        self
    }
}

/// Parses naive ISO-8601 timestamps, or offset timestamps converted to UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in NAIVE_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_utc())
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<SiteRecord, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let site_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("site")
        .to_string();
    read_csv(file, schema, &site_id)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, site_id: &str) -> Result<SiteRecord, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let ts_col = find(&schema.timestamp).ok_or_else(|| DataError::MissingColumn(schema.timestamp.clone()))?;
    let mut cols: Vec<(String, usize)> = Vec::new();
    for (channel, header) in &schema.columns {
        match find(header) {
            Some(i) => cols.push((channel.clone(), i)),
            None if channel == NET_LOAD => return Err(DataError::MissingColumn(header.clone())),
            None => {}
        }
    }

    let mut rows: Vec<(NaiveDateTime, Vec<Option<f64>>)> = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(ts_col).unwrap_or("");
        let t = parse_timestamp(raw).ok_or_else(|| DataError::UnparseableTimestamp {
            row: row + 1,
            value: raw.to_string(),
        })?;
        let values = cols
            .iter()
            .map(|(_, i)| {
                rec.get(*i)
                    .and_then(|cell| cell.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        rows.push((t, values));
    }
    rows.sort_by_key(|(t, _)| *t);

    let mut timestamps = Vec::with_capacity(rows.len());
    let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); cols.len()];
    let mut missing: Vec<Vec<bool>> = vec![Vec::with_capacity(rows.len()); cols.len()];
    let mut push_row = |t: NaiveDateTime, cells: &[Option<f64>], timestamps: &mut Vec<NaiveDateTime>| {
        timestamps.push(t);
        for (c, cell) in cells.iter().enumerate() {
            values[c].push(cell.unwrap_or(0.0));
            missing[c].push(cell.is_none());
        }
    };
    let empty_row = vec![None; cols.len()];
    for (t, cells) in &rows {
        let t = *t;
        if let Some(&prev) = timestamps.last() {
            let gap: chrono::Duration = t - prev;
            if gap.is_zero() {
                return Err(DataError::DuplicateTimestamp(t));
            }
            if gap.num_seconds() % (CADENCE_MINUTES * 60) != 0 {
                return Err(DataError::IrregularCadence { from: prev, to: t });
            }
            let mut fill = prev + cadence();
            while fill < t {
                push_row(fill, &empty_row, &mut timestamps);
                fill += cadence();
            }
        }
        push_row(t, cells, &mut timestamps);
    }

    let mut series = BTreeMap::new();
    for (((name, _), v), m) in cols.into_iter().zip(values).zip(missing) {
        series.insert(name, Series::with_mask(v, m)?);
    }
    SiteRecord::new(site_id, timestamps, series)
}

fn column_order(site: &SiteRecord) -> Vec<&str> {
    let mut order = vec![NET_LOAD];
    if site.solar_pv().is_some() {
        order.push(SOLAR_PV);
    }
    order.extend(AUX_CHANNELS.iter().copied().filter(|c| site.series(c).is_some()));
    order.extend(
        site.channel_names()
            .filter(|c| *c != NET_LOAD && *c != SOLAR_PV && !AUX_CHANNELS.contains(c)),
    );
    order
}

/// Writes the record in the ingestion dialect; values with six decimals.
pub fn write_csv<W: Write>(site: &SiteRecord, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let order = column_order(site);
    let mut header = vec!["timestamp"];
    header.extend(&order);
    w.write_record(&header)?;
    let series: Vec<&Series> = order.iter().map(|c| site.series(c).expect("listed channel")).collect();
    let mut record = Vec::with_capacity(header.len());
    for (i, t) in site.timestamps().iter().enumerate() {
        record.clear();
        record.push(t.format(TIMESTAMP_FORMAT).to_string());
        for s in &series {
            record.push(s.get(i).map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: "<csv writer>".to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TEMPERATURE;

    fn read(text: &str) -> Result<SiteRecord, DataError> {
        read_csv(text.as_bytes(), &CsvSchema::default(), "t")
    }

    #[test]
    fn identity_ingestion() {
        let s = read("timestamp,net_load_kw\n2020-01-01T00:00:00,1\n2020-01-01T00:15:00,2\n2020-01-01T00:30:00,3\n2020-01-01T00:45:00,4\n").unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.net_load().values(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.net_load().masked_count(), 0);
    }

    #[test]
    fn empty_cell_is_masked() {
        let s = read("timestamp,net_load_kw\n2020-01-01 00:00,1\n2020-01-01 00:15,2\n2020-01-01 00:30,\n2020-01-01 00:45,4\n").unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.net_load().missing(), &[false, false, true, false]);
        assert_eq!(s.net_load().values()[2], 0.0);
    }

    #[test]
    fn gap_filling_inserts_masked_rows() {
        let s = read("timestamp,net_load_kw,temp_c\n2020-01-01T00:00:00,1,5\n2020-01-01T00:45:00,4,6\n").unwrap();
        // (45 - 0) / 15 - 1 inserted rows
        assert_eq!(s.len(), 2 + (45 / 15 - 1));
        for ch in [NET_LOAD, TEMPERATURE] {
            assert_eq!(s.series(ch).unwrap().missing(), &[false, true, true, false]);
        }
    }

    #[test]
    fn unordered_rows_are_sorted_and_garbage_masked() {
        let s = read("timestamp,net_load_kw\n2020-01-01T00:15:00,2\n2020-01-01T00:00:00,abc\n").unwrap();
        assert_eq!(s.net_load().missing(), &[true, false]);
        assert_eq!(s.net_load().get(1), Some(2.0));
    }

    #[test]
    fn ingestion_errors() {
        assert!(matches!(read("time,net_load_kw\n"), Err(DataError::MissingColumn(_))));
        assert!(matches!(read("timestamp,temp_c\n"), Err(DataError::MissingColumn(_))));
        assert!(matches!(
            read("timestamp,net_load_kw\nyesterday,1\n"),
            Err(DataError::UnparseableTimestamp { row: 1, .. })
        ));
        assert!(matches!(
            read("timestamp,net_load_kw\n2020-01-01T00:00:00,1\n2020-01-01T00:00:00,2\n"),
            Err(DataError::DuplicateTimestamp(_))
        ));
        assert!(matches!(
            read("timestamp,net_load_kw\n2020-01-01T00:00:00,1\n2020-01-01T00:20:00,2\n"),
            Err(DataError::IrregularCadence { .. })
        ));
    }

    #[test]
    fn offset_timestamps_convert_to_utc() {
        let t = parse_timestamp("2020-01-01T08:00:00+08:00").unwrap();
        assert_eq!(t, parse_timestamp("2020-01-01T00:00:00").unwrap());
    }

    #[test]
    fn renamed_header_resolves_through_schema() {
        let schema = CsvSchema::default().with_column(NET_LOAD, "mains");
        let s = read_csv("timestamp,mains\n2020-01-01T00:00:00,1.5\n".as_bytes(), &schema, "x").unwrap();
        assert_eq!(s.net_load().values(), &[1.5]);
    }

    #[test]
    fn roundtrip_to_six_decimals() {
        let text = "timestamp,net_load_kw,solar_pv_kw,temp_c\n2020-01-01T00:00:00,1.1234567,0,\n2020-01-01T00:15:00,-2.5,0.25,3.0000004\n";
        let s = read(text).unwrap();
        let mut out = Vec::new();
        write_csv(&s, &mut out).unwrap();
        let back = read(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(back.timestamps(), s.timestamps());
        for ch in s.channel_names() {
            let (a, b) = (s.series(ch).unwrap(), back.series(ch).unwrap());
            assert_eq!(a.missing(), b.missing());
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 5e-7, "{ch}: {x} vs {y}");
            }
        }
        // a second trip is exact
        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        assert_eq!(out, again);
    }
}
