use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};

use crate::error::{Error, Result};
use crate::geometry::{clear_sky_at, Site};

/// One pyranometer record: GHI and its clear-sky companion, both in W/m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrradiancePoint {
    pub ghi: f64,
    pub clear: f64,
}

impl IrradiancePoint {
    pub fn clear_sky_index(&self) -> Option<f64> {
        (self.clear > 0.0).then(|| self.ghi / self.clear)
    }
}

/// Time-indexed GHI series at 1-min cadence (unix seconds).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IrradianceSeries {
    points: BTreeMap<i64, IrradiancePoint>,
}

pub fn format_utc(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Parses an ISO-8601 instant; a missing offset is read as UTC.
pub fn parse_utc(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Ok(d.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(d) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(d.and_utc().timestamp());
        }
    }
    Err(Error::data(format!("unparseable timestamp {s:?}")))
}

/// UTC calendar day of a unix timestamp.
pub fn utc_day(ts: i64) -> NaiveDate {
    DateTime::<Utc>::from_timestamp(ts, 0).map(|d| d.date_naive()).unwrap_or_default()
}

impl IrradianceSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ts: i64, ghi: f64, clear: f64) {
        self.points.insert(ts, IrradiancePoint { ghi, clear });
    }

    pub fn get(&self, ts: i64) -> Option<IrradiancePoint> {
        self.points.get(&ts).copied()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, IrradiancePoint)> + '_ {
        self.points.iter().map(|(&t, &p)| (t, p))
    }

    /// Largest clear-sky value in the series.
    pub fn max_clear(&self) -> f64 {
        self.points.values().map(|p| p.clear).fold(0.0, f64::max)
    }

    /// Records grouped by UTC day.
    pub fn by_day(&self) -> BTreeMap<NaiveDate, Vec<(i64, IrradiancePoint)>> {
        let mut out: BTreeMap<NaiveDate, Vec<_>> = BTreeMap::new();
        for (t, p) in self.iter() {
            out.entry(utc_day(t)).or_default().push((t, p));
        }
        out
    }

    pub fn extend(&mut self, other: IrradianceSeries) {
        self.points.extend(other.points);
    }

    /// Reads `timestamp_utc,ghi_wm2[,ghi_clear_wm2]`. When the clear-sky
    /// column is absent it is computed for `site`.
    pub fn read_csv<R: Read>(reader: R, site: &Site) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::data(format!("irradiance csv: {e}")))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(tc), Some(gc)) = (col("timestamp_utc"), col("ghi_wm2")) else {
            return Err(Error::data("irradiance csv needs timestamp_utc and ghi_wm2 columns"));
        };
        let cc = col("ghi_clear_wm2");
        let mut series = Self::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::data(format!("irradiance csv: {e}")))?;
            let field = |i: usize| rec.get(i).ok_or_else(|| Error::data(format!("row {}: missing field", line + 2)));
            let ts = parse_utc(field(tc)?)?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::data(format!("row {}: bad number {s:?}", line + 2)))
            };
            let ghi = num(field(gc)?)?;
            let clear = match cc {
                Some(c) => num(field(c)?)?,
                None => clear_sky_at(*site, ts as f64)?,
            };
            series.insert(ts, ghi, clear);
        }
        Ok(series)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::data(format!("irradiance csv: {e}"));
        w.write_record(["timestamp_utc", "ghi_wm2", "ghi_clear_wm2"]).map_err(err)?;
        for (t, p) in self.iter() {
            w.write_record([format_utc(t), p.ghi.to_string(), p.clear.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::data(format!("irradiance csv: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path, site: &Site) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), site)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}
