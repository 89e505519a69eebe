use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use super::assemble::Sample;
use super::irradiance::utc_day;
use crate::error::{Error, Result};
use crate::metrics::bin_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown split {s:?}")))
    }
}

/// Calendar partition: training years, then even / odd days of the final
/// year for validation / test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub final_year: i32,
    /// Years used for training; `None` means every year before `final_year`.
    #[serde(default)]
    pub train_years: Option<Vec<i32>>,
}

impl SplitSpec {
    pub fn new(final_year: i32) -> Self {
        Self {
            final_year,
            train_years: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(years) = &self.train_years {
            if years.contains(&self.final_year) {
                return Err(Error::domain(format!(
                    "training years overlap the validation/test year {}",
                    self.final_year
                )));
            }
        }
        Ok(())
    }

    /// Split of the UTC day containing `ts`, `None` if no predicate matches.
    pub fn assign(&self, ts: i64) -> Option<SplitName> {
        let day = utc_day(ts);
        if day.year() == self.final_year {
            Some(if day.day() % 2 == 0 { SplitName::Val } else { SplitName::Test })
        } else {
            let train = match &self.train_years {
                Some(years) => years.contains(&day.year()),
                None => day.year() < self.final_year,
            };
            train.then_some(SplitName::Train)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits<S> {
    pub train: Vec<S>,
    pub val: Vec<S>,
    pub test: Vec<S>,
    /// Samples matched by no predicate.
    pub unassigned: usize,
}

impl<S> Splits<S> {
    pub fn get(&self, name: SplitName) -> &[S] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Partitions items by the calendar day of `time(item)`.
pub fn split_by<S>(items: Vec<S>, spec: &SplitSpec, time: impl Fn(&S) -> i64) -> Result<Splits<S>> {
    spec.validate()?;
    let mut out = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        unassigned: 0,
    };
    for s in items {
        match spec.assign(time(&s)) {
            Some(SplitName::Train) => out.train.push(s),
            Some(SplitName::Val) => out.val.push(s),
            Some(SplitName::Test) => out.test.push(s),
            None => out.unassigned += 1,
        }
    }
    Ok(out)
}

pub fn split(samples: Vec<Sample>, spec: &SplitSpec) -> Result<Splits<Sample>> {
    split_by(samples, spec, |s| s.t)
}

pub const SZA_BUCKET_DEG: f64 = 5.0;

/// Sample counts by month, solar-zenith bucket and GHI bin of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitHistograms {
    pub month: Vec<usize>,
    pub sza: Vec<usize>,
    pub ghi_bin: Vec<usize>,
}

impl SplitHistograms {
    pub fn new(samples: &[Sample], bin_range: (f64, f64), bins: usize) -> Self {
        let mut h = Self {
            month: vec![0; 12],
            sza: vec![0; (90.0 / SZA_BUCKET_DEG) as usize],
            ghi_bin: vec![0; bins],
        };
        for s in samples {
            h.month[utc_day(s.t).month0() as usize] += 1;
            let b = ((s.sza / SZA_BUCKET_DEG).floor().max(0.0) as usize).min(h.sza.len() - 1);
            h.sza[b] += 1;
            h.ghi_bin[bin_index(s.ghi_t, bin_range.0, bin_range.1, bins)] += 1;
        }
        h
    }

    pub fn totals(&self) -> [usize; 3] {
        [self.month.iter().sum(), self.sza.iter().sum(), self.ghi_bin.iter().sum()]
    }

    /// CSV with columns `histogram,bucket,lo,hi,count`.
    pub fn write_csv<W: Write>(&self, w: W, bin_range: (f64, f64)) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(format!("histogram csv: {e}"));
        w.write_record(["histogram", "bucket", "lo", "hi", "count"]).map_err(err)?;
        for (i, c) in self.month.iter().enumerate() {
            w.write_record(["month".into(), (i + 1).to_string(), (i + 1).to_string(), (i + 1).to_string(), c.to_string()])
                .map_err(err)?;
        }
        for (i, c) in self.sza.iter().enumerate() {
            let lo = i as f64 * SZA_BUCKET_DEG;
            w.write_record(["sza_deg".into(), i.to_string(), lo.to_string(), (lo + SZA_BUCKET_DEG).to_string(), c.to_string()])
                .map_err(err)?;
        }
        let width = (bin_range.1 - bin_range.0) / self.ghi_bin.len() as f64;
        for (i, c) in self.ghi_bin.iter().enumerate() {
            let lo = bin_range.0 + i as f64 * width;
            w.write_record(["ghi_wm2".into(), i.to_string(), lo.to_string(), (lo + width).to_string(), c.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))
    }

    pub fn save(&self, path: &Path, bin_range: (f64, f64)) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f), bin_range)
    }
}
