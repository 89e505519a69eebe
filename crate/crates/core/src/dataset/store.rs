use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fgrid;
use crate::Grid;

/// Time-indexed frames of one stream (`sky`, `sat`, ...).
#[derive(Debug, Clone, Default)]
pub struct FrameStore {
    stream: String,
    frames: BTreeMap<i64, Arc<Grid>>,
}

/// Parses `<stream>_<unix_seconds>.fgrid`.
pub fn parse_frame_name(name: &str, stream: &str) -> Option<i64> {
    let rest = name.strip_prefix(stream)?.strip_prefix('_')?;
    let digits = rest.strip_suffix(".fgrid")?;
    let ok = !digits.is_empty() && digits.bytes().enumerate().all(|(i, b)| b.is_ascii_digit() || (i == 0 && b == b'-'));
    if ok {
        digits.parse().ok()
    } else {
        None
    }
}

impl FrameStore {
    pub fn new(stream: impl Into<String>) -> Self {
        Self {
            stream: stream.into(),
            frames: BTreeMap::new(),
        }
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    pub fn insert(&mut self, ts: i64, frame: Grid) {
        self.frames.insert(ts, Arc::new(frame));
    }

    pub fn insert_shared(&mut self, ts: i64, frame: Arc<Grid>) {
        self.frames.insert(ts, frame);
    }

    pub fn get(&self, ts: i64) -> Option<&Arc<Grid>> {
        self.frames.get(&ts)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &Arc<Grid>)> {
        self.frames.iter().map(|(&t, g)| (t, g))
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.frames.keys().copied()
    }

    pub fn first_time(&self) -> Option<i64> {
        self.frames.keys().next().copied()
    }

    pub fn last_time(&self) -> Option<i64> {
        self.frames.keys().next_back().copied()
    }

    /// Frame closest to `ts` within `tolerance` seconds (earlier wins ties).
    pub fn nearest(&self, ts: i64, tolerance: i64) -> Option<(i64, &Arc<Grid>)> {
        self.frames
            .range(ts - tolerance..=ts + tolerance)
            .min_by_key(|(&t, _)| ((t - ts).abs(), t))
            .map(|(&t, g)| (t, g))
    }

    /// Latest frame taken at or before `ts`.
    pub fn latest_at_or_before(&self, ts: i64) -> Option<(i64, &Arc<Grid>)> {
        self.frames.range(..=ts).next_back().map(|(&t, g)| (t, g))
    }

    /// Loads every `<stream>_<unix>.fgrid` in `dir`.
    pub fn load_dir(dir: &Path, stream: &str) -> Result<Self> {
        let mut store = Self::new(stream);
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name();
            let Some(ts) = name.to_str().and_then(|n| parse_frame_name(n, stream)) else {
                continue;
            };
            store.insert(ts, fgrid::load(&entry.path())?);
        }
        Ok(store)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, g) in self.iter() {
            fgrid::save(&dir.join(format!("{}_{t}.fgrid", self.stream)), g.as_ref())?;
        }
        Ok(())
    }
}
