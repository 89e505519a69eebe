//! Effective cloud albedo (cloud index) from satellite reflectance.
//!
//! `ci = (p - p_min) / (p_max - p_min)` where `p_min` is the per-pixel
//! minimum over the previous `N` days at the same time of day and `p_max`
//! is the brightest valid pixel of the current frame.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fgrid;
use crate::grid::Grid2D;
use crate::scalar::Scalar;

pub const DEFAULT_SLOT_PERIOD: i64 = 300;
pub const DEFAULT_WINDOW_DAYS: usize = 10;
const DAY: i64 = 86_400;
const HISTORY_MAGIC: &[u8; 4] = b"AHST";

#[derive(Debug, Clone)]
struct Slot<T> {
    frames: VecDeque<(i64, Grid2D<T>)>,
    p_min: Vec<T>,
    p_min_valid: Vec<bool>,
}

/// Rolling per-slot albedo minimum.
#[derive(Debug, Clone)]
pub struct AlbedoHistory<T> {
    slot_period: i64,
    window_days: usize,
    dims: Option<(usize, usize)>,
    slots: BTreeMap<u32, Slot<T>>,
}

impl<T: Scalar> Default for AlbedoHistory<T> {
    fn default() -> Self {
        Self::new(DEFAULT_SLOT_PERIOD, DEFAULT_WINDOW_DAYS).expect("valid defaults")
    }
}

impl<T: Scalar> AlbedoHistory<T> {
    pub fn new(slot_period: i64, window_days: usize) -> Result<Self> {
        if slot_period <= 0 || DAY % slot_period != 0 {
            return Err(Error::domain(format!("slot period {slot_period}s must divide one day")));
        }
        if window_days == 0 {
            return Err(Error::domain("albedo window must cover at least one day"));
        }
        Ok(Self {
            slot_period,
            window_days,
            dims: None,
            slots: BTreeMap::new(),
        })
    }

    pub fn slot_period(&self) -> i64 {
        self.slot_period
    }

    pub fn window_days(&self) -> usize {
        self.window_days
    }

    /// Time-of-day slot of a timestamp, rounded to the nearest slot.
    pub fn slot_of(&self, timestamp: i64) -> u32 {
        let per_day = DAY / self.slot_period;
        let tod = timestamp.rem_euclid(DAY);
        (((tod + self.slot_period / 2) / self.slot_period) % per_day) as u32
    }

    pub fn frames_in_slot(&self, slot: u32) -> usize {
        self.slots.get(&slot).map_or(0, |s| s.frames.len())
    }

    pub fn timestamps_in_slot(&self, slot: u32) -> Vec<i64> {
        self.slots
            .get(&slot)
            .map_or_else(Vec::new, |s| s.frames.iter().map(|(t, _)| *t).collect())
    }

    /// Per-pixel minimum for a slot; masked where no retained frame is valid.
    pub fn p_min(&self, slot: u32) -> Option<Grid2D<T>> {
        let s = self.slots.get(&slot)?;
        let (w, h) = self.dims?;
        Grid2D::from_values(w, h, 1, s.p_min.clone()).ok()?.with_mask(s.p_min_valid.clone()).ok()
    }

    /// Appends `frame` to its slot, evicts entries older than the window and
    /// recomputes the slot minimum over what remains.
    pub fn update(&mut self, frame: &Grid2D<T>, timestamp: i64) -> Result<()> {
        if frame.channels() != 1 {
            return Err(Error::domain("albedo history expects single channel frames"));
        }
        let dims = (frame.width(), frame.height());
        match self.dims {
            Some(d) if d != dims => {
                return Err(Error::domain(format!(
                    "frame {}x{} does not match history {}x{}",
                    dims.0, dims.1, d.0, d.1
                )))
            }
            _ => self.dims = Some(dims),
        }
        let slot_id = self.slot_of(timestamp);
        let n = dims.0 * dims.1;
        let window = self.window_days as i64 * DAY;
        let cap = self.window_days;
        let slot = self.slots.entry(slot_id).or_insert_with(|| Slot {
            frames: VecDeque::new(),
            p_min: vec![T::zero(); n],
            p_min_valid: vec![false; n],
        });
        let pos = slot.frames.partition_point(|(t, _)| *t <= timestamp);
        slot.frames.insert(pos, (timestamp, frame.clone()));
        let newest = slot.frames.back().map(|(t, _)| *t).unwrap_or(timestamp);
        while slot.frames.front().is_some_and(|(t, _)| *t <= newest - window) || slot.frames.len() > cap {
            slot.frames.pop_front();
        }

        slot.p_min.iter_mut().for_each(|v| *v = T::infinity());
        slot.p_min_valid.iter_mut().for_each(|v| *v = false);
        for (_, f) in &slot.frames {
            for (i, &v) in f.values().iter().enumerate() {
                if f.is_valid(i % dims.0, i / dims.0) && v < slot.p_min[i] {
                    slot.p_min[i] = v;
                    slot.p_min_valid[i] = true;
                }
            }
        }
        for (v, ok) in slot.p_min.iter_mut().zip(&slot.p_min_valid) {
            if !ok {
                *v = T::zero();
            }
        }
        Ok(())
    }

    /// Writes the retained frames: `AHST | u32 version | u32 slot_period |
    /// u32 window_days | u32 count | count x (u32 slot, i64 timestamp)`
    /// followed by the FGRID payloads in the same order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(u32, i64, &Grid2D<T>)> = self
            .slots
            .iter()
            .flat_map(|(s, slot)| slot.frames.iter().map(move |(t, g)| (*s, *t, g)))
            .collect();
        let mut out = Vec::new();
        out.extend_from_slice(HISTORY_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.slot_period as u32).to_le_bytes());
        out.extend_from_slice(&(self.window_days as u32).to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (s, t, _) in &entries {
            out.extend_from_slice(&s.to_le_bytes());
            out.extend_from_slice(&t.to_le_bytes());
        }
        for (_, _, g) in &entries {
            out.extend_from_slice(&fgrid::encode(*g));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..4] != HISTORY_MAGIC {
            return Err(Error::data("not an albedo history checkpoint"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != 1 {
            return Err(Error::data("unsupported albedo history version"));
        }
        let mut hist = Self::new(word(1) as i64, word(2) as usize)?;
        let count = word(3) as usize;
        let index_end = 20 + count * 12;
        if bytes.len() < index_end {
            return Err(Error::data("truncated albedo history index"));
        }
        let mut offset = index_end;
        for k in 0..count {
            let at = 20 + k * 12;
            let slot = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            let ts = i64::from_le_bytes(bytes[at + 4..at + 12].try_into().unwrap());
            let (grid, used) = fgrid::decode::<T>(&bytes[offset..])?;
            offset += used;
            if hist.slot_of(ts) != slot {
                return Err(Error::data(format!("history entry {k}: slot {slot} does not match timestamp {ts}")));
            }
            hist.update(&grid, ts)?;
        }
        Ok(hist)
    }
}

/// Cloud-index map plus ingestion diagnostics.
#[derive(Debug, Clone)]
pub struct CloudIndexResult<T> {
    /// Values in [0, 1]; masked where the frame or the albedo minimum is.
    pub map: Grid2D<T>,
    /// Pixels darker than the albedo minimum before clamping.
    pub below_albedo: usize,
    /// Pixels above 1 before clamping.
    pub above_one: usize,
    /// Set when `p_max <= p_min` everywhere (the frame equals the albedo).
    pub degenerate: bool,
}

/// Cloud index of `frame` taken at `timestamp` against `hist`.
pub fn cloud_index<T: Scalar>(frame: &Grid2D<T>, hist: &AlbedoHistory<T>, timestamp: i64) -> Result<CloudIndexResult<T>> {
    let slot = hist.slot_of(timestamp);
    let s = hist
        .slots
        .get(&slot)
        .filter(|s| !s.frames.is_empty())
        .ok_or_else(|| Error::domain(format!("no albedo history for time-of-day slot {slot}")))?;
    let (w, h) = hist.dims.expect("non-empty history has dims");
    if frame.width() != w || frame.height() != h || frame.channels() != 1 {
        return Err(Error::domain("frame does not match albedo history dimensions"));
    }
    let p_max = (0..w * h)
        .filter(|&i| frame.is_valid(i % w, i / w))
        .map(|i| frame.values()[i])
        .fold(T::neg_infinity(), T::max);

    let mut values = vec![T::zero(); w * h];
    let mut mask = vec![false; w * h];
    let (mut below, mut above, mut any_range) = (0usize, 0usize, false);
    for i in 0..w * h {
        if !frame.is_valid(i % w, i / w) || !s.p_min_valid[i] {
            continue;
        }
        mask[i] = true;
        let p = frame.values()[i];
        let lo = s.p_min[i];
        let den = p_max - lo;
        if den <= T::zero() {
            continue;
        }
        any_range = true;
        let ci = (p - lo) / den;
        if ci < T::zero() {
            below += 1;
        } else if ci > T::one() {
            above += 1;
        }
        values[i] = ci.max(T::zero()).min(T::one());
    }
    let map = Grid2D::new(w, h, 1, values, (T::zero(), T::one()))?.with_mask(mask)?;
    Ok(CloudIndexResult {
        map,
        below_albedo: below,
        above_one: above,
        degenerate: !any_range,
    })
}
