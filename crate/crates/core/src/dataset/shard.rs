//! Sample shards: deduplicated FGRID payloads in one file plus a JSON-lines
//! index with one record per sample.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::assemble::{Sample, Target};
use super::weather::WeatherClass;
use crate::error::{Error, Result};
use crate::fgrid;
use crate::geometry::Site;
use crate::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRef {
    t: i64,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TargetRecord {
    horizon_s: i64,
    time: i64,
    map: FrameRef,
    ghi: f64,
    clear: f64,
    bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleRecord {
    t: i64,
    site: Site,
    sza: f64,
    weather: Option<WeatherClass>,
    sky: Vec<FrameRef>,
    sat: Vec<FrameRef>,
    past_ghi: Vec<f64>,
    past_clear: Vec<f64>,
    ghi_t: f64,
    clear_t: f64,
    targets: Vec<TargetRecord>,
}

pub fn shard_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.frames")), dir.join(format!("{name}.jsonl")))
}

/// Writes `<name>.frames` and `<name>.jsonl` under `dir`.
pub fn write_shard(dir: &Path, name: &str, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (frames_path, index_path) = shard_paths(dir, name);
    let mut frames = BufWriter::new(fs::File::create(&frames_path).map_err(|e| Error::io(&frames_path, e))?);
    let mut index = BufWriter::new(fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?);
    let mut offsets: HashMap<(u8, i64), u64> = HashMap::new();
    let mut pos = 0u64;
    let mut put = |stream: u8, t: i64, g: &Grid| -> Result<FrameRef> {
        if let Some(&offset) = offsets.get(&(stream, t)) {
            return Ok(FrameRef { t, offset });
        }
        let bytes = fgrid::encode(g);
        frames.write_all(&bytes).map_err(|e| Error::io(&frames_path, e))?;
        let offset = pos;
        pos += bytes.len() as u64;
        offsets.insert((stream, t), offset);
        Ok(FrameRef { t, offset })
    };
    for s in samples {
        let sky = s.sky_times.iter().zip(&s.sky).map(|(&t, g)| put(0, t, g)).collect::<Result<Vec<_>>>()?;
        let sat = s.sat_times.iter().zip(&s.sat).map(|(&t, g)| put(1, t, g)).collect::<Result<Vec<_>>>()?;
        let targets = s
            .targets
            .iter()
            .map(|tg| {
                Ok(TargetRecord {
                    horizon_s: tg.horizon,
                    time: tg.time,
                    map: put(1, tg.map_time, &tg.ci_map)?,
                    ghi: tg.ghi,
                    clear: tg.clear,
                    bin: tg.bin,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rec = SampleRecord {
            t: s.t,
            site: s.site,
            sza: s.sza,
            weather: s.weather,
            sky,
            sat,
            past_ghi: s.past_ghi.clone(),
            past_clear: s.past_clear.clone(),
            ghi_t: s.ghi_t,
            clear_t: s.clear_t,
            targets,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(index, "{line}").map_err(|e| Error::io(&index_path, e))?;
    }
    drop(put);
    frames.flush().map_err(|e| Error::io(&frames_path, e))?;
    index.flush().map_err(|e| Error::io(&index_path, e))?;
    Ok(())
}

/// Reads a shard back; frames shared between samples stay shared.
pub fn read_shard(dir: &Path, name: &str) -> Result<Vec<Sample>> {
    let (frames_path, index_path) = shard_paths(dir, name);
    let bytes = fs::read(&frames_path).map_err(|e| Error::io(&frames_path, e))?;
    let index = fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut cache: HashMap<u64, Arc<Grid>> = HashMap::new();
    let mut frame = |r: &FrameRef| -> Result<Arc<Grid>> {
        if let Some(g) = cache.get(&r.offset) {
            return Ok(g.clone());
        }
        let start = usize::try_from(r.offset).ok().filter(|&o| o < bytes.len());
        let Some(start) = start else {
            return Err(Error::data(format!("{}: offset {} past the end", frames_path.display(), r.offset)));
        };
        let (g, _) = fgrid::decode::<f32>(&bytes[start..])?;
        let g = Arc::new(g);
        cache.insert(r.offset, g.clone());
        Ok(g)
    };
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(index).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{} line {}: {e}", index_path.display(), i + 1)))?;
        let targets = rec
            .targets
            .iter()
            .map(|tr| {
                Ok(Target {
                    horizon: tr.horizon_s,
                    time: tr.time,
                    map_time: tr.map.t,
                    ci_map: frame(&tr.map)?,
                    ghi: tr.ghi,
                    clear: tr.clear,
                    bin: tr.bin,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(Sample {
            t: rec.t,
            site: rec.site,
            sza: rec.sza,
            weather: rec.weather,
            sky_times: rec.sky.iter().map(|r| r.t).collect(),
            sky: rec.sky.iter().map(&mut frame).collect::<Result<_>>()?,
            sat_times: rec.sat.iter().map(|r| r.t).collect(),
            sat: rec.sat.iter().map(&mut frame).collect::<Result<_>>()?,
            past_ghi: rec.past_ghi,
            past_clear: rec.past_clear,
            ghi_t: rec.ghi_t,
            clear_t: rec.clear_t,
            targets,
        });
    }
    Ok(out)
}
