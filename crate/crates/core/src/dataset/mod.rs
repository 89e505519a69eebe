//! Sample assembly from irregular sky, satellite and pyranometer streams.
mod assemble;
mod irradiance;
mod shard;
mod split;
mod store;
mod weather;

pub use assemble::{assemble, classify_days, encode_ic, AssemblyConfig, GapReport, Sample, Target, DEFAULT_HORIZONS, IC_MAX};
pub use irradiance::{format_utc, parse_utc, utc_day, IrradiancePoint, IrradianceSeries};
pub use shard::{read_shard, shard_paths, write_shard};
pub use split::{split, split_by, SplitHistograms, SplitName, SplitSpec, Splits, SZA_BUCKET_DEG};
pub use store::{parse_frame_name, FrameStore};
pub use weather::{classify_day, clear_sky_index_stats, WeatherClass, WeatherThresholds, MIN_DAYTIME_POINTS};
