//! Raster transforms: fisheye unwarping, anti-aliased downscaling, centre
//! close-up and the sun/site-centred polar transform.
//!
//! Every resampler is bilinear (a convex combination of valid neighbours),
//! so constants are preserved and outputs stay inside the input range.

mod fisheye;
mod resample;
mod spin;

pub use fisheye::{undistort_sky, FisheyeCalibration, PlaneGrid};
pub use resample::{binomial_kernel, center_closeup, downscale};
pub use spin::{clamp_center, max_radius, spin_inverse, spin_transform, DEFAULT_BINS};
