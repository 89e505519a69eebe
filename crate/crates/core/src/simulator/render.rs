use super::field::PointSet;
use super::scene::{SceneSpec, CLOUD_ALBEDO, CLOUD_BRIGHTNESS, GLARE_PEAK, GLARE_RADIUS_DEG, SKY_BRIGHTNESS};
use crate::error::Result;
use crate::geometry::SolarPosition;
use crate::grid::Grid2D;
use crate::imaging::FisheyeCalibration;
use crate::Grid;

/// Renders the frames of one scene, reusing per-pixel tabulations of the
/// random fields across time steps.
pub struct SceneRenderer<'a> {
    scene: &'a SceneSpec,
    sat_points: Vec<(f64, f64)>,
    sat_albedo: Vec<f64>,
    sat_cloud: Option<PointSet>,
    sky: SkyGeometry,
    sky_cloud: Option<PointSet>,
}

struct SkyGeometry {
    size: usize,
    /// Per pixel: layer intersection and unit view vector, `None` outside the lens.
    rays: Vec<Option<((f64, f64), [f64; 3])>>,
}

impl SkyGeometry {
    fn new(scene: &SceneSpec, cal: &FisheyeCalibration) -> Self {
        let size = scene.params().sky_pixels;
        let (cx, cy) = cal.optical_center;
        let mut rays = Vec::with_capacity(size * size);
        for py in 0..size {
            for px in 0..size {
                let (dx, dy) = (px as f64 - cx, py as f64 - cy);
                let ray = cal.zenith_at(dx.hypot(dy)).map(|zen| {
                    // x grows east, y grows south.
                    let az = dx.atan2(-dy).to_degrees();
                    let dir = SolarPosition { zenith: zen, azimuth: az.rem_euclid(360.0) }.direction();
                    (scene.ray_point(zen, az), dir)
                });
                rays.push(ray);
            }
        }
        Self { size, rays }
    }
}

impl<'a> SceneRenderer<'a> {
    pub fn new(scene: &'a SceneSpec) -> Self {
        let view = scene.params().satellite;
        let mut sat_points = Vec::with_capacity(view.pixels * view.pixels);
        for py in 0..view.pixels {
            for px in 0..view.pixels {
                sat_points.push(view.to_plane(px as f64, py as f64));
            }
        }
        let sat_albedo = scene
            .albedo_field()
            .at_points(&sat_points)
            .eval_shifted(0.0, 0.0)
            .into_iter()
            .map(|g| scene.albedo_from(g))
            .collect();
        let sat_cloud = scene.cloud_field().map(|f| f.at_points(&sat_points));
        let sky = SkyGeometry::new(scene, &scene.calibration());
        let sky_cloud = scene.cloud_field().map(|f| {
            let pts: Vec<(f64, f64)> = sky.rays.iter().map(|r| r.map_or((0.0, 0.0), |(p, _)| p)).collect();
            f.at_points(&pts)
        });
        Self {
            scene,
            sat_points,
            sat_albedo,
            sat_cloud,
            sky,
            sky_cloud,
        }
    }

    fn opacities(&self, points: &[(f64, f64)], table: Option<&PointSet>, t: f64) -> Vec<f64> {
        let (dx, dy) = self.scene.displacement(t);
        let g = match table {
            Some(set) => set.eval_shifted(dx, dy),
            None => vec![0.0; points.len()],
        };
        points
            .iter()
            .zip(g)
            .map(|(&(e, n), g)| self.scene.opacity_from(g, e - dx, n - dy, t))
            .collect()
    }

    /// Cloud opacity over the satellite grid.
    pub fn satellite_opacity(&self, t: f64) -> Result<Vec<f64>> {
        self.scene.check_time(t)?;
        Ok(self.opacities(&self.sat_points, self.sat_cloud.as_ref(), t))
    }

    /// Satellite reflectance `albedo * (1 - tau) + 0.9 * tau`.
    pub fn satellite(&self, t: f64) -> Result<Grid> {
        let tau = self.satellite_opacity(t)?;
        let n = self.scene.params().satellite.pixels;
        let values = tau
            .iter()
            .zip(&self.sat_albedo)
            .map(|(&tau, &a)| (a * (1.0 - tau) + CLOUD_ALBEDO * tau) as f32)
            .collect();
        Grid2D::new(n, n, 1, values, (0.0, 1.0))
    }

    /// All-sky fisheye frame seen from the site.
    pub fn sky(&self, t: f64) -> Result<Grid> {
        self.scene.check_time(t)?;
        let sun = self.scene.sun(t)?;
        let glare = if sun.zenith < 90.0 {
            let tau_sun = self.scene.tau_sun(t)?;
            Some((sun.direction(), GLARE_PEAK * (1.0 - tau_sun)))
        } else {
            None
        };
        let pts: Vec<(f64, f64)> = self.sky.rays.iter().map(|r| r.map_or((0.0, 0.0), |(p, _)| p)).collect();
        let tau = self.opacities(&pts, self.sky_cloud.as_ref(), t);
        let n = self.sky.size;
        let mut values = vec![0.0f32; n * n];
        let mut mask = vec![false; n * n];
        let radius = GLARE_RADIUS_DEG.to_radians();
        for (i, ray) in self.sky.rays.iter().enumerate() {
            let Some((_, dir)) = ray else { continue };
            let mut v = SKY_BRIGHTNESS * (1.0 - tau[i]) + CLOUD_BRIGHTNESS * tau[i];
            if let Some((s, peak)) = glare {
                let d = (dir[0] * s[0] + dir[1] * s[1] + dir[2] * s[2]).clamp(-1.0, 1.0).acos();
                if d < radius {
                    v += peak * (1.0 - d / radius);
                }
            }
            values[i] = v.min(1.0) as f32;
            mask[i] = true;
        }
        Grid2D::new(n, n, 1, values, (0.0, 1.0))?.with_mask(mask)
    }
}

pub fn render_satellite(scene: &SceneSpec, t: f64) -> Result<Grid> {
    scene.check_time(t)?;
    SceneRenderer::new(scene).satellite(t)
}

pub fn render_sky(scene: &SceneSpec, t: f64) -> Result<Grid> {
    scene.check_time(t)?;
    SceneRenderer::new(scene).sky(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::WeatherClass;
    use crate::geometry::Site;
    use crate::imaging::undistort_sky;
    use crate::simulator::scene::{AlbedoParams, CloudLayer, SatelliteView, SceneParams};

    fn scene(cloud: CloudLayer, sat: usize, sky: usize) -> SceneSpec {
        SceneSpec::new(SceneParams {
            seed: 1,
            site: Site::SIRTA,
            regime: WeatherClass::BrokenSky,
            cloud,
            albedo: AlbedoParams { seed: 3, ..AlbedoParams::default() },
            velocity: (10.0, 5.0),
            growth_rate: 0.0,
            cloud_height: 2000.0,
            attenuation: 0.75,
            t0: 1_561_075_200,
            duration: 86_400,
            satellite: SatelliteView { pixels: sat, extent_deg: 2.2, latitude: Site::SIRTA.latitude },
            sky_pixels: sky,
        })
        .unwrap()
    }

    fn broken(seed: u64) -> CloudLayer {
        CloudLayer::Broken { seed, modes: 48, wavelengths: (15_000.0, 45_000.0), threshold: 0.0, softness: 0.8 }
    }

    const NOON: f64 = 1_561_075_200.0 + 12.0 * 3600.0;

    #[test]
    fn clear_satellite_is_the_albedo() {
        let s = scene(CloudLayer::Uniform { opacity: 0.0 }, 16, 16);
        let f = render_satellite(&s, NOON).unwrap();
        let view = s.params().satellite;
        for py in 0..16 {
            for px in 0..16 {
                let (e, n) = view.to_plane(px as f64, py as f64);
                assert!((f.get(0, px, py) as f64 - s.albedo(e, n)).abs() < 1e-6);
            }
        }
        let thick = scene(CloudLayer::Uniform { opacity: 1.0 }, 16, 16);
        assert!(render_satellite(&thick, NOON).unwrap().values().iter().all(|&v| (v - 0.9).abs() < 1e-7));
        assert!(render_satellite(&thick, 0.0).is_err());
    }

    #[test]
    fn clear_sky_frame_has_the_sun_disk_at_the_sun() {
        let s = scene(CloudLayer::Uniform { opacity: 0.0 }, 16, 129);
        let f = render_sky(&s, NOON).unwrap();
        let sun = s.sun(NOON).unwrap();
        let (u, v) = s.calibration().project(sun.zenith, sun.azimuth).unwrap();
        let (u, v) = (u.round() as usize, v.round() as usize);
        assert!(f.get(0, u, v) > 0.85, "{}", f.get(0, u, v));
        // Away from the disk the clear sky is flat.
        let (bx, by) = (128 - u, 128 - v);
        assert!((f.get(0, bx, by) as f64 - SKY_BRIGHTNESS).abs() < 1e-6);
        assert!(!f.is_valid(0, 0));

        let thick = scene(CloudLayer::Uniform { opacity: 1.0 }, 16, 65);
        let f = render_sky(&thick, NOON).unwrap();
        for (i, &v) in f.values().iter().enumerate() {
            if f.is_valid(i % 65, i / 65) {
                assert!((v as f64 - CLOUD_BRIGHTNESS).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unwarped_sky_matches_the_layer() {
        // Night frame: no glare, pixel = 0.3 + 0.55 tau.
        let s = scene(broken(8), 16, 512);
        let t = 1_561_075_200.0 + 3600.0;
        let raw = render_sky(&s, t).unwrap();
        let cal = s.calibration();
        let out = undistort_sky(&raw, &cal, 64).unwrap();
        let plane = cal.unwarp_geometry(64);
        let mut err = 0.0f64;
        for py in 0..64 {
            for px in 0..64 {
                if !out.is_valid(px, py) {
                    continue;
                }
                let (e, n) = plane.to_plane(px as f64, py as f64);
                let tau = s.opacity(e, n, t);
                let seen = (out.get(0, px, py) as f64 - SKY_BRIGHTNESS) / (CLOUD_BRIGHTNESS - SKY_BRIGHTNESS);
                err = err.max((seen - tau).abs());
            }
        }
        assert!(err < 0.05, "unwarp error {err}");
    }

    #[test]
    fn satellite_translates_with_the_wind() {
        // Uniform albedo so that only the clouds move; one pixel per 5 minutes.
        let mut p = scene(broken(2), 48, 16).params().clone();
        p.albedo.contrast = 0.0;
        let (dx, dy) = p.satellite.pixel_size();
        p.velocity = (dx / 300.0, -dy / 300.0);
        let s = SceneSpec::new(p).unwrap();
        let a = render_satellite(&s, NOON).unwrap();
        let b = render_satellite(&s, NOON + 600.0).unwrap();
        let mut err = 0.0f32;
        for y in 4..44 {
            for x in 4..44 {
                // Two pixels east and two pixels south.
                err = err.max((b.get(0, x + 2, y + 2) - a.get(0, x, y)).abs());
            }
        }
        assert!(err < 1e-3, "translation error {err}");
    }

    #[test]
    fn sun_ray_agrees_across_views() {
        // A narrow 0.3 degree footprint (about 200 m pixels) around the site.
        let mut p = scene(broken(5), 128, 16).params().clone();
        p.satellite.extent_deg = 0.3;
        let s = SceneSpec::new(p).unwrap();
        let r = SceneRenderer::new(&s);
        let view = s.params().satellite;
        for k in 0..6 {
            let t = NOON - 3.0 * 3600.0 + k as f64 * 1800.0;
            let tau = r.satellite_opacity(t).unwrap();
            let g = Grid2D::<f64>::new(128, 128, 1, tau, (0.0, 1.0)).unwrap();
            let (e, n) = s.sun_ray_point(t).unwrap().unwrap();
            let (px, py) = view.to_pixel(e, n);
            let from_sat = g.sample_bilinear(0, px, py).unwrap();
            assert!((from_sat - s.tau_sun(t).unwrap()).abs() < 0.02);
        }
    }

    #[test]
    fn deterministic() {
        let a = render_sky(&scene(broken(3), 16, 32), NOON).unwrap();
        let b = render_sky(&scene(broken(3), 16, 32), NOON).unwrap();
        assert_eq!(a, b);
    }
}
