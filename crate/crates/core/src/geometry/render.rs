use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud};

pub const DEFAULT_ELEVATION_DEG: f64 = 30.0;

/// Camera placement on the unit view sphere, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub azimuth: f64,
    pub elevation: f64,
    pub index: usize,
}

/// `k` viewpoints spaced evenly in azimuth, starting at 0°.
pub fn make_viewpoints(k: usize, elevation: f64) -> Result<Vec<Viewpoint>, GeometryError> {
    if k == 0 {
        return Err(GeometryError::ZeroViews);
    }
    let step = 360.0 / k as f64;
    Ok((0..k).map(|i| Viewpoint { azimuth: i as f64 * step, elevation, index: i }).collect())
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    match r {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => r.to_radians().sin_cos(),
    }
}

/// Square single-channel image, row-major from the top-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub res: usize,
    pub pixels: Vec<f32>,
}

impl DepthImage {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.res + col]
    }

    /// Binary PGM (P5) with 8-bit levels.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.res, self.res).into_bytes();
        out.extend(self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }
}

/// Orthographic point-splat render of a unit-sphere cloud.
///
/// The image plane spans `[-1, 1]²`. Each point lands in its nearest pixel
/// with value `1 / (1 + depth)`, where depth ∈ [0, 2] is measured from the
/// camera plane tangent to the unit sphere; the nearest point wins and
/// empty pixels stay 0.
pub fn render_pointsplat(pc: &PointCloud, view: &Viewpoint, res: usize) -> Result<DepthImage, GeometryError> {
    if res == 0 {
        return Err(GeometryError::ZeroResolution);
    }
    let (sa, ca) = sin_cos_deg(view.azimuth);
    let (se, ce) = sin_cos_deg(view.elevation);
    let toward_camera = [ce * ca, ce * sa, se];
    let right = [-sa, ca, 0.0];
    let up = [-se * ca, -se * sa, ce];
    let dot = |p: &[f32; 3], v: &[f64; 3]| f64::from(p[0]) * v[0] + f64::from(p[1]) * v[1] + f64::from(p[2]) * v[2];

    let mut pixels = vec![0.0f32; res * res];
    let max_px = (res - 1) as f64;
    for p in pc.points() {
        let x = dot(p, &right);
        let y = dot(p, &up);
        let depth = 1.0 - dot(p, &toward_camera);
        let col = ((x + 1.0) * 0.5 * res as f64).floor().clamp(0.0, max_px) as usize;
        let row = ((1.0 - y) * 0.5 * res as f64).floor().clamp(0.0, max_px) as usize;
        let value = (1.0 / (1.0 + depth.max(0.0))) as f32;
        let px = &mut pixels[row * res + col];
        if value > *px {
            *px = value;
        }
    }
    Ok(DepthImage { res, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn twelve_views_thirty_degrees_apart() {
        let v = make_viewpoints(12, DEFAULT_ELEVATION_DEG).unwrap();
        let az: Vec<f64> = v.iter().map(|v| v.azimuth).collect();
        assert_eq!(az, (0..12).map(|i| f64::from(i) * 30.0).collect::<Vec<_>>());
        assert!(v.iter().all(|v| v.elevation == 30.0));
    }

    #[test]
    fn thirty_views_twelve_degrees_apart() {
        let v = make_viewpoints(30, 0.0).unwrap();
        for (i, w) in v.iter().enumerate() {
            assert_eq!(w.azimuth, i as f64 * (360.0 / 30.0));
            assert_eq!(w.index, i);
        }
        assert!((v[1].azimuth - 12.0).abs() < 1e-12);
    }

    #[test]
    fn single_and_zero_views() {
        assert_eq!(make_viewpoints(1, 30.0).unwrap()[0].azimuth, 0.0);
        assert!(matches!(make_viewpoints(0, 30.0), Err(GeometryError::ZeroViews)));
    }

    #[test]
    fn origin_lands_in_center_pixel() {
        let pc = PointCloud::new(vec![[0.0; 3]], None).unwrap();
        for v in make_viewpoints(7, 30.0).unwrap() {
            let img = render_pointsplat(&pc, &v, 33).unwrap();
            let lit: Vec<usize> = (0..img.pixels.len()).filter(|&i| img.pixels[i] > 0.0).collect();
            assert_eq!(lit, vec![16 * 33 + 16]);
        }
    }

    fn random_unit_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| loop {
                let p: [f32; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                if super::super::norm3(&p) <= 1.0 {
                    break p;
                }
            })
            .collect();
        PointCloud::new(pts, None).unwrap()
    }

    #[test]
    fn opposite_azimuth_equals_rotated_cloud() {
        // Viewing from 180° is the same as turning the cloud 180° about z.
        let pc = random_unit_cloud(3, 400);
        let turned = PointCloud::new(pc.points().iter().map(|p| [-p[0], -p[1], p[2]]).collect(), None).unwrap();
        for elev in [0.0, 30.0, -45.0] {
            let back = render_pointsplat(&pc, &Viewpoint { azimuth: 180.0, elevation: elev, index: 0 }, 48).unwrap();
            let oracle =
                render_pointsplat(&turned, &Viewpoint { azimuth: 0.0, elevation: elev, index: 0 }, 48).unwrap();
            assert_eq!(back, oracle);
        }
    }

    #[test]
    fn planar_cloud_mirrors_between_front_and_back() {
        // Points on the x = 0 plane sit at equal depth from both sides, so the
        // 0° and 180° images are exact horizontal mirrors.
        let res = 16;
        let center = |k: usize| ((k as f32 + 0.5) / res as f32) * 2.0 - 1.0;
        let pts: Vec<[f32; 3]> =
            [(2usize, 3usize), (5, 11), (9, 9), (14, 1)].iter().map(|&(c, r)| [0.0, center(c), -center(r)]).collect();
        let pc = PointCloud::new(pts, None).unwrap();
        let front = render_pointsplat(&pc, &Viewpoint { azimuth: 0.0, elevation: 0.0, index: 0 }, res).unwrap();
        let back = render_pointsplat(&pc, &Viewpoint { azimuth: 180.0, elevation: 0.0, index: 1 }, res).unwrap();
        for r in 0..res {
            for c in 0..res {
                assert_eq!(front.get(r, c), back.get(r, res - 1 - c));
            }
        }
        assert_eq!(front.pixels.iter().filter(|v| **v > 0.0).count(), 4);
    }

    #[test]
    fn lit_pixels_stay_inside_projected_disc() {
        let pc = random_unit_cloud(8, 2000);
        let res = 64;
        for v in make_viewpoints(5, 30.0).unwrap() {
            let img = render_pointsplat(&pc, &v, res).unwrap();
            for r in 0..res {
                for c in 0..res {
                    if img.get(r, c) > 0.0 {
                        let x = (c as f64 + 0.5) / res as f64 * 2.0 - 1.0;
                        let y = 1.0 - (r as f64 + 0.5) / res as f64 * 2.0;
                        assert!((x * x + y * y).sqrt() <= 1.0 + 2.0 / res as f64);
                        assert!(img.get(r, c) <= 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_resolution_rejected() {
        let pc = PointCloud::new(vec![[0.0; 3]], None).unwrap();
        assert!(render_pointsplat(&pc, &make_viewpoints(1, 0.0).unwrap()[0], 0).is_err());
    }
}
