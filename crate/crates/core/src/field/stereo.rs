//! Stereographic transfer of planar images onto the sphere.
//!
//! The plane is `z = 0` and the projection centre is the south pole, so the
//! plane origin maps to the north pole and the source square `[-1, 1]²`
//! covers the upper hemisphere plus a band below the equator.

use crate::error::{Error, Result};
use crate::field::{FieldSample, MetricSpaceSpec, SignalSet};

/// Signal assigned to sphere points whose projection leaves the image.
pub const OUTSIDE_FILL: f64 = -1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Plane point to sphere: `(2u, 2v, 1 − u² − v²) / (1 + u² + v²)`.
pub fn plane_to_sphere(u: f64, v: f64) -> [f64; 3] {
    let r2 = u * u + v * v;
    let d = 1.0 + r2;
    [2.0 * u / d, 2.0 * v / d, (1.0 - r2) / d]
}

/// Inverse of [`plane_to_sphere`]; `None` at the south pole.
pub fn sphere_to_plane(p: [f64; 3]) -> Option<(f64, f64)> {
    let d = 1.0 + p[2];
    if d <= 1e-12 {
        return None;
    }
    Some((p[0] / d, p[1] / d))
}

/// Samples a 2D grid field at continuous plane coordinates in `[-1, 1]²`.
fn sample_image(
    field: &FieldSample,
    height: usize,
    width: usize,
    u: f64,
    v: f64,
    mode: Interpolation,
    out: &mut [f64],
) {
    let channels = field.signal_dim();
    // Continuous pixel index of the point; cell centers sit on integers.
    let px = ((u + 1.0) * 0.5 * width as f64 - 0.5).clamp(0.0, (width - 1) as f64);
    let py = ((v + 1.0) * 0.5 * height as f64 - 0.5).clamp(0.0, (height - 1) as f64);
    let at = |x: usize, y: usize, c: usize| field.signals.row(y * width + x)[c];
    match mode {
        Interpolation::Nearest => {
            let (x, y) = (px.round() as usize, py.round() as usize);
            for (c, o) in out.iter_mut().enumerate().take(channels) {
                *o = at(x, y, c);
            }
        }
        Interpolation::Bilinear => {
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
            let (fx, fy) = (px - x0 as f64, py - y0 as f64);
            for (c, o) in out.iter_mut().enumerate().take(channels) {
                let top = at(x0, y0, c) * (1.0 - fx) + at(x1, y0, c) * fx;
                let bottom = at(x0, y1, c) * (1.0 - fx) + at(x1, y1, c) * fx;
                *o = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
}

/// Lifts a planar image field onto a Driscoll–Healy sphere grid.
pub fn stereographic_lift(
    image: &FieldSample,
    bandwidth: usize,
    mode: Interpolation,
) -> Result<FieldSample> {
    let MetricSpaceSpec::Grid2d { height, width } = image.space else {
        return Err(Error::contract(format!(
            "stereographic lift needs a 2D grid field, got {}",
            image.space
        )));
    };
    let space = MetricSpaceSpec::Sphere { bandwidth };
    let coords = space.coordinates()?;
    let channels = image.signal_dim();
    let mut data = vec![OUTSIDE_FILL; coords.len() * channels];
    for i in 0..coords.len() {
        let r = coords.row(i);
        let Some((u, v)) = sphere_to_plane([r[0], r[1], r[2]]) else {
            continue;
        };
        if u.abs() > 1.0 || v.abs() > 1.0 {
            continue;
        }
        sample_image(
            image,
            height,
            width,
            u,
            v,
            mode,
            &mut data[i * channels..(i + 1) * channels],
        );
    }
    FieldSample::new(space, coords, SignalSet::new(4 * bandwidth * bandwidth, channels, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_and_unit_point() {
        assert_eq!(plane_to_sphere(0.0, 0.0), [0.0, 0.0, 1.0]);
        assert_eq!(plane_to_sphere(1.0, 0.0), [1.0, 0.0, 0.0]);
        let (u, v) = sphere_to_plane(plane_to_sphere(0.3, -0.7)).unwrap();
        assert!((u - 0.3).abs() < 1e-15 && (v + 0.7).abs() < 1e-15);
        assert!(sphere_to_plane([0.0, 0.0, -1.0]).is_none());
    }

    #[test]
    fn lifted_points_lie_on_the_unit_sphere() {
        for &(u, v) in &[(0.2, 0.9), (-1.0, 1.0), (5.0, -3.0)] {
            let p = plane_to_sphere(u, v);
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-15);
        }
    }

    fn constant_image(value: f64) -> FieldSample {
        let space = MetricSpaceSpec::Grid2d {
            height: 6,
            width: 5,
        };
        FieldSample::on_space(space, SignalSet::new(30, 2, vec![value; 60]).unwrap()).unwrap()
    }

    #[test]
    fn constant_image_lifts_to_constant_inside_region() {
        for mode in [Interpolation::Bilinear, Interpolation::Nearest] {
            let lifted = stereographic_lift(&constant_image(0.25), 8, mode).unwrap();
            let mut inside = 0;
            for i in 0..lifted.len() {
                let r = lifted.coords.row(i);
                let (u, v) = sphere_to_plane([r[0], r[1], r[2]]).unwrap();
                let expected = if u.abs() <= 1.0 && v.abs() <= 1.0 {
                    inside += 1;
                    0.25
                } else {
                    OUTSIDE_FILL
                };
                assert!(lifted.signals.row(i).iter().all(|&s| (s - expected).abs() < 1e-15));
            }
            // The upper hemisphere lies inside the square.
            assert!(inside >= lifted.len() / 2);
        }
    }

    #[test]
    fn nearest_lift_reads_exact_pixels() {
        let space = MetricSpaceSpec::Grid2d {
            height: 4,
            width: 4,
        };
        let values: Vec<f64> = (0..16).map(|v| v as f64 / 16.0).collect();
        let img = FieldSample::on_space(space, SignalSet::new(16, 1, values.clone()).unwrap())
            .unwrap();
        let lifted = stereographic_lift(&img, 4, Interpolation::Nearest).unwrap();
        for i in 0..lifted.len() {
            let s = lifted.signals.row(i)[0];
            assert!(s == OUTSIDE_FILL || values.contains(&s));
        }
    }

    #[test]
    fn non_grid_sources_are_rejected() {
        let sphere = stereographic_lift(&constant_image(0.0), 2, Interpolation::Bilinear).unwrap();
        assert!(stereographic_lift(&sphere, 2, Interpolation::Bilinear).is_err());
    }
}
