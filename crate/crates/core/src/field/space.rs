use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::CoordinateSet;

/// Metric space a field is defined over, with its sampling resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpaceSpec {
    /// Cell centers of an `height × width` image grid, coordinates `(x, y)`.
    #[serde(rename = "euclidean_grid_2d")]
    Grid2d { height: usize, width: usize },
    /// Voxel centers, coordinates `(x, y, z)`.
    #[serde(rename = "euclidean_grid_3d")]
    Grid3d {
        depth: usize,
        height: usize,
        width: usize,
    },
    /// Driscoll–Healy equiangular `2b × 2b` grid on the unit sphere.
    #[serde(rename = "sphere_dh")]
    Sphere { bandwidth: usize },
}

impl MetricSpaceSpec {
    pub fn coord_dim(&self) -> usize {
        match self {
            MetricSpaceSpec::Grid2d { .. } => 2,
            MetricSpaceSpec::Grid3d { .. } | MetricSpaceSpec::Sphere { .. } => 3,
        }
    }

    pub fn num_points(&self) -> usize {
        match *self {
            MetricSpaceSpec::Grid2d { height, width } => height * width,
            MetricSpaceSpec::Grid3d {
                depth,
                height,
                width,
            } => depth * height * width,
            MetricSpaceSpec::Sphere { bandwidth } => 4 * bandwidth * bandwidth,
        }
    }

    /// Raster shape of the sampling grid, outermost axis first.
    pub fn grid_shape(&self) -> Vec<usize> {
        match *self {
            MetricSpaceSpec::Grid2d { height, width } => vec![height, width],
            MetricSpaceSpec::Grid3d {
                depth,
                height,
                width,
            } => vec![depth, height, width],
            MetricSpaceSpec::Sphere { bandwidth } => vec![2 * bandwidth, 2 * bandwidth],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            MetricSpaceSpec::Grid2d { height, width } => height > 0 && width > 0,
            MetricSpaceSpec::Grid3d {
                depth,
                height,
                width,
            } => depth > 0 && height > 0 && width > 0,
            MetricSpaceSpec::Sphere { bandwidth } => bandwidth > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("resolution must be positive: {self}")))
        }
    }

    /// Same kind of space at a different resolution.
    pub fn with_resolution(&self, resolution: usize) -> MetricSpaceSpec {
        match self {
            MetricSpaceSpec::Grid2d { .. } => MetricSpaceSpec::Grid2d {
                height: resolution,
                width: resolution,
            },
            MetricSpaceSpec::Grid3d { .. } => MetricSpaceSpec::Grid3d {
                depth: resolution,
                height: resolution,
                width: resolution,
            },
            MetricSpaceSpec::Sphere { .. } => MetricSpaceSpec::Sphere {
                bandwidth: resolution,
            },
        }
    }

    pub fn coordinates(&self) -> Result<CoordinateSet> {
        match *self {
            MetricSpaceSpec::Sphere { bandwidth } => sphere_coordinates(bandwidth),
            _ => grid_coordinates(self),
        }
    }
}

impl fmt::Display for MetricSpaceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricSpaceSpec::Grid2d { height, width } => write!(f, "grid2d {height}x{width}"),
            MetricSpaceSpec::Grid3d {
                depth,
                height,
                width,
            } => write!(f, "grid3d {depth}x{height}x{width}"),
            MetricSpaceSpec::Sphere { bandwidth } => write!(f, "sphere_dh b={bandwidth}"),
        }
    }
}

/// Center of cell `i` out of `n` along an axis spanning `[-1, 1]`.
#[inline]
pub fn cell_center(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

/// Row-major cell centers of a Euclidean grid, normalized to `[-1, 1]` per
/// axis. The first coordinate (`x`) runs along the fastest-varying axis.
pub fn grid_coordinates(spec: &MetricSpaceSpec) -> Result<CoordinateSet> {
    spec.validate()?;
    let (dims, data): (usize, Vec<f64>) = match *spec {
        MetricSpaceSpec::Grid2d { height, width } => {
            let mut data = Vec::with_capacity(height * width * 2);
            for y in 0..height {
                for x in 0..width {
                    data.extend([cell_center(x, width), cell_center(y, height)]);
                }
            }
            (2, data)
        }
        MetricSpaceSpec::Grid3d {
            depth,
            height,
            width,
        } => {
            let mut data = Vec::with_capacity(depth * height * width * 3);
            for z in 0..depth {
                for y in 0..height {
                    for x in 0..width {
                        data.extend([
                            cell_center(x, width),
                            cell_center(y, height),
                            cell_center(z, depth),
                        ]);
                    }
                }
            }
            (3, data)
        }
        MetricSpaceSpec::Sphere { .. } => {
            return Err(Error::contract("grid_coordinates called on a sphere space"))
        }
    };
    CoordinateSet::new(data.len() / dims, dims, data)
}

/// Driscoll–Healy sampling of S² at bandwidth `b`: colatitudes
/// `θ_j = π(2j+1)/(4b)` and longitudes `φ_k = 2πk/(2b)`, `j, k < 2b`,
/// embedded as unit vectors. Colatitude is the outer (row) index.
pub fn sphere_coordinates(bandwidth: usize) -> Result<CoordinateSet> {
    if bandwidth < 1 {
        return Err(Error::contract("sphere bandwidth must be at least 1"));
    }
    let n = 2 * bandwidth;
    let mut data = Vec::with_capacity(n * n * 3);
    for j in 0..n {
        let theta = PI * (2 * j + 1) as f64 / (4 * bandwidth) as f64;
        for k in 0..n {
            let phi = 2.0 * PI * k as f64 / n as f64;
            data.extend([
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ]);
        }
    }
    CoordinateSet::new(n * n, 3, data)
}
