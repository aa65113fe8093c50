//! Reconstruction, point-set and forward-process diagnostics.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{FieldSample, Matrix, MetricSpaceSpec, SignalSet};
use crate::schedule::NoiseSchedule;

/// PSNR peak for signals in `[-1, 1]`.
pub const PSNR_PEAK: f64 = 2.0;
/// Value reported when two fields are identical.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Occupancy signals above this value count as inside (probability 0.5
/// after mapping `[-1, 1]` to `[0, 1]`).
pub const OCCUPANCY_THRESHOLD: f64 = 0.0;

/// Non-empty set of finite 3D points.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet(Matrix);

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("point set is empty"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point set".into()));
        }
        let n = points.len();
        Ok(PointSet(Matrix::new(n, 3, points.into_iter().flatten().collect())?))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// Voxel centers of a 3D occupancy field whose signal exceeds
/// [`OCCUPANCY_THRESHOLD`].
pub fn occupancy_points(field: &FieldSample) -> Result<PointSet> {
    if !matches!(field.space, MetricSpaceSpec::Grid3d { .. }) || field.signal_dim() != 1 {
        return Err(Error::contract("occupancy points need a scalar field on a 3D grid"));
    }
    let pts: Vec<[f64; 3]> = (0..field.len())
        .filter(|&i| field.signals.row(i)[0] > OCCUPANCY_THRESHOLD)
        .map(|i| {
            let c = field.coords.row(i);
            [c[0], c[1], c[2]]
        })
        .collect();
    PointSet::new(pts)
}

pub fn psnr(a: &FieldSample, b: &FieldSample) -> Result<f64> {
    if a.coords != b.coords {
        return Err(Error::contract("psnr needs fields on identical coordinates"));
    }
    a.signals.check_same_shape(&b.signals, "psnr")?;
    let n = a.signals.data().len() as f64;
    let mse = a
        .signals
        .data()
        .iter()
        .zip(b.signals.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()).min(PSNR_CAP_DB)
}

fn nearest_sq(p: &[f64], set: &PointSet) -> f64 {
    (0..set.len())
        .map(|j| {
            let q = set.point(j);
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// `a` to `b` plus the same from `b` to `a`.
pub fn chamfer(a: &PointSet, b: &PointSet) -> f64 {
    let one_way = |x: &PointSet, y: &PointSet| {
        (0..x.len()).map(|i| nearest_sq(x.point(i), y)).sum::<f64>() / x.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

fn check_lists(generated: &[PointSet], reference: &[PointSet]) -> Result<()> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::contract("metric needs non-empty generated and reference lists"));
    }
    Ok(())
}

/// Fraction of reference sets that are the Chamfer-nearest reference of
/// some generated set. Ties go to the lowest reference index.
pub fn coverage(generated: &[PointSet], reference: &[PointSet]) -> Result<f64> {
    check_lists(generated, reference)?;
    let mut hit = vec![false; reference.len()];
    for g in generated {
        let mut best = (f64::INFINITY, 0);
        for (j, r) in reference.iter().enumerate() {
            let d = chamfer(g, r);
            if d < best.0 {
                best = (d, j);
            }
        }
        hit[best.1] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / reference.len() as f64)
}

/// Mean over reference sets of the smallest Chamfer distance to any
/// generated set.
pub fn mmd_chamfer(generated: &[PointSet], reference: &[PointSet]) -> Result<f64> {
    check_lists(generated, reference)?;
    let total: f64 = reference
        .iter()
        .map(|r| generated.iter().map(|g| chamfer(g, r)).fold(f64::INFINITY, f64::min))
        .sum();
    Ok(total / reference.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub t: usize,
    pub draws: usize,
    pub alpha_bar: f64,
    /// Per-row, per-channel empirical mean of `Y_t`.
    pub empirical_mean: Vec<f64>,
    pub empirical_var: Vec<f64>,
    pub expected_mean: Vec<f64>,
    pub expected_var: f64,
    /// Standardized error of the pooled residual mean.
    pub z_mean: f64,
    /// Standardized error of the pooled residual variance.
    pub z_var: f64,
}

impl MomentReport {
    pub fn within(&self, bound: f64) -> bool {
        self.z_mean.abs() <= bound && self.z_var.abs() <= bound
    }
}

/// Monte-Carlo check of the forward marginal at step `t`.
pub fn moment_diagnostics(
    y0: &SignalSet,
    t: usize,
    schedule: &NoiseSchedule,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<MomentReport> {
    if draws < 100 {
        return Err(Error::contract("moment diagnostics need at least 100 draws"));
    }
    let alpha_bar = schedule.alpha_bar(t)?;
    let expected_mean: Vec<f64> = y0.data().iter().map(|v| alpha_bar.sqrt() * v).collect();
    let expected_var = 1.0 - alpha_bar;
    let k = expected_mean.len();
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let (mut res_sum, mut res_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let eps = SignalSet::standard_normal(y0.len(), y0.dim(), rng);
        let yt = schedule.forward_diffuse(y0, t, &eps)?;
        for (i, &v) in yt.data().iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
            let r = v - expected_mean[i];
            res_sum += r;
            res_sq += r * r;
        }
    }
    let d = draws as f64;
    let empirical_mean: Vec<f64> = sum.iter().map(|s| s / d).collect();
    let empirical_var: Vec<f64> = sum_sq
        .iter()
        .zip(&empirical_mean)
        .map(|(sq, m)| (sq - d * m * m) / (d - 1.0))
        .collect();
    let total = d * k as f64;
    let z_mean = (res_sum / total) / (expected_var / total).sqrt();
    let z_var = (res_sq / total - expected_var) / (expected_var * (2.0 / total).sqrt());
    Ok(MomentReport {
        t,
        draws,
        alpha_bar,
        empirical_mean,
        empirical_var,
        expected_mean,
        expected_var,
        z_mean,
        z_var,
    })
}
