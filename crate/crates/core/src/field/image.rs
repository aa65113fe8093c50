use crate::error::{Error, Result};
use crate::field::{FieldSample, MetricSpaceSpec, SignalSet};

/// 8-bit raster to a field with signals in `[-1, 1]`. `pixels` is
/// row-major `height × width × channels`.
pub fn field_from_image_u8(
    pixels: &[u8],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<FieldSample> {
    let values: Vec<f64> = pixels.iter().map(|&p| p as f64 / 127.5 - 1.0).collect();
    raster_field(values, height, width, channels, pixels.len())
}

/// Unit-range raster (`[0, 1]`) to a field with signals in `[-1, 1]`.
pub fn field_from_image_unit(
    pixels: &[f64],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<FieldSample> {
    let values: Vec<f64> = pixels.iter().map(|&p| 2.0 * p - 1.0).collect();
    raster_field(values, height, width, channels, pixels.len())
}

fn raster_field(
    values: Vec<f64>,
    height: usize,
    width: usize,
    channels: usize,
    len: usize,
) -> Result<FieldSample> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::contract("empty raster"));
    }
    if len != height * width * channels {
        return Err(Error::shape("raster", &[height, width, channels], &[len]));
    }
    let space = MetricSpaceSpec::Grid2d { height, width };
    FieldSample::on_space(space, SignalSet::new(height * width, channels, values)?)
}

/// Inverse of the 8-bit rescale, clamping out-of-range signals.
pub fn signal_to_u8(s: f64) -> u8 {
    ((s + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}
