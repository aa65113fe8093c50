//! Metric spaces, coordinate–signal pair sets, and coordinate encodings.

mod encoding;
mod image;
mod sets;
mod space;
mod stereo;

pub use encoding::fourier_encode;
pub(crate) use encoding::encode_scalar_into;
pub use image::{field_from_image_u8, field_from_image_unit, signal_to_u8};
pub use sets::{
    subsample_pairs, ContextSet, CoordinateSet, FieldSample, Matrix, PairSet, QuerySet, SignalSet,
};
pub use space::{cell_center, grid_coordinates, sphere_coordinates, MetricSpaceSpec};
pub use stereo::{plane_to_sphere, sphere_to_plane, stereographic_lift, Interpolation, OUTSIDE_FILL};
