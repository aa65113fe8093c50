//! Files, datasets and run configuration.

mod bytes;
mod checkpoint;
mod config;
pub mod dataset;
mod pixmap;
mod tensor_file;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use dataset::{
    ingest_pixmaps, load_dataset, synthesize_dataset, synthesize_fields, Dataset, DatasetKind,
    LabeledField, Manifest,
};
pub use pixmap::{decode_pixmap, encode_pixmap, read_pixmap, write_pixmap};
pub use tensor_file::FieldTensor;
