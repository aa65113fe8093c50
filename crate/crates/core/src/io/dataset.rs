use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{
    cell_center, stereographic_lift, FieldSample, Interpolation, MetricSpaceSpec, SignalSet,
};
use crate::io::bytes::{read_file, write_file};
use crate::io::pixmap::read_pixmap;
use crate::io::FieldTensor;

pub const MANIFEST_NAME: &str = "manifest.toml";

/// Cluster centers of `two_mode_colors`, per channel.
pub const TWO_MODE_MEANS: [f64; 2] = [-0.6, 0.6];
pub const TWO_MODE_STD: f64 = 0.1;
/// Blob width in cells for the blob datasets.
pub const BLOB_SIGMA_CELLS: f64 = 2.0;
pub const SPHERE_BANDWIDTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// 8×8 RGB solid colors; each field picks one of two clusters and
    /// draws its per-channel color around that cluster's mean.
    TwoModeColors,
    /// 16×16 scalar fields with one Gaussian bump peaking at a random cell.
    #[serde(rename = "gaussian_blobs_2d")]
    GaussianBlobs2d,
    /// 16×16 ±1 checkerboards with square size 2, 4 or 8 and random phase.
    Checkerboards,
    /// 16³ ±1 occupancy of a centered sphere (label 0) or cube (label 1).
    #[serde(rename = "spheres_vs_cubes_3d")]
    SpheresVsCubes3d,
    /// Blob images lifted onto a bandwidth-8 sphere grid.
    SphericalBlobs,
    /// Rasters read from external pixmaps.
    Ingested,
    /// Samples written by the sampler.
    Generated,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        let kind: DatasetKind = toml::Value::String(s.to_string())
            .try_into()
            .map_err(|_| Error::Config(format!("unknown dataset kind {s:?}")))?;
        if matches!(kind, DatasetKind::Ingested | DatasetKind::Generated) {
            return Err(Error::Config(format!("{s} datasets cannot be synthesized")));
        }
        Ok(kind)
    }

    pub fn space(self) -> MetricSpaceSpec {
        match self {
            DatasetKind::TwoModeColors => MetricSpaceSpec::Grid2d { height: 8, width: 8 },
            DatasetKind::GaussianBlobs2d
            | DatasetKind::Checkerboards
            | DatasetKind::Ingested
            | DatasetKind::Generated => {
                MetricSpaceSpec::Grid2d { height: 16, width: 16 }
            }
            DatasetKind::SpheresVsCubes3d => MetricSpaceSpec::Grid3d {
                depth: 16,
                height: 16,
                width: 16,
            },
            DatasetKind::SphericalBlobs => MetricSpaceSpec::Sphere {
                bandwidth: SPHERE_BANDWIDTH,
            },
        }
    }

    pub fn signal_dim(self) -> usize {
        match self {
            DatasetKind::TwoModeColors => 3,
            _ => 1,
        }
    }
}

/// One synthetic field plus its ground-truth label (mode, size or class).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledField {
    pub field: FieldSample,
    pub label: u32,
}

pub fn two_mode_colors(rng: &mut impl Rng) -> Result<LabeledField> {
    let label = rng.random_range(0..2u32);
    let mean = TWO_MODE_MEANS[label as usize];
    let color: Vec<f64> = (0..3)
        .map(|_| (mean + TWO_MODE_STD * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0))
        .collect();
    let space = DatasetKind::TwoModeColors.space();
    let n = space.num_points();
    let data = (0..n).flat_map(|_| color.iter().copied()).collect();
    Ok(LabeledField {
        field: FieldSample::on_space(space, SignalSet::new(n, 3, data)?)?,
        label,
    })
}

/// `2·exp(−d²/2σ²) − 1` with `d` measured in cells from `(cy, cx)`.
pub fn blob_image(size: usize, cy: usize, cx: usize, sigma_cells: f64) -> Result<FieldSample> {
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let d2 = (y as f64 - cy as f64).powi(2) + (x as f64 - cx as f64).powi(2);
            data.push(2.0 * (-d2 / (2.0 * sigma_cells * sigma_cells)).exp() - 1.0);
        }
    }
    let space = MetricSpaceSpec::Grid2d { height: size, width: size };
    FieldSample::on_space(space, SignalSet::new(size * size, 1, data)?)
}

pub fn gaussian_blob(rng: &mut impl Rng) -> Result<LabeledField> {
    let cy = rng.random_range(0..16);
    let cx = rng.random_range(0..16);
    Ok(LabeledField {
        field: blob_image(16, cy, cx, BLOB_SIGMA_CELLS)?,
        label: (cy * 16 + cx) as u32,
    })
}

pub fn checkerboard(rng: &mut impl Rng) -> Result<LabeledField> {
    let square = [2usize, 4, 8][rng.random_range(0..3)];
    let phase = rng.random_range(0..2usize);
    let data = (0..256)
        .map(|i| {
            let (y, x) = (i / 16, i % 16);
            if (y / square + x / square + phase) % 2 == 0 { 1.0 } else { -1.0 }
        })
        .collect();
    let space = DatasetKind::Checkerboards.space();
    Ok(LabeledField {
        field: FieldSample::on_space(space, SignalSet::new(256, 1, data)?)?,
        label: square as u32,
    })
}

/// Sphere radius is drawn from `[0.4, 0.8]`, cube half-side from
/// `[0.3, 0.6]`, both in coordinate units where the grid spans `[-1, 1]`.
pub fn sphere_or_cube(rng: &mut impl Rng) -> Result<LabeledField> {
    let label = rng.random_range(0..2u32);
    let size = if label == 0 {
        rng.random_range(0.4..=0.8)
    } else {
        rng.random_range(0.3..=0.6)
    };
    occupancy_solid(label, size)
}

/// Occupancy of a centered sphere (`label` 0, `size` = radius) or cube
/// (`label` 1, `size` = half-side) on the 16³ grid.
pub fn occupancy_solid(label: u32, size: f64) -> Result<LabeledField> {
    let space = DatasetKind::SpheresVsCubes3d.space();
    let n = 16;
    let mut data = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [cell_center(x, n), cell_center(y, n), cell_center(z, n)];
                let inside = if label == 0 {
                    p.iter().map(|v| v * v).sum::<f64>() <= size * size
                } else {
                    p.iter().all(|v| v.abs() <= size)
                };
                data.push(if inside { 1.0 } else { -1.0 });
            }
        }
    }
    Ok(LabeledField {
        field: FieldSample::on_space(space, SignalSet::new(n * n * n, 1, data)?)?,
        label,
    })
}

pub fn spherical_blob(rng: &mut impl Rng) -> Result<LabeledField> {
    let blob = gaussian_blob(rng)?;
    Ok(LabeledField {
        field: stereographic_lift(&blob.field, SPHERE_BANDWIDTH, Interpolation::Bilinear)?,
        label: blob.label,
    })
}

pub fn synthesize_field(kind: DatasetKind, rng: &mut impl Rng) -> Result<LabeledField> {
    match kind {
        DatasetKind::TwoModeColors => two_mode_colors(rng),
        DatasetKind::GaussianBlobs2d => gaussian_blob(rng),
        DatasetKind::Checkerboards => checkerboard(rng),
        DatasetKind::SpheresVsCubes3d => sphere_or_cube(rng),
        DatasetKind::SphericalBlobs => spherical_blob(rng),
        DatasetKind::Ingested | DatasetKind::Generated => {
            Err(Error::contract("only synthetic kinds can be synthesized"))
        }
    }
}

/// In-memory dataset, fields drawn sequentially from one seeded stream.
pub fn synthesize_fields(kind: DatasetKind, n: usize, seed: u64) -> Result<Vec<LabeledField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synthesize_field(kind, &mut rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub label: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: DatasetKind,
    pub seed: u64,
    pub signal_dim: usize,
    pub space: MetricSpaceSpec,
    pub files: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub fields: Vec<FieldSample>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<u32> {
        self.manifest.files.iter().map(|f| f.label).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tensor_of(field: &FieldSample) -> Result<FieldTensor> {
    let mut shape = field.space.grid_shape();
    shape.push(field.signal_dim());
    FieldTensor::new(shape, field.signals.data().iter().map(|&v| v as f32).collect())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes fields as tensor files plus a hashed manifest.
pub fn write_dataset(
    dir: &Path,
    kind: DatasetKind,
    seed: u64,
    fields: &[LabeledField],
) -> Result<Manifest> {
    let first = fields
        .first()
        .ok_or_else(|| Error::contract("cannot write an empty dataset"))?;
    create_dir(dir)?;
    let space = first.field.space;
    let signal_dim = first.field.signal_dim();
    let mut files = Vec::with_capacity(fields.len());
    for (i, lf) in fields.iter().enumerate() {
        if lf.field.space != space || lf.field.signal_dim() != signal_dim {
            return Err(Error::contract(format!("field {i} differs in space or channels")));
        }
        let name = format!("field_{i:05}.ften");
        let bytes = tensor_of(&lf.field)?.encode();
        write_file(&dir.join(&name), &bytes)?;
        files.push(ManifestEntry {
            file: name,
            sha256: sha256_hex(&bytes),
            label: lf.label,
        });
    }
    let manifest = Manifest {
        kind,
        seed,
        signal_dim,
        space,
        files,
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_NAME), text.as_bytes())?;
    Ok(manifest)
}

pub fn synthesize_dataset(kind: DatasetKind, n: usize, seed: u64, dir: &Path) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::contract("dataset count must be at least 1"));
    }
    let fields = synthesize_fields(kind, n, seed)?;
    write_dataset(dir, kind, seed, &fields)
}

/// Reads every file listed in the manifest, verifying its hash and shape.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = String::from_utf8(read_file(&manifest_path)?)
        .map_err(|_| Error::format(&manifest_path, "manifest is not UTF-8"))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.message()))?;
    manifest
        .space
        .validate()
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.files.is_empty() {
        return Err(Error::format(&manifest_path, "manifest lists no files"));
    }
    let mut expected_shape = manifest.space.grid_shape();
    expected_shape.push(manifest.signal_dim);
    let mut fields = Vec::with_capacity(manifest.files.len());
    for entry in &manifest.files {
        let path: PathBuf = dir.join(&entry.file);
        let bytes = read_file(&path)?;
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 {
            return Err(Error::format(
                &path,
                format!("content hash {digest} does not match manifest {}", entry.sha256),
            ));
        }
        let tensor = FieldTensor::decode(&bytes, &path)?;
        if tensor.shape != expected_shape {
            return Err(Error::format(
                &path,
                format!("shape {:?}, manifest implies {:?}", tensor.shape, expected_shape),
            ));
        }
        let n = manifest.space.num_points();
        let signals = SignalSet::new(
            n,
            manifest.signal_dim,
            tensor.data.iter().map(|&v| v as f64).collect(),
        )?;
        fields.push(FieldSample::on_space(manifest.space, signals)?);
    }
    Ok(Dataset { manifest, fields })
}

/// Builds a dataset from same-sized P5/P6 files.
pub fn ingest_pixmaps(inputs: &[PathBuf], dir: &Path) -> Result<Manifest> {
    let fields = inputs
        .iter()
        .map(|p| read_pixmap(p).map(|field| LabeledField { field, label: 0 }))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(dir, DatasetKind::Ingested, 0, &fields)
}
