use std::path::Path;

use crate::error::{Error, Result};
use crate::io::bytes::{put_f32s, put_u32, put_u64, read_file, write_file, Reader};

const MAGIC: &[u8; 4] = b"FTEN";
const TAG_F32: u32 = 1;
const MAX_RANK: u32 = 8;

/// Dense float tensor as stored on disk: `FTEN`, rank (u32), dims (u64
/// each), element tag (u32, 1 = f32), little-endian payload.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl FieldTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape("field_tensor", &shape, &[data.len()]));
        }
        Ok(FieldTensor { shape, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.shape.len() as u32);
        for &d in &self.shape {
            put_u64(&mut out, d as u64);
        }
        put_u32(&mut out, TAG_F32);
        put_f32s(&mut out, &self.data);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4, "magic")? != MAGIC {
            return Err(r.fail("not a field tensor file (bad magic)"));
        }
        let rank = r.u32("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(r.fail(format!("unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            if d == 0 || d > u32::MAX as u64 {
                return Err(r.fail(format!("invalid dimension {d}")));
            }
            shape.push(d as usize);
        }
        let tag = r.u32("element tag")?;
        if tag != TAG_F32 {
            return Err(r.fail(format!("unknown element tag {tag}")));
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.fail("shape overflows"))?;
        let data = r.f32s(n, "payload")?;
        r.finish()?;
        Ok(FieldTensor { shape, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        FieldTensor::decode(&read_file(path)?, path)
    }
}
