use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{field_from_image_u8, signal_to_u8, FieldSample, MetricSpaceSpec};
use crate::io::bytes::{read_file, write_file};

/// Binary portable pixmap bytes: P5 for one channel, P6 for three.
pub fn encode_pixmap(field: &FieldSample) -> Result<Vec<u8>> {
    let MetricSpaceSpec::Grid2d { height, width } = field.space else {
        return Err(Error::contract(format!("pixmaps need a 2D grid field, got {}", field.space)));
    };
    let magic = match field.signal_dim() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::contract(format!("pixmaps need 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend(field.signals.data().iter().map(|&s| signal_to_u8(s)));
    Ok(out)
}

pub fn write_pixmap(field: &FieldSample, path: &Path) -> Result<()> {
    write_file(path, &encode_pixmap(field)?)
}

/// Parses a binary P5/P6 file with maxval 255 into a grid field.
pub fn decode_pixmap(bytes: &[u8], path: &Path) -> Result<FieldSample> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated pixmap header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(bad("not a binary P5/P6 pixmap")),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed header number"));
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit pixmaps (maxval 255) are supported"));
    }
    let need = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(bad(&format!("raster has {} bytes, expected {need}", raster.len())));
    }
    field_from_image_u8(raster, height, width, channels).map_err(|e| bad(&e.to_string()))
}

pub fn read_pixmap(path: &Path) -> Result<FieldSample> {
    decode_pixmap(&read_file(path)?, path)
}
