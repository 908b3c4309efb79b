//! `CNN1` model files.
//!
//! ```text
//! magic    "CNN1"
//! version  u32 (1)
//! layers   u32
//! per layer:
//!   out, in, kh, kw   u32 each
//!   relu              u8
//!   weights           f32 x (out*in*kh*kw), order [out][in][kh][kw]
//!   biases            f32 x out
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::layer::ConvLayer;
use super::model::{CnnModel, OUTPUT_WINDOW};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CNN1";
pub const MODEL_VERSION: u32 = 1;

/// Bytes taken by the file header plus the per-layer shape records.
pub fn header_len(layers: usize) -> usize {
    4 + 4 + 4 + layers * (4 * 4 + 1)
}

pub fn encode_model(model: &CnnModel, out: &mut impl Write) -> Result<()> {
    out.write_all(MODEL_MAGIC)?;
    out.write_u32::<LittleEndian>(MODEL_VERSION)?;
    out.write_u32::<LittleEndian>(model.layers().len() as u32)?;
    for layer in model.layers() {
        for dim in layer.shape() {
            out.write_u32::<LittleEndian>(dim as u32)?;
        }
        out.write_u8(layer.relu as u8)?;
        for &w in layer.weights.iter().chain(&layer.biases) {
            out.write_f32::<LittleEndian>(w)?;
        }
    }
    Ok(())
}

fn truncated(e: std::io::Error, expected: usize, found: usize) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated { expected, found }
    } else {
        Error::Io(e)
    }
}

/// Decodes a model. Its input window is set so that it produces the
/// standard 14x14 output.
pub fn decode_model(mut input: impl Read) -> Result<CnnModel> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| truncated(e, 4, 0))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: "CNN1".into(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = input
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedHeader("missing version".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = input
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::MalformedHeader("missing layer count".into()))?;
    if count == 0 || count > 64 {
        return Err(Error::MalformedHeader(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count as usize);
    for i in 0..count {
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = input
                .read_u32::<LittleEndian>()
                .map_err(|_| Error::MalformedHeader(format!("layer {i} shape is cut short")))?
                as usize;
        }
        let [out_c, in_c, kh, kw] = dims;
        if dims.iter().any(|&d| d == 0 || d > 4096) {
            return Err(Error::MalformedHeader(format!("layer {i} has invalid shape {dims:?}")));
        }
        let relu = match input
            .read_u8()
            .map_err(|_| Error::MalformedHeader(format!("layer {i} is missing its activation flag")))?
        {
            0 => false,
            1 => true,
            other => {
                return Err(Error::MalformedHeader(format!("layer {i} activation flag {other}")))
            }
        };
        let mut layer = ConvLayer::zeros(out_c, in_c, kh, kw, relu);
        let n = layer.weights.len() + layer.biases.len();
        let mut buf = vec![0u8; n * 4];
        let mut filled = 0;
        while filled < buf.len() {
            match input.read(&mut buf[filled..])? {
                0 => {
                    return Err(Error::Truncated {
                        expected: n,
                        found: filled / 4,
                    })
                }
                k => filled += k,
            }
        }
        let mut values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for w in layer.weights.iter_mut() {
            *w = values.next().unwrap();
        }
        for b in layer.biases.iter_mut() {
            *b = values.next().unwrap();
        }
        layers.push(layer);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::MalformedHeader("trailing bytes after the last layer".into()));
    }
    let receptive = layers.iter().map(|l| l.kh - 1).sum::<usize>() + 1;
    CnnModel::new(layers, receptive + OUTPUT_WINDOW - 1)
}

pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    encode_model(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    let bytes = std::fs::read(path)?;
    decode_model(bytes.as_slice())
}
