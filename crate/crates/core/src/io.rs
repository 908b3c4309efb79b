//! Image file formats.
//!
//! * `IMF1`: an ASCII header line `IMF1 <height> <width>\n` followed by
//!   `height * width` little-endian `f32` samples in row-major order.
//!   Round-trips are bit-exact.
//! * Binary PGM (`P5`), 8 or 16 bit. Samples map linearly from `[0, 1]`
//!   and are clamped to that range on write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::image::Image;

pub const IMF1_MAGIC: &str = "IMF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Imf1,
    Pgm8,
    Pgm16,
}

impl ImageFormat {
    /// `.pgm` selects 16-bit PGM; anything else is IMF1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::Pgm16,
            _ => ImageFormat::Imf1,
        }
    }
}

pub fn encode_imf1(img: &Image, out: &mut impl Write) -> Result<()> {
    write!(out, "{} {} {}\n", IMF1_MAGIC, img.height(), img.width())?;
    let mut buf = vec![0u8; img.len() * 4];
    LittleEndian::write_f32_into(img.as_slice(), &mut buf);
    out.write_all(&buf)?;
    Ok(())
}

pub fn decode_imf1(bytes: &[u8]) -> Result<Image> {
    let (img, used) = decode_imf1_prefix(bytes)?;
    if used < bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after IMF1 payload",
            bytes.len() - used
        )));
    }
    Ok(img)
}

/// Decodes one IMF1 block at the start of `bytes`, returning the image and
/// the number of bytes it occupied.
pub fn decode_imf1_prefix(bytes: &[u8]) -> Result<(Image, usize)> {
    let header_end = bytes.len().min(64);
    let nl = bytes[..header_end]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("IMF1 header line is not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::MalformedHeader("IMF1 header is not ASCII".into()))?;
    let mut fields = header.split(' ');
    let magic = fields.next().unwrap_or("");
    if magic != IMF1_MAGIC {
        return Err(Error::BadMagic {
            expected: IMF1_MAGIC.into(),
            found: magic.chars().take(8).collect(),
        });
    }
    let mut dim = |name: &str| -> Result<usize> {
        fields
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("IMF1 header is missing a valid {name}")))
    };
    let height = dim("height")?;
    let width = dim("width")?;
    if fields.next().is_some() {
        return Err(Error::MalformedHeader("trailing fields in IMF1 header".into()));
    }
    let count = height
        .checked_mul(width)
        .filter(|c| c.checked_mul(4).is_some())
        .ok_or_else(|| Error::MalformedHeader(format!("IMF1 dimensions {height}x{width} overflow")))?;
    let payload = &bytes[nl + 1..];
    if payload.len() < count * 4 {
        return Err(Error::Truncated {
            expected: count,
            found: payload.len() / 4,
        });
    }
    let mut data = vec![0f32; count];
    LittleEndian::read_f32_into(&payload[..count * 4], &mut data);
    Ok((Image::from_vec(height, width, data)?, nl + 1 + count * 4))
}

pub fn encode_pgm(img: &Image, sixteen_bit: bool, out: &mut impl Write) -> Result<()> {
    let maxval: u32 = if sixteen_bit { 65535 } else { 255 };
    write!(out, "P5\n{} {}\n{}\n", img.width(), img.height(), maxval)?;
    let quantize = |v: f32| -> u32 { (v.clamp(0.0, 1.0) as f64 * maxval as f64).round() as u32 };
    if sixteen_bit {
        let mut buf = vec![0u8; img.len() * 2];
        for (chunk, &v) in buf.chunks_exact_mut(2).zip(img.as_slice()) {
            BigEndian::write_u16(chunk, quantize(v) as u16);
        }
        out.write_all(&buf)?;
    } else {
        let buf: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v) as u8).collect();
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::BadMagic {
            expected: "P5".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut pos = 2;
    let next_token = |pos: &mut usize| -> Result<usize> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader("invalid PGM header field".into()))
    };
    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("PGM maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader("PGM header not followed by whitespace".into()));
    }
    pos += 1;
    let count = width * height;
    let raster = &bytes[pos..];
    let scale = 1.0 / maxval as f64;
    let data: Vec<f32> = if maxval < 256 {
        if raster.len() < count {
            return Err(Error::Truncated {
                expected: count,
                found: raster.len(),
            });
        }
        raster[..count].iter().map(|&b| (b as f64 * scale) as f32).collect()
    } else {
        if raster.len() < count * 2 {
            return Err(Error::Truncated {
                expected: count,
                found: raster.len() / 2,
            });
        }
        raster[..count * 2]
            .chunks_exact(2)
            .map(|c| (BigEndian::read_u16(c) as f64 * scale) as f32)
            .collect()
    };
    Image::from_vec(height, width, data)
}

/// Reads an IMF1 or PGM file, detected from its magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.starts_with(IMF1_MAGIC.as_bytes()) {
        decode_imf1(&bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else {
        Err(Error::UnsupportedFormat(path.to_path_buf()))
    }
}

/// Writes `img` in the format implied by the file extension.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_image_as(img, path, ImageFormat::from_path(path))
}

pub fn write_image_as(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ImageFormat::Imf1 => encode_imf1(img, &mut out)?,
        ImageFormat::Pgm8 => encode_pgm(img, false, &mut out)?,
        ImageFormat::Pgm16 => encode_pgm(img, true, &mut out)?,
    }
    out.flush()?;
    Ok(())
}
