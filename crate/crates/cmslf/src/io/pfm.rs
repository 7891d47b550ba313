//! Portable FloatMap (PFM) reader/writer.
//!
//! `Pf` is single channel, `PF` is 3-channel. Scanlines are stored bottom to
//! top; a negative scale marks little-endian floats. Bit-exact for the f32
//! maps this crate produces.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

pub fn write_pfm(path: &Path, image: &Image) -> Result<()> {
    let channels = image.channels();
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidConfig(format!(
            "PFM stores 1 or 3 channels, image has {channels}"
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    let tag = if channels == 1 { "Pf" } else { "PF" };
    write!(out, "{tag}\n{} {}\n-1.0\n", image.width(), image.height())?;
    // Bottom-to-top scanline order, little-endian.
    for v in (0..image.height()).rev() {
        for u in 0..image.width() {
            for c in 0..channels {
                out.write_all(&image.get(u, v, c).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn read_token(reader: &mut impl Read, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            return Err(parse_err(path, "unexpected end of header"));
        }
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
    }
    String::from_utf8(token).map_err(|_| parse_err(path, "non-UTF8 header token"))
}

fn parse_err(path: &Path, message: &str) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: message.into(),
    }
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let mut reader = BufReader::new(
        File::open(path).map_err(|_| Error::MissingFile(path.display().to_string()))?,
    );
    let tag = read_token(&mut reader, path)?;
    let channels = match tag.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(parse_err(path, &format!("bad PFM tag {other:?}"))),
    };
    let width: usize = read_token(&mut reader, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad width"))?;
    let height: usize = read_token(&mut reader, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad height"))?;
    let scale: f64 = read_token(&mut reader, path)?
        .parse()
        .map_err(|_| parse_err(path, "bad scale"))?;
    if width == 0 || height == 0 || width.saturating_mul(height) > (1 << 30) {
        return Err(parse_err(path, "unreasonable dimensions"));
    }
    let little_endian = scale < 0.0;
    let mut data = vec![0u8; width * height * channels * 4];
    reader.read_exact(&mut data).map_err(|_| {
        parse_err(path, "truncated pixel data")
    })?;
    let mut image = Image::new(width, height, channels);
    let mut offset = 0;
    for v in (0..height).rev() {
        for u in 0..width {
            for c in 0..channels {
                let bytes: [u8; 4] = data[offset..offset + 4].try_into().unwrap();
                let value = if little_endian {
                    f32::from_le_bytes(bytes)
                } else {
                    f32::from_be_bytes(bytes)
                };
                image.set(u, v, c, value);
                offset += 4;
            }
        }
    }
    Ok(image)
}
