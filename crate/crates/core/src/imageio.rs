//! PNG helpers for tiles (8-bit RGB), masks and heatmaps (8-bit gray).
//!
//! Provenance (`config_digest`, `seed`, ...) is stored in `tEXt` chunks so
//! every image carries the run that produced it.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelFormat {
    Rgb8,
    Gray8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub format: PixelFormat,
    pub data: Vec<u8>,
    pub text: Vec<(String, String)>,
}

pub fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    format: PixelFormat,
    data: &[u8],
    text: &[(&str, &str)],
) -> Result<(), ImageError> {
    let enc_err = |message: String| ImageError::Encode {
        path: path.to_path_buf(),
        message,
    };
    let file = File::create(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(match format {
        PixelFormat::Rgb8 => png::ColorType::Rgb,
        PixelFormat::Gray8 => png::ColorType::Grayscale,
    });
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    for (k, v) in text {
        enc.add_text_chunk(k.to_string(), v.to_string())
            .map_err(|e| enc_err(e.to_string()))?;
    }
    let mut writer = enc.write_header().map_err(|e| enc_err(e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| enc_err(e.to_string()))?;
    writer.finish().map_err(|e| enc_err(e.to_string()))
}

pub fn read_png(path: &Path) -> Result<RawImage, ImageError> {
    let dec_err = |message: String| ImageError::Decode {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| dec_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| dec_err(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(dec_err(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let format = match info.color_type {
        png::ColorType::Rgb => PixelFormat::Rgb8,
        png::ColorType::Grayscale => PixelFormat::Gray8,
        other => return Err(dec_err(format!("unsupported color type {other:?}"))),
    };
    buf.truncate(info.buffer_size());
    let text = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect();
    Ok(RawImage {
        width: info.width as usize,
        height: info.height as usize,
        format,
        data: buf,
        text,
    })
}
